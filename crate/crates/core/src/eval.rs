//! Metrics and the experiment drivers behind the findings reports.
//!
//! The positive class is "matched" throughout. Every driver trains its
//! matchers once per root seed on the shared train/val split and streams
//! each paradigm test set through all of them.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{BenchmarkBundle, BenchmarkSet, Paradigm, SplitPlan};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::Prepared;
use crate::matcher::{self, Hyper, MatcherKind, MatcherModel};
use crate::pairs::{ratio_holds, PairSet};

pub const REPORT_SCHEMA: &str = "embench.report/1";
pub const CURVE_SCHEMA: &str = "embench.curve/1";
/// Category label of rows computed over every pair.
pub const ALL: &str = "all";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let f1_den = 2 * self.tp + self.fp + self.fn_;
        Metrics {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, f1_den),
            confusion: *self,
            degenerate: f1_den == 0,
        }
    }
}

/// Precision, recall and F1 of the matched class. F1 is `2tp / (2tp + fp + fn)`,
/// which equals `2PR / (P + R)`; it is 0 and flagged degenerate when there
/// are neither predicted nor gold positives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub degenerate: bool,
}

/// Scores `(left_id, right_id, decision)` triples against `gold`. Pair
/// orientation is ignored; every gold pair needs exactly one decision.
pub fn score<'a>(decisions: impl IntoIterator<Item = (&'a str, &'a str, bool)>, gold: &PairSet) -> Result<Metrics> {
    let mut pending: HashMap<(&str, &str), bool> = gold.pairs.iter().map(|p| (p.key(), p.label.is_matched())).collect();
    let mut confusion = Confusion::default();
    let mut extra = 0;
    for (l, r, decision) in decisions {
        let key = if l <= r { (l, r) } else { (r, l) };
        match pending.remove(&key) {
            Some(label) => confusion.add(decision, label),
            None => extra += 1,
        }
    }
    if !pending.is_empty() || extra > 0 {
        return Err(Error::CoverageMismatch {
            missing: pending.len(),
            extra,
        });
    }
    Ok(confusion.metrics())
}

pub fn score_predictions(predictions: &[matcher::Prediction], gold: &PairSet) -> Result<Metrics> {
    score(
        predictions.iter().map(|p| (p.left_id.as_str(), p.right_id.as_str(), p.decision)),
        gold,
    )
}

/// Confusion per matcher and category (plus [`ALL`]) on one test set.
pub type CellCounts = BTreeMap<(MatcherKind, String), Confusion>;

/// Streams `test` through `models`, all of which must share one feature
/// space. Pairs whose records differ in category only count towards [`ALL`].
pub fn evaluate_models(models: &[&MatcherModel], test: &PairSet, records: &Corpus) -> Result<CellCounts> {
    let Some(first) = models.first() else {
        return Ok(CellCounts::new());
    };
    if models.iter().any(|m| m.space != first.space) {
        return Err(Error::Config("models evaluated together must share a feature space".into()));
    }
    let prepared = Prepared::new(records, &first.space);
    let need_text = models.iter().any(|m| m.kind != MatcherKind::Visual);
    let need_visual = models.iter().any(|m| m.kind != MatcherKind::Text);
    let categories: Vec<String> = records.categories();
    let cat_index: HashMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let n_slots = categories.len() + 1;

    let counts = test
        .pairs
        .par_chunks(4096)
        .map(|chunk| -> Result<Vec<Confusion>> {
            let mut local = vec![Confusion::default(); models.len() * n_slots];
            for p in chunk {
                let pos = |id: &str| {
                    records.position(id).ok_or_else(|| Error::DanglingReference {
                        split: "test".into(),
                        record_id: id.to_string(),
                    })
                };
                let (a, b) = (pos(&p.left_id)?, pos(&p.right_id)?);
                let text = if need_text { prepared.text(a, b) } else { Vec::new() };
                let visual = if need_visual { prepared.visual(a, b) } else { None };
                let (ca, cb) = (&records.records()[a].category, &records.records()[b].category);
                let slot = if ca == cb { Some(cat_index[ca.as_str()]) } else { None };
                let gold = p.label.is_matched();
                for (mi, m) in models.iter().enumerate() {
                    let s = m.score_raw(&text, visual.as_deref()).map_err(|e| match e {
                        Error::MissingModality { kind, .. } => Error::MissingModality {
                            kind,
                            record_id: p.left_id.to_string(),
                        },
                        other => other,
                    })?;
                    let d = m.decide(s.score);
                    local[mi * n_slots].add(d, gold);
                    if let Some(c) = slot {
                        local[mi * n_slots + 1 + c].add(d, gold);
                    }
                }
            }
            Ok(local)
        })
        .try_reduce(
            || vec![Confusion::default(); models.len() * n_slots],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y));
                Ok(a)
            },
        )?;

    let mut out = CellCounts::new();
    for (mi, m) in models.iter().enumerate() {
        out.insert((m.kind, ALL.to_string()), counts[mi * n_slots]);
        for (ci, c) in categories.iter().enumerate() {
            out.insert((m.kind, c.clone()), counts[mi * n_slots + 1 + ci]);
        }
    }
    Ok(out)
}

/// Matchers trained once on a plan's shared split.
pub struct Experiment {
    pub set: BenchmarkSet,
    pub models: BTreeMap<MatcherKind, MatcherModel>,
}

/// One evaluated test set.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub paradigm: Paradigm,
    pub k_test: f64,
    pub n_matched: usize,
    pub n_mismatched: usize,
    /// The requested ratio could not be met; see the set's warnings.
    pub shortfall: bool,
    pub warnings: Vec<String>,
    pub counts: CellCounts,
}

impl Experiment {
    pub fn new(corpus: Arc<Corpus>, plan: SplitPlan, hyper: &Hyper, kinds: &[MatcherKind]) -> Result<Self> {
        let set = BenchmarkSet::new(corpus, plan)?;
        let models = kinds
            .iter()
            .map(|&kind| {
                matcher::train(kind, &set.shared.train, &set.shared.val, &set.corpus, hyper).map(|m| (kind, m))
            })
            .collect::<Result<_>>()?;
        Ok(Self { set, models })
    }

    pub fn evaluate(&self, paradigm: Paradigm, k: f64, kinds: &[MatcherKind]) -> Result<CellResult> {
        let test = self.set.test_set(paradigm, k);
        let models: Vec<&MatcherModel> = kinds
            .iter()
            .map(|k| self.models.get(k).ok_or_else(|| Error::Config(format!("matcher {k} was not trained"))))
            .collect::<Result<_>>()?;
        let counts = evaluate_models(&models, &test, &self.set.corpus)?;
        Ok(CellResult {
            paradigm,
            k_test: k,
            n_matched: test.n_matched,
            n_mismatched: test.n_mismatched,
            shortfall: !ratio_holds(test.n_matched, test.n_mismatched, k),
            warnings: test.warnings.clone(),
            counts,
        })
    }
}

/// Scores trained models on a bundle's test set, overall and per category.
/// Every model must have been trained on pairs over the bundle's corpus.
pub fn evaluate_bundle(models: &[MatcherModel], bundle: &BenchmarkBundle, mut inputs: BTreeMap<String, String>) -> Result<EvalReport> {
    let expected = &bundle.manifest.corpus_hash;
    if let Some(m) = models.iter().find(|m| &m.corpus_hash != expected) {
        return Err(Error::ProvenanceMismatch {
            expected: expected.clone(),
            found: m.corpus_hash.clone(),
        });
    }
    let test = &bundle.test;
    let k_test = bundle.manifest.k_test;
    let cell = CellResult {
        paradigm: bundle.paradigm,
        k_test,
        n_matched: test.n_matched,
        n_mismatched: test.n_mismatched,
        shortfall: !ratio_holds(test.n_matched, test.n_mismatched, k_test),
        warnings: test.warnings.clone(),
        counts: models
            .iter()
            .map(|m| evaluate_models(&[m], test, &bundle.records))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
    };
    let mut categories = vec![ALL.to_string()];
    categories.extend(bundle.records.categories());
    let rows = models
        .iter()
        .flat_map(|m| {
            let cell = &cell;
            categories
                .iter()
                .map(move |c| row_from(&[cell], bundle.paradigm, c, m.kind, bundle.manifest.plan.k_train, k_test))
        })
        .collect();
    inputs.insert("corpus".to_string(), expected.clone());
    let mut seeds: Vec<u64> = models.iter().map(|m| m.hyper.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        title: format!("F1 on the {} benchmark", bundle.paradigm.heading()),
        seeds,
        config: serde_json::json!({
            "paradigm": bundle.paradigm,
            "category": bundle.manifest.category,
            "k_test": k_test,
            "hyper": models.iter().map(|m| &m.hyper).collect::<Vec<_>>(),
        }),
        inputs,
        rows,
        warnings: bundle.manifest.warnings.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub paradigm: Paradigm,
    pub category: String,
    pub matcher: MatcherKind,
    pub k_train: f64,
    pub k_test: f64,
    /// Means over seeds.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_per_seed: Vec<f64>,
    /// Summed over seeds.
    pub confusion: Confusion,
    pub degenerate: bool,
    pub shortfall: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub title: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    /// Digests of the inputs the report was computed from.
    pub inputs: BTreeMap<String, String>,
    pub rows: Vec<EvalRow>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn row(&self, paradigm: Paradigm, category: &str, matcher: MatcherKind, k_test: f64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.paradigm == paradigm && r.category == category && r.matcher == matcher && r.k_test == k_test)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TestRatio,
    TrainAndTestRatio,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" | "test_ratio" => Ok(SweepAxis::TestRatio),
            "train_and_test" | "train_and_test_ratio" => Ok(SweepAxis::TrainAndTestRatio),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub f1: f64,
    pub f1_per_seed: Vec<f64>,
    pub shortfall: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub paradigm: Paradigm,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub schema: String,
    pub axis: SweepAxis,
    pub matcher: MatcherKind,
    pub ks: Vec<f64>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub curves: Vec<Curve>,
    pub warnings: Vec<String>,
}

impl SweepCurve {
    pub fn curve(&self, paradigm: Paradigm) -> Option<&Curve> {
        self.curves.iter().find(|c| c.paradigm == paradigm)
    }
}

/// Shared settings of the findings drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub plan: SplitPlan,
    pub hyper: Hyper,
    /// Root seeds; each one seeds the plan and the matcher.
    pub seeds: Vec<u64>,
    pub ks: Vec<f64>,
    pub balanced_k: f64,
    pub imbalanced_k: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            plan: SplitPlan::default(),
            hyper: Hyper::default(),
            seeds: vec![1, 2, 3, 4, 5],
            ks: vec![3.0, 10.0, 30.0, 100.0],
            balanced_k: 3.0,
            imbalanced_k: 100.0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.ks.is_empty() || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ks must be non-empty and strictly increasing".into()));
        }
        self.hyper.validate()?;
        self.plan.validate()
    }

    fn for_seed(&self, seed: u64) -> (SplitPlan, Hyper) {
        let plan = SplitPlan {
            seed,
            ..self.plan.clone()
        };
        let hyper = Hyper {
            seed,
            ..self.hyper.clone()
        };
        (plan, hyper)
    }
}

/// Evaluated cells of one root seed, keyed by paradigm and `k` bits.
type SeedCells = BTreeMap<(Paradigm, u64), CellResult>;

fn run_seed(corpus: &Arc<Corpus>, cfg: &StudyConfig, seed: u64, kinds: &[MatcherKind], cells: &[(Paradigm, f64, Vec<MatcherKind>)]) -> Result<SeedCells> {
    let (plan, hyper) = cfg.for_seed(seed);
    log::info!("seed {seed}: training {kinds:?}");
    let exp = Experiment::new(corpus.clone(), plan, &hyper, kinds)?;
    let mut out = SeedCells::new();
    for (paradigm, k, which) in cells {
        log::info!("seed {seed}: evaluating {paradigm} at k={k}");
        out.insert((*paradigm, k.to_bits()), exp.evaluate(*paradigm, *k, which)?);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn row_from(per_seed: &[&CellResult], paradigm: Paradigm, category: &str, kind: MatcherKind, k_train: f64, k_test: f64) -> EvalRow {
    let metrics: Vec<Metrics> = per_seed
        .iter()
        .map(|c| c.counts.get(&(kind, category.to_string())).copied().unwrap_or_default().metrics())
        .collect();
    let mut confusion = Confusion::default();
    metrics.iter().for_each(|m| confusion.merge(&m.confusion));
    let f1s: Vec<f64> = metrics.iter().map(|m| m.f1).collect();
    EvalRow {
        paradigm,
        category: category.to_string(),
        matcher: kind,
        k_train,
        k_test,
        precision: mean(&metrics.iter().map(|m| m.precision).collect::<Vec<_>>()),
        recall: mean(&metrics.iter().map(|m| m.recall).collect::<Vec<_>>()),
        f1: mean(&f1s),
        f1_per_seed: f1s,
        confusion,
        degenerate: metrics.iter().any(|m| m.degenerate),
        shortfall: per_seed.iter().any(|c| c.shortfall),
    }
}

fn collect_warnings(all: &[SeedCells]) -> Vec<String> {
    let mut w: Vec<String> = all.iter().flat_map(|s| s.values()).flat_map(|c| c.warnings.iter().cloned()).collect();
    w.sort();
    w.dedup();
    w
}

fn inputs(corpus: &Corpus) -> BTreeMap<String, String> {
    BTreeMap::from([("corpus".to_string(), corpus.content_hash().to_string())])
}

fn config_echo(cfg: &StudyConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn findings_1_report(corpus: &Corpus, cfg: &StudyConfig, all: &[SeedCells]) -> EvalReport {
    let k = cfg.balanced_k;
    let mut categories = vec![ALL.to_string()];
    categories.extend(corpus.categories());
    let mut rows = Vec::new();
    for p in Paradigm::ALL {
        let per_seed: Vec<&CellResult> = all.iter().map(|s| &s[&(p, k.to_bits())]).collect();
        for c in &categories {
            rows.push(row_from(&per_seed, p, c, MatcherKind::Text, cfg.plan.k_train, k));
        }
    }
    EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        title: "F1 on four benchmarks (text matcher)".to_string(),
        seeds: cfg.seeds.clone(),
        config: config_echo(cfg),
        inputs: inputs(corpus),
        rows,
        warnings: collect_warnings(all),
    }
}

fn curve_from(cfg: &StudyConfig, corpus: &Corpus, axis: SweepAxis, lookup: impl Fn(usize, Paradigm, f64) -> CellResult, warnings: Vec<String>) -> SweepCurve {
    let curves = Paradigm::ALL
        .into_iter()
        .map(|p| Curve {
            paradigm: p,
            points: cfg
                .ks
                .iter()
                .map(|&k| {
                    let per_seed: Vec<CellResult> = (0..cfg.seeds.len()).map(|s| lookup(s, p, k)).collect();
                    let refs: Vec<&CellResult> = per_seed.iter().collect();
                    let row = row_from(&refs, p, ALL, MatcherKind::Text, cfg.plan.k_train, k);
                    SweepPoint {
                        k,
                        f1: row.f1,
                        f1_per_seed: row.f1_per_seed,
                        shortfall: row.shortfall,
                    }
                })
                .collect(),
        })
        .collect();
    SweepCurve {
        schema: CURVE_SCHEMA.to_string(),
        axis,
        matcher: MatcherKind::Text,
        ks: cfg.ks.clone(),
        seeds: cfg.seeds.clone(),
        config: config_echo(cfg),
        inputs: inputs(corpus),
        curves,
        warnings,
    }
}

fn findings_3_report(corpus: &Corpus, cfg: &StudyConfig, all: &[SeedCells]) -> EvalReport {
    let mut rows = Vec::new();
    for k in [cfg.balanced_k, cfg.imbalanced_k] {
        for p in Paradigm::ALL {
            let per_seed: Vec<&CellResult> = all.iter().map(|s| &s[&(p, k.to_bits())]).collect();
            for kind in MatcherKind::ALL {
                rows.push(row_from(&per_seed, p, ALL, kind, cfg.plan.k_train, k));
            }
        }
    }
    EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        title: "F1 of text, visual and fused matchers".to_string(),
        seeds: cfg.seeds.clone(),
        config: config_echo(cfg),
        inputs: inputs(corpus),
        rows,
        warnings: collect_warnings(all),
    }
}

fn run_cells(corpus: &Arc<Corpus>, cfg: &StudyConfig, kinds: &[MatcherKind], cells: &[(Paradigm, f64, Vec<MatcherKind>)]) -> Result<Vec<SeedCells>> {
    cfg.validate()?;
    cfg.seeds.iter().map(|&s| run_seed(corpus, cfg, s, kinds, cells)).collect()
}

/// One text model per seed evaluated on all four test sets at the balanced
/// ratio, overall and per category.
pub fn run_findings_1(corpus: Arc<Corpus>, cfg: &StudyConfig) -> Result<EvalReport> {
    let text = vec![MatcherKind::Text];
    let cells: Vec<_> = Paradigm::ALL.into_iter().map(|p| (p, cfg.balanced_k, text.clone())).collect();
    let all = run_cells(&corpus, cfg, &text, &cells)?;
    Ok(findings_1_report(&corpus, cfg, &all))
}

/// F1 of the text matcher as the mismatched:matched ratio grows, either on
/// the test sets only or on training and test alike.
pub fn run_findings_2(corpus: Arc<Corpus>, cfg: &StudyConfig, axis: SweepAxis) -> Result<SweepCurve> {
    let text = vec![MatcherKind::Text];
    match axis {
        SweepAxis::TestRatio => {
            let cells: Vec<_> = Paradigm::ALL
                .into_iter()
                .flat_map(|p| cfg.ks.iter().map(move |&k| (p, k)))
                .map(|(p, k)| (p, k, text.clone()))
                .collect();
            let all = run_cells(&corpus, cfg, &text, &cells)?;
            let warnings = collect_warnings(&all);
            Ok(curve_from(cfg, &corpus, axis, |s, p, k| all[s][&(p, k.to_bits())].clone(), warnings))
        }
        SweepAxis::TrainAndTestRatio => {
            let mut by_k: Vec<Vec<SeedCells>> = Vec::new();
            for &k in &cfg.ks {
                let sub = StudyConfig {
                    plan: SplitPlan {
                        k_train: k,
                        ..cfg.plan.clone()
                    },
                    ..cfg.clone()
                };
                let cells: Vec<_> = Paradigm::ALL.into_iter().map(|p| (p, k, text.clone())).collect();
                by_k.push(run_cells(&corpus, &sub, &text, &cells)?);
            }
            let warnings = collect_warnings(&by_k.concat());
            let ki = |k: f64| cfg.ks.iter().position(|&x| x == k).expect("k from grid");
            Ok(curve_from(cfg, &corpus, axis, |s, p, k| by_k[ki(k)][s][&(p, k.to_bits())].clone(), warnings))
        }
    }
}

/// Text, visual and fused matchers on all four test sets at the balanced
/// and the imbalanced ratio.
pub fn run_findings_3(corpus: Arc<Corpus>, cfg: &StudyConfig) -> Result<EvalReport> {
    check_images(&corpus)?;
    let kinds = MatcherKind::ALL.to_vec();
    let cells: Vec<_> = [cfg.balanced_k, cfg.imbalanced_k]
        .into_iter()
        .flat_map(|k| Paradigm::ALL.into_iter().map(move |p| (p, k)))
        .map(|(p, k)| (p, k, kinds.clone()))
        .collect();
    let all = run_cells(&corpus, cfg, &kinds, &cells)?;
    Ok(findings_3_report(&corpus, cfg, &all))
}

fn check_images(corpus: &Corpus) -> Result<()> {
    match corpus.records().iter().find(|r| r.image_vec.is_none()) {
        Some(r) => Err(Error::MissingModality {
            kind: "visual".into(),
            record_id: r.record_id.clone(),
        }),
        None => Ok(()),
    }
}

/// The three findings from one training run per seed: the balanced table,
/// the test-ratio sweep and the modality comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Findings {
    pub unseen_entities: EvalReport,
    pub imbalance: SweepCurve,
    pub modalities: EvalReport,
}

pub fn run_all_findings(corpus: Arc<Corpus>, cfg: &StudyConfig) -> Result<Findings> {
    check_images(&corpus)?;
    let kinds = MatcherKind::ALL.to_vec();
    let text = vec![MatcherKind::Text];
    let mut ks: Vec<f64> = cfg.ks.clone();
    ks.extend([cfg.balanced_k, cfg.imbalanced_k]);
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let cells: Vec<_> = Paradigm::ALL
        .into_iter()
        .flat_map(|p| ks.iter().map(move |&k| (p, k)))
        .map(|(p, k)| {
            let which = if k == cfg.balanced_k || k == cfg.imbalanced_k { kinds.clone() } else { text.clone() };
            (p, k, which)
        })
        .collect();
    let all = run_cells(&corpus, cfg, &kinds, &cells)?;
    let warnings = collect_warnings(&all);
    Ok(Findings {
        unseen_entities: findings_1_report(&corpus, cfg, &all),
        imbalance: curve_from(cfg, &corpus, SweepAxis::TestRatio, |s, p, k| all[s][&(p, k.to_bits())].clone(), warnings),
        modalities: findings_3_report(&corpus, cfg, &all),
    })
}
