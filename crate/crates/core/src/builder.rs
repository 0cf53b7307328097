//! The four benchmark paradigms built from one corpus partition.
//!
//! A seeded partition picks training clusters and holdout clusters, and
//! holds back a fraction of the records of every training cluster. All four
//! bundles share one train/val split generated over the retained records of
//! the training clusters; they differ only in how the test set is drawn:
//!
//! * vanilla: the pair-level test split of that same generation run,
//! * RL: one held-out record joined to one retained training record,
//! * CFM: pairs among held-out records of training clusters,
//! * OM: pairs among records of holdout clusters.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{self, AuditReport};
use crate::corpus::{filter_by_category, load_corpus, Corpus};
use crate::error::{Error, Result};
use crate::io::{self, round_half_up};
use crate::pairs::{
    matched_among, pos_pair, sample_mismatched_in, vanilla_split_with_warnings, GenConfig, Label,
    MismatchSpec, PairSet, PosPair, Universe,
};
use crate::seed;

pub const MANIFEST_SCHEMA: &str = "embench.bundle/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Vanilla,
    Rl,
    Cfm,
    Om,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::Vanilla, Paradigm::Rl, Paradigm::Cfm, Paradigm::Om];

    pub fn key(self) -> &'static str {
        match self {
            Paradigm::Vanilla => "vanilla",
            Paradigm::Rl => "rl",
            Paradigm::Cfm => "cfm",
            Paradigm::Om => "om",
        }
    }

    /// Column heading used in rendered tables.
    pub fn heading(self) -> &'static str {
        match self {
            Paradigm::Vanilla => "Vanilla",
            Paradigm::Rl => "RL",
            Paradigm::Cfm => "CFM",
            Paradigm::Om => "OM",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown paradigm '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_train_clusters: usize,
    pub n_holdout_clusters: usize,
    pub holdout_record_fraction: f64,
    pub k_train: f64,
    pub k_test: f64,
    /// Train/val/vanilla-test shares of the shared generation run.
    pub split_ratio: [f64; 3],
    pub family_bias: f64,
    pub within_category: bool,
    pub max_matched_per_cluster: Option<usize>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train_clusters: 250,
            n_holdout_clusters: 100,
            holdout_record_fraction: 0.4,
            k_train: 3.0,
            k_test: 3.0,
            split_ratio: [0.6, 0.2, 0.2],
            family_bias: 0.5,
            within_category: false,
            max_matched_per_cluster: None,
        }
    }
}

impl SplitPlan {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train_clusters == 0 {
            return Err(Error::Config("n_train_clusters must be positive".into()));
        }
        if !(self.holdout_record_fraction > 0.0 && self.holdout_record_fraction < 1.0) {
            return Err(Error::Config(
                "holdout_record_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        for (name, k) in [("k_train", self.k_train), ("k_test", self.k_test)] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative real")));
            }
        }
        self.shared_gen_config().validate()
    }

    fn shared_gen_config(&self) -> GenConfig {
        GenConfig {
            k: self.k_train,
            split_ratio: self.split_ratio,
            seed: seed::derive(self.seed, &seed::ratio_label("shared", self.k_train)),
            max_matched_per_cluster: self.max_matched_per_cluster,
            family_bias: self.family_bias,
            within_category: self.within_category,
        }
    }
}

/// Record positions of one seeded partition. All lists are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub train_clusters: Vec<usize>,
    pub holdout_clusters: Vec<usize>,
    /// Retained records of training clusters.
    pub train_records: Vec<usize>,
    /// Held-out (unseen) records of training clusters.
    pub heldout_records: Vec<usize>,
    /// Every record of the holdout clusters.
    pub holdout_cluster_records: Vec<usize>,
    pub warnings: Vec<String>,
    pub hash: String,
}

/// Number of records to hold out of a training cluster of size `m`.
pub fn holdout_count(m: usize, fraction: f64) -> usize {
    if m < 2 {
        return 0;
    }
    let raw = (fraction * m as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.clamp(1, m - 1)
}

pub fn partition_corpus(corpus: &Corpus, plan: &SplitPlan) -> Result<Partition> {
    plan.validate()?;
    let requested = plan.n_train_clusters + plan.n_holdout_clusters;
    if requested > corpus.n_clusters() {
        return Err(Error::InsufficientClusters {
            requested,
            available: corpus.n_clusters(),
        });
    }
    let mut rng = seed::derived_rng(plan.seed, "partition");
    let mut order: Vec<usize> = (0..corpus.n_clusters()).collect();
    order.shuffle(&mut rng);
    let mut train_clusters = order[..plan.n_train_clusters].to_vec();
    let mut holdout_clusters = order[plan.n_train_clusters..requested].to_vec();
    train_clusters.sort_unstable();
    holdout_clusters.sort_unstable();

    let mut warnings = Vec::new();
    let mut train_records = Vec::new();
    let mut heldout_records = Vec::new();
    for &c in &train_clusters {
        let mut members: Vec<usize> = corpus.clusters()[c].range().collect();
        let h = holdout_count(members.len(), plan.holdout_record_fraction);
        if members.len() < 2 {
            warnings.push(format!(
                "training cluster '{}' has a single record; nothing held out",
                corpus.clusters()[c].id
            ));
        }
        members.shuffle(&mut rng);
        heldout_records.extend_from_slice(&members[..h]);
        train_records.extend_from_slice(&members[h..]);
    }
    train_records.sort_unstable();
    heldout_records.sort_unstable();
    let holdout_cluster_records: Vec<usize> = holdout_clusters
        .iter()
        .flat_map(|&c| corpus.clusters()[c].range())
        .collect();

    let ids = |v: &[usize]| -> Vec<&str> { v.iter().map(|&i| &*corpus.records()[i].record_id).collect() };
    let cids = |v: &[usize]| -> Vec<&str> { v.iter().map(|&c| corpus.clusters()[c].id.as_str()).collect() };
    let digest_src = serde_json::json!({
        "corpus": corpus.content_hash(),
        "train_clusters": cids(&train_clusters),
        "holdout_clusters": cids(&holdout_clusters),
        "heldout_records": ids(&heldout_records),
    });
    let hash = io::sha256_hex(&serde_json::to_vec(&digest_src)?);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Partition {
        train_clusters,
        holdout_clusters,
        train_records,
        heldout_records,
        holdout_cluster_records,
        warnings,
        hash,
    })
}

/// Train and val sets shared by all four paradigms, plus the vanilla test
/// split from the same generation run.
#[derive(Clone, Debug)]
pub struct SharedSplit {
    pub train: PairSet,
    pub val: PairSet,
    pub vanilla_test: PairSet,
    pub k_train: f64,
    pub warnings: Vec<String>,
    vanilla_test_pos: Vec<(PosPair, Label)>,
    seen_keys: HashSet<PosPair>,
}

pub fn build_shared_train_val(
    corpus: &Corpus,
    partition: &Partition,
    plan: &SplitPlan,
) -> Result<SharedSplit> {
    let cfg = plan.shared_gen_config();
    let (splits, warnings) = vanilla_split_with_warnings(corpus, &partition.train_records, &cfg)?;
    let [train_pos, val_pos, test_pos] = splits;
    let seen_keys = train_pos.iter().chain(&val_pos).map(|(p, _)| *p).collect();
    let mut train = PairSet::from_positions(corpus, &train_pos);
    let mut val = PairSet::from_positions(corpus, &val_pos);
    let mut vanilla_test = PairSet::from_positions(corpus, &test_pos);
    for set in [&mut train, &mut val, &mut vanilla_test] {
        set.warnings = warnings.clone();
    }
    Ok(SharedSplit {
        train,
        val,
        vanilla_test,
        k_train: plan.k_train,
        warnings,
        vanilla_test_pos: test_pos,
        seen_keys,
    })
}

fn finish(corpus: &Corpus, matched: Vec<PosPair>, mismatched: Vec<PosPair>, warnings: Vec<String>) -> PairSet {
    let mut all: Vec<(PosPair, Label)> = matched.into_iter().map(|p| (p, Label::Matched)).collect();
    all.extend(mismatched.into_iter().map(|p| (p, Label::Mismatched)));
    let mut set = PairSet::from_positions(corpus, &all);
    for w in &warnings {
        log::warn!("{w}");
    }
    set.warnings = warnings;
    set
}

fn test_label(paradigm: Paradigm, k: f64) -> String {
    seed::ratio_label(&format!("test/{}", paradigm.key()), k)
}

fn matched_label(paradigm: Paradigm) -> String {
    format!("test/{}/matched", paradigm.key())
}

fn within_test(
    corpus: &Corpus,
    members: &[usize],
    paradigm: Paradigm,
    plan: &SplitPlan,
    k: f64,
    mut warnings: Vec<String>,
) -> PairSet {
    let matched = matched_among(
        corpus,
        members,
        plan.max_matched_per_cluster,
        seed::derive(plan.seed, &matched_label(paradigm)),
    );
    let spec = MismatchSpec {
        universe: Universe::Within(members),
        n: round_half_up(k * matched.len() as f64),
        within_category: plan.within_category,
        family_bias: plan.family_bias,
        exclude: None,
    };
    let mut rng = seed::derived_rng(plan.seed, &test_label(paradigm, k));
    let sampled = sample_mismatched_in(corpus, &spec, &mut rng);
    warnings.extend(sampled.warnings);
    finish(corpus, matched, sampled.pairs, warnings)
}

/// Matched and mismatched pairs drawn only from holdout-cluster records.
pub fn build_om_test(corpus: &Corpus, partition: &Partition, plan: &SplitPlan, k: f64) -> PairSet {
    within_test(
        corpus,
        &partition.holdout_cluster_records,
        Paradigm::Om,
        plan,
        k,
        Vec::new(),
    )
}

/// Pairs drawn only among held-out records of training clusters.
pub fn build_cfm_test(corpus: &Corpus, partition: &Partition, plan: &SplitPlan, k: f64) -> PairSet {
    let mut per_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in &partition.heldout_records {
        *per_cluster.entry(corpus.cluster_index_of(r)).or_insert(0) += 1;
    }
    let thin = partition
        .train_clusters
        .iter()
        .filter(|c| per_cluster.get(c).copied().unwrap_or(0) < 2)
        .count();
    let mut warnings = Vec::new();
    if thin > 0 {
        warnings.push(format!(
            "{thin} training cluster(s) have fewer than 2 held-out records and contribute no matched pair"
        ));
    }
    within_test(
        corpus,
        &partition.heldout_records,
        Paradigm::Cfm,
        plan,
        k,
        warnings,
    )
}

/// Each pair joins one held-out record with one retained training record.
pub fn build_rl_test(corpus: &Corpus, partition: &Partition, plan: &SplitPlan, k: f64) -> PairSet {
    let mut warnings = Vec::new();
    let mut retained: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in &partition.train_records {
        retained.entry(corpus.cluster_index_of(r)).or_default().push(r);
    }
    let mut held: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in &partition.heldout_records {
        held.entry(corpus.cluster_index_of(r)).or_default().push(r);
    }
    let mut matched = Vec::new();
    let mut no_anchor = 0usize;
    let matched_seed = seed::derive(plan.seed, &matched_label(Paradigm::Rl));
    for (c, anchors) in &held {
        let Some(partners) = retained.get(c) else {
            no_anchor += 1;
            continue;
        };
        let mut cluster_pairs: Vec<PosPair> = anchors
            .iter()
            .flat_map(|&a| partners.iter().map(move |&b| pos_pair(a, b)))
            .collect();
        if let Some(cap) = plan.max_matched_per_cluster.filter(|&cap| cap < cluster_pairs.len()) {
            let label = format!("rl/{}", corpus.clusters()[*c].id);
            cluster_pairs.shuffle(&mut seed::derived_rng(matched_seed, &label));
            cluster_pairs.truncate(cap);
        }
        matched.extend(cluster_pairs);
    }
    if no_anchor > 0 {
        warnings.push(format!(
            "{no_anchor} cluster(s) have no retained training record to anchor matched pairs"
        ));
    }
    let spec = MismatchSpec {
        universe: Universe::Between(&partition.heldout_records, &partition.train_records),
        n: round_half_up(k * matched.len() as f64),
        within_category: plan.within_category,
        family_bias: plan.family_bias,
        exclude: None,
    };
    let mut rng = seed::derived_rng(plan.seed, &test_label(Paradigm::Rl, k));
    let sampled = sample_mismatched_in(corpus, &spec, &mut rng);
    warnings.extend(sampled.warnings);
    finish(corpus, matched, sampled.pairs, warnings)
}

/// Vanilla test at ratio `k`: the shared run's own test split when `k`
/// equals the training ratio, otherwise its matched pairs plus freshly
/// sampled mismatched pairs that avoid train and val.
pub fn build_vanilla_test(
    corpus: &Corpus,
    partition: &Partition,
    shared: &SharedSplit,
    plan: &SplitPlan,
    k: f64,
) -> PairSet {
    if k == shared.k_train {
        return shared.vanilla_test.clone();
    }
    let matched: Vec<PosPair> = shared
        .vanilla_test_pos
        .iter()
        .filter(|(_, l)| l.is_matched())
        .map(|(p, _)| *p)
        .collect();
    let spec = MismatchSpec {
        universe: Universe::Within(&partition.train_records),
        n: round_half_up(k * matched.len() as f64),
        within_category: plan.within_category,
        family_bias: plan.family_bias,
        exclude: Some(&shared.seen_keys),
    };
    let mut rng = seed::derived_rng(plan.seed, &test_label(Paradigm::Vanilla, k));
    let sampled = sample_mismatched_in(corpus, &spec, &mut rng);
    finish(corpus, matched, sampled.pairs, sampled.warnings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub pairs: usize,
    pub matched: usize,
    pub mismatched: usize,
}

impl From<&PairSet> for SplitCounts {
    fn from(s: &PairSet) -> Self {
        Self {
            pairs: s.len(),
            matched: s.n_matched,
            mismatched: s.n_mismatched,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub toolkit_version: String,
    pub paradigm: Paradigm,
    pub category: Option<String>,
    pub plan: SplitPlan,
    pub k_test: f64,
    pub corpus_hash: String,
    pub partition_hash: String,
    /// Derived seed per purpose label.
    pub seeds: BTreeMap<String, u64>,
    pub counts: BTreeMap<String, SplitCounts>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, String>,
    pub audit: Option<AuditReport>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkBundle {
    pub paradigm: Paradigm,
    pub train: PairSet,
    pub val: PairSet,
    pub test: PairSet,
    pub manifest: Manifest,
    /// Records the pair sets refer to (the source corpus, or its closure
    /// when loaded from disk).
    pub records: Arc<Corpus>,
}

impl BenchmarkBundle {
    pub fn audit(&self) -> Result<AuditReport> {
        audit::audit(self)
    }
}

/// One corpus partition with its shared split; hands out paradigm test sets
/// at any mismatched:matched ratio.
pub struct BenchmarkSet {
    pub corpus: Arc<Corpus>,
    pub plan: SplitPlan,
    pub partition: Partition,
    pub shared: SharedSplit,
    pub category: Option<String>,
}

impl BenchmarkSet {
    pub fn new(corpus: Arc<Corpus>, plan: SplitPlan) -> Result<Self> {
        let partition = partition_corpus(&corpus, &plan)?;
        let shared = build_shared_train_val(&corpus, &partition, &plan)?;
        Ok(Self {
            corpus,
            plan,
            partition,
            shared,
            category: None,
        })
    }

    pub fn test_set(&self, paradigm: Paradigm, k: f64) -> PairSet {
        let (c, part, plan) = (&*self.corpus, &self.partition, &self.plan);
        match paradigm {
            Paradigm::Vanilla => build_vanilla_test(c, part, &self.shared, plan, k),
            Paradigm::Rl => build_rl_test(c, part, plan, k),
            Paradigm::Cfm => build_cfm_test(c, part, plan, k),
            Paradigm::Om => build_om_test(c, part, plan, k),
        }
    }

    fn seeds(&self, paradigm: Paradigm, k: f64) -> BTreeMap<String, u64> {
        let mut labels = vec![
            "partition".to_string(),
            seed::ratio_label("shared", self.plan.k_train),
        ];
        if paradigm != Paradigm::Vanilla || k != self.plan.k_train {
            labels.push(test_label(paradigm, k));
        }
        if paradigm != Paradigm::Vanilla {
            labels.push(matched_label(paradigm));
        }
        labels
            .into_iter()
            .map(|l| {
                let s = seed::derive(self.plan.seed, &l);
                (l, s)
            })
            .collect()
    }

    /// Bundle for `paradigm` with its test set at ratio `k`, audited.
    pub fn bundle(&self, paradigm: Paradigm, k: f64) -> Result<BenchmarkBundle> {
        let test = self.test_set(paradigm, k);
        let mut warnings = self.partition.warnings.clone();
        warnings.extend(self.shared.warnings.iter().cloned());
        warnings.extend(test.warnings.iter().cloned());
        warnings.dedup();
        let counts = BTreeMap::from([
            ("train".to_string(), SplitCounts::from(&self.shared.train)),
            ("val".to_string(), SplitCounts::from(&self.shared.val)),
            ("test".to_string(), SplitCounts::from(&test)),
        ]);
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            toolkit_version: crate::VERSION.to_string(),
            paradigm,
            category: self.category.clone(),
            plan: self.plan.clone(),
            k_test: k,
            corpus_hash: self.corpus.content_hash().to_string(),
            partition_hash: self.partition.hash.clone(),
            seeds: self.seeds(paradigm, k),
            counts,
            warnings,
            files: BTreeMap::new(),
            audit: None,
        };
        let mut bundle = BenchmarkBundle {
            paradigm,
            train: self.shared.train.clone(),
            val: self.shared.val.clone(),
            test,
            manifest,
            records: self.corpus.clone(),
        };
        bundle.manifest.audit = Some(bundle.audit()?);
        Ok(bundle)
    }

    pub fn bundles(&self, k: f64) -> Result<BTreeMap<Paradigm, BenchmarkBundle>> {
        Paradigm::ALL
            .par_iter()
            .map(|&p| self.bundle(p, k).map(|b| (p, b)))
            .collect()
    }
}

/// All four bundles of one plan, test sets at `plan.k_test`.
pub fn build_all(corpus: Arc<Corpus>, plan: &SplitPlan) -> Result<BTreeMap<Paradigm, BenchmarkBundle>> {
    BenchmarkSet::new(corpus, plan.clone())?.bundles(plan.k_test)
}

/// Key under which the unfiltered bundles are returned by
/// [`build_per_category`].
pub const ALL_CATEGORIES: &str = "all";

/// Bundles for the whole corpus and for each category separately.
pub fn build_per_category(
    corpus: Arc<Corpus>,
    plan: &SplitPlan,
) -> Result<BTreeMap<String, BTreeMap<Paradigm, BenchmarkBundle>>> {
    let mut out = BTreeMap::new();
    for category in corpus.categories() {
        let filtered = Arc::new(filter_by_category(&corpus, &category).corpus);
        let mut set = BenchmarkSet::new(filtered, plan.clone())?;
        set.category = Some(category.clone());
        out.insert(category, set.bundles(plan.k_test)?);
    }
    out.insert(ALL_CATEGORIES.to_string(), build_all(corpus, plan)?);
    Ok(out)
}

const TRAIN_FILE: &str = "train.jsonl";
const VAL_FILE: &str = "val.jsonl";
const TEST_FILE: &str = "test.jsonl";
const RECORDS_FILE: &str = "records.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// Records referenced by any pair of the bundle, in corpus order.
pub fn closure(bundle: &BenchmarkBundle) -> Result<Corpus> {
    let corpus = &bundle.records;
    let mut keep = Vec::new();
    let mut seen = HashSet::new();
    for (split, set) in [("train", &bundle.train), ("val", &bundle.val), ("test", &bundle.test)] {
        for p in &set.pairs {
            for id in [&p.left_id, &p.right_id] {
                if seen.insert(id.clone()) {
                    let pos = corpus.position(id).ok_or_else(|| Error::DanglingReference {
                        split: split.into(),
                        record_id: id.to_string(),
                    })?;
                    keep.push(pos);
                }
            }
        }
    }
    corpus.subset(keep)
}

/// Writes `manifest.json`, the three pair files and `records.jsonl`.
pub fn write_bundle(bundle: &BenchmarkBundle, dir: &Path) -> Result<()> {
    let records = closure(bundle)?;
    let mut manifest = bundle.manifest.clone();
    let files = [
        (TRAIN_FILE, bundle.train.to_jsonl()?),
        (VAL_FILE, bundle.val.to_jsonl()?),
        (TEST_FILE, bundle.test.to_jsonl()?),
        (RECORDS_FILE, records.to_jsonl()?),
    ];
    for (name, bytes) in &files {
        io::atomic_write(&dir.join(name), bytes)?;
        manifest.files.insert(name.to_string(), io::sha256_hex(bytes));
    }
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_bundle(dir: &Path) -> Result<BenchmarkBundle> {
    let manifest: Manifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    let records = load_corpus(&dir.join(RECORDS_FILE))?;
    let load = |name: &str| PairSet::load(&dir.join(name), manifest.corpus_hash.clone());
    Ok(BenchmarkBundle {
        paradigm: manifest.paradigm,
        train: load(TRAIN_FILE)?,
        val: load(VAL_FILE)?,
        test: load(TEST_FILE)?,
        manifest,
        records: Arc::new(records),
    })
}

pub fn bundle_files(dir: &Path) -> [std::path::PathBuf; 4] {
    [TRAIN_FILE, VAL_FILE, TEST_FILE, RECORDS_FILE].map(|f| dir.join(f))
}
