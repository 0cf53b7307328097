//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use embench::audit::{audit_external, render_table, AuditReport, Check, Contract, PairLevel, RatioSummary};
use embench::builder::{bundle_files, write_bundle, BenchmarkSet, Paradigm, SplitCounts, SplitPlan};
use embench::corpus::{save_corpus, Corpus};
use embench::eval::{run_all_findings, score, Findings, StudyConfig, ALL};
use embench::features::Prepared;
use embench::matcher::{loss_and_grad, param_len, sigmoid, train, Dataset, Hyper, MatcherKind, MatcherModel};
use embench::pairs::{ratio_holds, Label, LabeledPair, PairSet};
use embench::report::{render_curve, render_report, Format};
use embench::seed;
use embench::synth::{generate, SynthConfig};

const CORPUS_SEED: u64 = 7;
const KS: [f64; 4] = [3.0, 10.0, 30.0, 100.0];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn default_corpus() -> Arc<Corpus> {
    Arc::new(generate(&SynthConfig::new(CORPUS_SEED)).expect("default corpus"))
}

fn plan(seed: u64) -> SplitPlan {
    SplitPlan::with_seed(seed)
}

fn criterion_1(corpus: &Arc<Corpus>) -> Outcome {
    let mut failures = Vec::new();
    for s in 1..=5 {
        let set = BenchmarkSet::new(corpus.clone(), plan(s)).unwrap();
        let bundles = set.bundles(3.0).unwrap();
        let audits: BTreeMap<Paradigm, AuditReport> = bundles.iter().map(|(p, b)| (*p, b.audit().unwrap())).collect();
        let om = &audits[&Paradigm::Om];
        let cfm = &audits[&Paradigm::Cfm];
        let rl = &audits[&Paradigm::Rl];
        if om.seen_cluster_ratio != 0.0 {
            failures.push(format!("seed {s}: OM seen clusters {}", om.seen_cluster_ratio));
        }
        if cfm.seen_cluster_ratio != 1.0 || cfm.seen_record_ratio != 0.0 {
            failures.push(format!("seed {s}: CFM {} / {}", cfm.seen_cluster_ratio, cfm.seen_record_ratio));
        }
        if rl.exactly_one_seen_pair_fraction != 1.0 {
            failures.push(format!("seed {s}: RL one-seen {}", rl.exactly_one_seen_pair_fraction));
        }
        if audits.values().any(|a| !a.contract.pass) {
            failures.push(format!("seed {s}: a contract check failed"));
        }
        let dir = tempfile::tempdir().unwrap();
        let mut train_val: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
        for (p, b) in &bundles {
            let d = dir.path().join(p.key());
            write_bundle(b, &d).unwrap();
            let [train, val, _, _] = bundle_files(&d);
            train_val.push((std::fs::read(train).unwrap(), std::fs::read(val).unwrap()));
        }
        if train_val.windows(2).any(|w| w[0] != w[1]) {
            failures.push(format!("seed {s}: train/val files differ across paradigms"));
        }
    }
    if failures.is_empty() {
        Outcome::new(true, "5 seeds: OM 0.0, CFM 1.0/0.0, RL 1.0, train/val byte-identical")
    } else {
        Outcome::new(false, failures.join("; "))
    }
}

fn criterion_2(corpus: &Arc<Corpus>) -> Outcome {
    let (mut checked, mut shortfalls, mut failures) = (0, 0, Vec::new());
    for s in 1..=5 {
        let p = plan(s);
        let set = BenchmarkSet::new(corpus.clone(), p.clone()).unwrap();
        for (name, split) in [("train", &set.shared.train), ("val", &set.shared.val)] {
            checked += 1;
            if !ratio_holds(split.n_matched, split.n_mismatched, p.k_train) {
                failures.push(format!("seed {s} {name}: {}:{}", split.n_matched, split.n_mismatched));
            }
        }
        for k in KS {
            for paradigm in Paradigm::ALL {
                let b = set.bundle(paradigm, k).unwrap();
                checked += 1;
                if ratio_holds(b.test.n_matched, b.test.n_mismatched, k) {
                    continue;
                }
                if b.manifest.warnings.iter().any(|w| w.contains("shortfall")) {
                    shortfalls += 1;
                } else {
                    failures.push(format!("seed {s} {paradigm} k={k}: {}:{}", b.test.n_matched, b.test.n_mismatched));
                }
            }
        }
    }
    if failures.is_empty() {
        Outcome::new(true, format!("{checked} splits exact or flagged ({shortfalls} shortfall)"))
    } else {
        Outcome::new(false, failures.join("; "))
    }
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(2024);
    for fixture in 0..1000 {
        let n: usize = rng.random_range(0..60);
        let gold: Vec<(String, String, bool)> = (0..n)
            .map(|i| (format!("l{i:03}"), format!("r{i:03}"), rng.random_bool(0.3)))
            .collect();
        let pairs = gold
            .iter()
            .map(|(l, r, m)| {
                let label = if *m { Label::Matched } else { Label::Mismatched };
                LabeledPair::new(Arc::from(l.as_str()), Arc::from(r.as_str()), label).unwrap()
            })
            .collect();
        let gold_set = PairSet::from_pairs(pairs, String::new()).unwrap();
        let mut decisions: Vec<(String, String, bool)> = gold
            .iter()
            .map(|(l, r, _)| {
                let d = rng.random_bool(0.4);
                if rng.random_bool(0.5) {
                    (r.clone(), l.clone(), d)
                } else {
                    (l.clone(), r.clone(), d)
                }
            })
            .collect();
        decisions.shuffle(&mut rng);

        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (l, r, g) in &gold {
            let d = decisions
                .iter()
                .find(|(a, b, _)| (a == l && b == r) || (a == r && b == l))
                .map(|t| t.2)
                .unwrap();
            match (d, *g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let m = score(decisions.iter().map(|(a, b, d)| (a.as_str(), b.as_str(), *d)), &gold_set).unwrap();
        let c = m.confusion;
        let same = (c.tp, c.fp, c.fn_, c.tn) == (tp, fp, fn_, tn)
            && m.precision == div(tp, tp + fp)
            && m.recall == div(tp, tp + fn_)
            && m.f1 == div(2 * tp, 2 * tp + fp + fn_)
            && m.degenerate == (2 * tp + fp + fn_ == 0);
        if !same {
            return Outcome::new(false, format!("fixture {fixture}: {m:?} vs tp={tp} fp={fp} fn={fn_} tn={tn}"));
        }
    }
    Outcome::new(true, "1000 randomized fixtures identical to brute force")
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(99);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let kind = MatcherKind::ALL[draw % 3];
        let (dt, dv) = (rng.random_range(1..9), rng.random_range(1..6));
        let n = rng.random_range(2..40);
        let mut g = || rng.random_range(-3.0..3.0);
        let data = Dataset {
            text_dim: dt,
            visual_dim: dv,
            text: (0..n * dt).map(|_| g()).collect(),
            visual: (0..n * dv).map(|_| g()).collect(),
            labels: (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect(),
            weights: (0..n).map(|_| rng.random_range(0.5..4.0)).collect(),
        };
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows.truncate(rng.random_range(1..=n));
        let params: Vec<f64> = (0..param_len(kind, dt, dv)).map(|_| rng.random_range(-1.5..1.5)).collect();
        let l2 = rng.random_range(0.0..0.1);
        let (_, grad) = loss_and_grad(kind, &params, &data, &rows, l2);
        let h = 1e-6;
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut p = params.clone();
                p[i] += h;
                let up = loss_and_grad(kind, &p, &data, &rows, l2).0;
                p[i] -= 2.0 * h;
                let down = loss_and_grad(kind, &p, &data, &rows, l2).0;
                (up - down) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / (norm(&grad) + norm(&fd)).max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-5 {
            return Outcome::new(false, format!("draw {draw} ({kind}): relative error {rel:.3e}"));
        }
    }
    Outcome::new(true, format!("100 draws, worst relative error {worst:.2e}"))
}

fn f1_text(f: &Findings, p: Paradigm) -> f64 {
    f.unseen_entities.row(p, ALL, MatcherKind::Text, 3.0).expect("findings-1 row").f1
}

fn criterion_5(f: &Findings) -> Outcome {
    let v: Vec<f64> = Paradigm::ALL.iter().map(|&p| f1_text(f, p)).collect();
    let ordered = v.windows(2).all(|w| w[0] > w[1]);
    let gap = (v[0] - v[3]) * 100.0;
    let detail = format!(
        "Vanilla {:.2} > RL {:.2} > CFM {:.2} > OM {:.2}, gap {gap:.2}",
        v[0] * 100.0,
        v[1] * 100.0,
        v[2] * 100.0,
        v[3] * 100.0
    );
    Outcome::new(ordered && gap >= 10.0, detail)
}

fn criterion_6(f: &Findings) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in Paradigm::ALL {
        let curve = f.imbalance.curve(p).expect("curve");
        let ks: Vec<f64> = curve.points.iter().map(|pt| pt.k).collect();
        if ks != KS {
            return Outcome::new(false, format!("{p}: unexpected grid {ks:?}"));
        }
        let f1: Vec<f64> = curve.points.iter().map(|pt| pt.f1 * 100.0).collect();
        let worst_rise = f1.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        pass &= worst_rise <= 1.0;
        parts.push(format!("{p} {}", f1.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(">")));
        if p == Paradigm::Vanilla {
            let drop = f1[0] - f1[3];
            pass &= drop >= 15.0;
            parts.push(format!("Vanilla drop {drop:.2}"));
        }
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_7(f: &Findings, fused: &MatcherModel, set: &BenchmarkSet) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [3.0, 100.0] {
        let get = |m| f.modalities.row(Paradigm::Om, ALL, m, k).expect("findings-3 row").f1 * 100.0;
        let (t, fu) = (get(MatcherKind::Text), get(MatcherKind::Fused));
        pass &= fu >= t + 3.0;
        parts.push(format!("OM k={k}: fused {fu:.2} vs text {t:.2}"));
    }

    let corpus = &set.corpus;
    let test = set.test_set(Paradigm::Om, 3.0);
    let prepared = Prepared::new(corpus, &fused.space);
    let standardize = |x: &[f64], s: &embench::matcher::Scaler| -> Vec<f64> {
        x.iter().zip(&s.mean).zip(&s.scale).map(|((v, m), sd)| (v - m) / sd).collect()
    };
    let mut mismatches = 0;
    for (bias, block) in [(f64::NEG_INFINITY, "text"), (f64::INFINITY, "visual")] {
        let mut model = fused.clone();
        model.gate.as_mut().unwrap().bias = bias;
        for p in &test.pairs {
            let a = corpus.position(&p.left_id).unwrap();
            let b = corpus.position(&p.right_id).unwrap();
            let (xt, xv) = (prepared.text(a, b), prepared.visual(a, b).unwrap());
            let got = model.score_raw(&xt, Some(&xv)).unwrap().score;
            let expected = if block == "text" {
                sigmoid(model.text.as_ref().unwrap().logit(&standardize(&xt, model.text_scaler.as_ref().unwrap())))
            } else {
                sigmoid(model.visual.as_ref().unwrap().logit(&standardize(&xv, model.visual_scaler.as_ref().unwrap())))
            };
            mismatches += usize::from(got != expected);
        }
    }
    pass &= mismatches == 0;
    parts.push(format!("gate surgery: {mismatches} mismatches over {} pairs x 2", test.len()));
    Outcome::new(pass, parts.join("; "))
}

/// Corpus, bundles, models and a report from one configuration, as bytes.
fn pipeline_bytes(dir: &Path) -> (BTreeMap<String, Vec<u8>>, MatcherModel, BenchmarkSet) {
    let corpus = default_corpus();
    save_corpus(&corpus, &dir.join("corpus.jsonl")).unwrap();
    let set = BenchmarkSet::new(corpus.clone(), plan(1)).unwrap();
    for (p, b) in set.bundles(3.0).unwrap() {
        write_bundle(&b, &dir.join(p.key())).unwrap();
    }
    let hyper = Hyper { seed: 1, ..Hyper::default() };
    let mut fused = None;
    for kind in [MatcherKind::Text, MatcherKind::Fused] {
        let m = train(kind, &set.shared.train, &set.shared.val, &corpus, &hyper).unwrap();
        m.save(&dir.join(format!("model-{}.json", kind.key()))).unwrap();
        fused = Some(m);
    }
    // The findings run is repeated on one seed to keep the suite short.
    let cfg = StudyConfig { seeds: vec![1], ..StudyConfig::default() };
    let findings = run_all_findings(corpus, &cfg).unwrap();
    for (name, report) in [("unseen", &findings.unseen_entities), ("modalities", &findings.modalities)] {
        for fmt in [Format::Json, Format::Text, Format::Csv] {
            let text = render_report(report, fmt).unwrap();
            std::fs::write(dir.join(format!("{name}.{}", fmt.extension())), text).unwrap();
        }
    }
    for fmt in [Format::Json, Format::Text, Format::Csv] {
        let text = render_curve(&findings.imbalance, fmt).unwrap();
        std::fs::write(dir.join(format!("imbalance.{}", fmt.extension())), text).unwrap();
    }
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    (files, fused.unwrap(), set)
}

fn criterion_8(first: &BTreeMap<String, Vec<u8>>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (second, _, _) = pipeline_bytes(dir.path());
    let differing: Vec<&String> = first.keys().filter(|k| second.get(*k) != first.get(*k)).collect();
    if differing.is_empty() && first.len() == second.len() {
        Outcome::new(true, format!("{} files byte-identical across two runs", first.len()))
    } else {
        Outcome::new(false, format!("differing: {differing:?}"))
    }
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clusters = [("A", 3), ("B", 3), ("C", 2), ("D", 2), ("E", 2)];
    let mut records = Vec::new();
    for (c, n) in clusters {
        for i in 1..=n {
            let id = format!("{}{i}", c.to_lowercase());
            records.push(format!(
                r#"{{"record_id":"{id}","cluster_id":"{c}","category":"x","attrs":{{"title":"item {id}"}}}}"#
            ));
        }
    }
    write_lines(&d.join("records.jsonl"), &records);
    let pair = |a: &str, b: &str, m: bool| {
        let label = if m { "matched" } else { "mismatched" };
        format!(r#"{{"left_id":"{a}","right_id":"{b}","label":"{label}"}}"#)
    };
    let train = [
        pair("a1", "a2", true),
        pair("b1", "b2", true),
        pair("a1", "b1", false),
        pair("a2", "b2", false),
        pair("a1", "c1", false),
        pair("b1", "c1", false),
        pair("a2", "c1", false),
        pair("b2", "c1", false),
    ];
    let val = [
        pair("c1", "c2", true),
        pair("a1", "c2", false),
        pair("b1", "c2", false),
        pair("a2", "c2", false),
    ];
    let test = [
        pair("a1", "a3", true),
        pair("b3", "d1", false),
        pair("d1", "d2", true),
        pair("e1", "e2", true),
        pair("a3", "e1", false),
        pair("c2", "e2", false),
        pair("d2", "e1", false),
        pair("b1", "b3", true),
    ];
    write_lines(&d.join("train.jsonl"), &train);
    write_lines(&d.join("val.jsonl"), &val);
    write_lines(&d.join("test.jsonl"), &test);

    // Seen records a1 a2 b1 b2 c1 c2, seen clusters A B C. Test touches
    // records a1 a3 b1 b3 c2 d1 d2 e1 e2 (3 seen) and clusters A B C D E
    // (3 seen). Pairs with exactly one seen record: a1-a3, b1-b3, c2-e2.
    let check = |name: &str, detail: &str| Check { name: name.into(), pass: true, detail: detail.into() };
    let expected = AuditReport {
        n_test_records: 9,
        n_test_clusters: 5,
        n_seen_test_records: 3,
        n_seen_test_clusters: 3,
        seen_cluster_ratio: 3.0 / 5.0,
        seen_record_ratio: 3.0 / 9.0,
        exactly_one_seen_pair_fraction: 3.0 / 8.0,
        pair_level: PairLevel {
            both_records_seen: 0.0,
            any_record_seen: 3.0 / 8.0,
            both_clusters_seen: 2.0 / 8.0,
            any_cluster_seen: 5.0 / 8.0,
        },
        matched_mismatched: RatioSummary { n_matched: 4, n_mismatched: 4, ratio: Some(1.0) },
        splits: BTreeMap::from([
            ("train".into(), SplitCounts { pairs: 8, matched: 2, mismatched: 6 }),
            ("val".into(), SplitCounts { pairs: 4, matched: 1, mismatched: 3 }),
            ("test".into(), SplitCounts { pairs: 8, matched: 4, mismatched: 4 }),
        ]),
        test_pairs_in_train_val: 0,
        label_errors: 0,
        contract: Contract {
            paradigm: None,
            pass: true,
            checks: vec![
                check("labels_match_clusters", "0 mislabeled pair(s)"),
                check("test_disjoint_from_train_val", "0 test pair(s) also in train/val"),
            ],
        },
    };
    let got = audit_external(
        &d.join("train.jsonl"),
        &d.join("val.jsonl"),
        &d.join("test.jsonl"),
        &d.join("records.jsonl"),
        None,
    )
    .unwrap();
    let table = render_table(&[("fixture".into(), &got)]);
    let row = table.lines().nth(2).unwrap_or_default().to_string();
    let cells: Vec<&str> = row.split('|').map(str::trim).collect();
    let table_ok = cells == ["fixture", "1:1.00", "60.0%", "33.3%", "37.5%", "pass"];
    if got == expected && table_ok {
        Outcome::new(true, format!("20 pairs; table row: {}", cells.join(" | ")))
    } else {
        Outcome::new(false, format!("got {got:?}; table row {row:?}"))
    }
}

struct Suite {
    start: Instant,
    lap: Instant,
    passed: usize,
    failed: usize,
}

impl Suite {
    fn record(&mut self, n: u8, name: &str, o: Outcome) {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {n} ({name}): {} [{:.1?}]", o.detail, self.lap.elapsed());
        self.lap = Instant::now();
        if o.pass {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

fn main() {
    let now = Instant::now();
    let mut suite = Suite { start: now, lap: now, passed: 0, failed: 0 };
    let corpus = default_corpus();
    let cfg = StudyConfig::default();

    suite.record(1, "paradigm contracts", criterion_1(&corpus));
    suite.record(2, "ratio control", criterion_2(&corpus));
    suite.record(3, "metric oracle", criterion_3());
    suite.record(4, "gradient check", criterion_4());

    let findings = run_all_findings(corpus.clone(), &cfg).expect("findings");
    suite.record(5, "unseen-entity trend", criterion_5(&findings));
    suite.record(6, "imbalance trend", criterion_6(&findings));
    let dir = tempfile::tempdir().unwrap();
    let (first, fused, set) = pipeline_bytes(dir.path());
    suite.record(7, "modality trend and gate surgery", criterion_7(&findings, &fused, &set));
    suite.record(8, "determinism", criterion_8(&first));
    suite.record(9, "external audit", criterion_9());

    let total = suite.passed + suite.failed;
    println!("{} of {total} criteria passed in {:.0?}", suite.passed, suite.start.elapsed());
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
