//! Train/test contamination statistics and paradigm contract checks.
//!
//! "Seen" means present in any train or val pair. Record- and cluster-level
//! ratios are computed over the distinct records and clusters of the test
//! set; pair-level variants are reported alongside them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::{BenchmarkBundle, Paradigm, SplitCounts};
use crate::corpus::{load_corpus, Corpus};
use crate::error::{Error, Result};
use crate::pairs::PairSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLevel {
    pub both_records_seen: f64,
    pub any_record_seen: f64,
    pub both_clusters_seen: f64,
    pub any_cluster_seen: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub n_matched: usize,
    pub n_mismatched: usize,
    /// Mismatched per matched pair; absent without matched pairs.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub paradigm: Option<Paradigm>,
    pub pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_test_records: usize,
    pub n_test_clusters: usize,
    pub n_seen_test_records: usize,
    pub n_seen_test_clusters: usize,
    pub seen_cluster_ratio: f64,
    pub seen_record_ratio: f64,
    pub exactly_one_seen_pair_fraction: f64,
    pub pair_level: PairLevel,
    pub matched_mismatched: RatioSummary,
    pub splits: BTreeMap<String, SplitCounts>,
    /// Test pairs that also occur in train or val.
    pub test_pairs_in_train_val: usize,
    /// Pairs whose label disagrees with cluster co-membership.
    pub label_errors: usize,
    pub contract: Contract,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn cluster_of<'a>(records: &'a Corpus, split: &str, id: &str) -> Result<&'a str> {
    records
        .get(id)
        .map(|r| r.cluster_id.as_str())
        .ok_or_else(|| Error::DanglingReference {
            split: split.to_string(),
            record_id: id.to_string(),
        })
}

/// Computes the report for three pair sets over `records`.
pub fn audit_sets(
    train: &PairSet,
    val: &PairSet,
    test: &PairSet,
    records: &Corpus,
    paradigm: Option<Paradigm>,
) -> Result<AuditReport> {
    let mut seen_records: HashSet<&str> = HashSet::new();
    let mut seen_clusters: HashSet<&str> = HashSet::new();
    let mut label_errors = 0;
    for (name, set) in [("train", train), ("val", val), ("test", test)] {
        for p in &set.pairs {
            let a = cluster_of(records, name, &p.left_id)?;
            let b = cluster_of(records, name, &p.right_id)?;
            if (a == b) != p.label.is_matched() {
                label_errors += 1;
            }
            if name != "test" {
                seen_records.insert(&p.left_id);
                seen_records.insert(&p.right_id);
                seen_clusters.insert(a);
                seen_clusters.insert(b);
            }
        }
    }

    let mut test_records: HashSet<&str> = HashSet::new();
    let mut test_clusters: HashSet<&str> = HashSet::new();
    let (mut both_r, mut any_r, mut one_r, mut both_c, mut any_c) = (0, 0, 0, 0, 0);
    for p in &test.pairs {
        let (l, r) = (&*p.left_id, &*p.right_id);
        let (cl, cr) = (cluster_of(records, "test", l)?, cluster_of(records, "test", r)?);
        test_records.extend([l, r]);
        test_clusters.extend([cl, cr]);
        let sr = [seen_records.contains(l), seen_records.contains(r)];
        let sc = [seen_clusters.contains(cl), seen_clusters.contains(cr)];
        let nr = sr.iter().filter(|s| **s).count();
        let nc = sc.iter().filter(|s| **s).count();
        both_r += usize::from(nr == 2);
        any_r += usize::from(nr >= 1);
        one_r += usize::from(nr == 1);
        both_c += usize::from(nc == 2);
        any_c += usize::from(nc >= 1);
    }
    let n_seen_test_records = test_records.iter().filter(|r| seen_records.contains(*r)).count();
    let n_seen_test_clusters = test_clusters.iter().filter(|c| seen_clusters.contains(*c)).count();
    let seen_pairs: HashSet<(&str, &str)> = train.keys().union(&val.keys()).copied().collect();
    let test_pairs_in_train_val = test.pairs.iter().filter(|p| seen_pairs.contains(&p.key())).count();
    let n = test.len();

    let mut report = AuditReport {
        n_test_records: test_records.len(),
        n_test_clusters: test_clusters.len(),
        n_seen_test_records,
        n_seen_test_clusters,
        seen_cluster_ratio: frac(n_seen_test_clusters, test_clusters.len()),
        seen_record_ratio: frac(n_seen_test_records, test_records.len()),
        exactly_one_seen_pair_fraction: frac(one_r, n),
        pair_level: PairLevel {
            both_records_seen: frac(both_r, n),
            any_record_seen: frac(any_r, n),
            both_clusters_seen: frac(both_c, n),
            any_cluster_seen: frac(any_c, n),
        },
        matched_mismatched: RatioSummary {
            n_matched: test.n_matched,
            n_mismatched: test.n_mismatched,
            ratio: test.ratio(),
        },
        splits: BTreeMap::from([
            ("train".to_string(), SplitCounts::from(train)),
            ("val".to_string(), SplitCounts::from(val)),
            ("test".to_string(), SplitCounts::from(test)),
        ]),
        test_pairs_in_train_val,
        label_errors,
        contract: Contract {
            paradigm,
            pass: true,
            checks: Vec::new(),
        },
    };
    report.contract = evaluate_contract(&report, paradigm, one_r, n);
    Ok(report)
}

/// Exact count-based checks; no tolerance is applied.
fn evaluate_contract(
    r: &AuditReport,
    paradigm: Option<Paradigm>,
    exactly_one_pairs: usize,
    n_pairs: usize,
) -> Contract {
    let mut checks = vec![
        Check {
            name: "labels_match_clusters".into(),
            pass: r.label_errors == 0,
            detail: format!("{} mislabeled pair(s)", r.label_errors),
        },
        Check {
            name: "test_disjoint_from_train_val".into(),
            pass: r.test_pairs_in_train_val == 0,
            detail: format!("{} test pair(s) also in train/val", r.test_pairs_in_train_val),
        },
    ];
    match paradigm {
        Some(Paradigm::Om) => checks.push(Check {
            name: "no_seen_clusters".into(),
            pass: r.n_seen_test_clusters == 0,
            detail: format!("{}/{} test clusters seen", r.n_seen_test_clusters, r.n_test_clusters),
        }),
        Some(Paradigm::Cfm) => {
            checks.push(Check {
                name: "all_clusters_seen".into(),
                pass: r.n_seen_test_clusters == r.n_test_clusters,
                detail: format!("{}/{} test clusters seen", r.n_seen_test_clusters, r.n_test_clusters),
            });
            checks.push(Check {
                name: "no_seen_records".into(),
                pass: r.n_seen_test_records == 0,
                detail: format!("{}/{} test records seen", r.n_seen_test_records, r.n_test_records),
            });
        }
        Some(Paradigm::Rl) => checks.push(Check {
            name: "exactly_one_seen_record_per_pair".into(),
            pass: exactly_one_pairs == n_pairs,
            detail: format!("{exactly_one_pairs}/{n_pairs} pairs have exactly one seen record"),
        }),
        Some(Paradigm::Vanilla) | None => {}
    }
    Contract {
        paradigm,
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

/// Audits a bundle against its declared paradigm.
pub fn audit(bundle: &BenchmarkBundle) -> Result<AuditReport> {
    audit_sets(
        &bundle.train,
        &bundle.val,
        &bundle.test,
        &bundle.records,
        Some(bundle.paradigm),
    )
}

/// Audits third-party split files against a record file.
pub fn audit_external(
    train: &Path,
    val: &Path,
    test: &Path,
    records: &Path,
    paradigm: Option<Paradigm>,
) -> Result<AuditReport> {
    let corpus = load_corpus(records)?;
    let hash = corpus.content_hash().to_string();
    let load = |p: &Path| PairSet::load(p, hash.clone());
    audit_sets(&load(train)?, &load(val)?, &load(test)?, &corpus, paradigm)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Aligned plain-text table: one row per named report.
pub fn render_table(rows: &[(String, &AuditReport)]) -> String {
    let header = [
        "Benchmark",
        "Matched:Mismatched",
        "Seen Clusters",
        "Seen Records",
        "One-Seen Pairs",
        "Contract",
    ];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                r.matched_mismatched
                    .ratio
                    .map_or_else(|| "-".to_string(), |k| format!("1:{k:.2}")),
                pct(r.seen_cluster_ratio),
                pct(r.seen_record_ratio),
                pct(r.exactly_one_seen_pair_fraction),
                if r.contract.pass { "pass" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    );
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
