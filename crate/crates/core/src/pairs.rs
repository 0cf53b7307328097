//! Record-pair construction: exhaustive matched pairs inside clusters,
//! ratio-controlled sampling of mismatched pairs across clusters, and the
//! pair-level train/val/test split.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::{self, round_half_up};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Matched,
    Mismatched,
}

impl Label {
    pub fn is_matched(self) -> bool {
        self == Label::Matched
    }
}

/// An unordered record pair stored with `left_id < right_id`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub left_id: Arc<str>,
    pub right_id: Arc<str>,
    pub label: Label,
}

impl LabeledPair {
    /// Canonicalizes the order; `None` when both sides are the same record.
    pub fn new(a: Arc<str>, b: Arc<str>, label: Label) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self {
                left_id: a,
                right_id: b,
                label,
            }),
            std::cmp::Ordering::Greater => Some(Self {
                left_id: b,
                right_id: a,
                label,
            }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.left_id, &self.right_id)
    }
}

/// Canonical position pair inside a corpus, `.0 < .1`.
pub(crate) type PosPair = (u32, u32);

pub(crate) fn pos_pair(a: usize, b: usize) -> PosPair {
    if a < b {
        (a as u32, b as u32)
    } else {
        (b as u32, a as u32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<LabeledPair>,
    pub source_corpus_hash: String,
    pub n_matched: usize,
    pub n_mismatched: usize,
    /// Shortfall and exhaustion notes raised while generating the set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PairSet {
    /// Builds a set, rejecting self-pairs and duplicate canonical pairs.
    pub fn from_pairs(pairs: Vec<LabeledPair>, source_corpus_hash: String) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut canon = Vec::with_capacity(pairs.len());
        for p in pairs {
            let p = LabeledPair::new(p.left_id.clone(), p.right_id.clone(), p.label).ok_or_else(
                || Error::InvalidRecord {
                    record_id: p.left_id.to_string(),
                    reason: "pair joins a record with itself".into(),
                },
            )?;
            if !seen.insert((p.left_id.clone(), p.right_id.clone())) {
                return Err(Error::Config(format!(
                    "duplicate pair ({}, {})",
                    p.left_id, p.right_id
                )));
            }
            canon.push(p);
        }
        Ok(Self::from_canonical(canon, source_corpus_hash))
    }

    fn from_canonical(pairs: Vec<LabeledPair>, source_corpus_hash: String) -> Self {
        let n_matched = pairs.iter().filter(|p| p.label.is_matched()).count();
        let n_mismatched = pairs.len() - n_matched;
        Self {
            pairs,
            source_corpus_hash,
            n_matched,
            n_mismatched,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn from_positions(corpus: &Corpus, pairs: &[(PosPair, Label)]) -> Self {
        let out = pairs
            .iter()
            .map(|&((a, b), label)| {
                LabeledPair::new(
                    corpus.id_at(a as usize).clone(),
                    corpus.id_at(b as usize).clone(),
                    label,
                )
                .expect("positions are distinct")
            })
            .collect();
        Self::from_canonical(out, corpus.content_hash().to_string())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn keys(&self) -> HashSet<(&str, &str)> {
        self.pairs.iter().map(LabeledPair::key).collect()
    }

    /// Observed mismatched:matched ratio, `None` without matched pairs.
    pub fn ratio(&self) -> Option<f64> {
        (self.n_matched > 0).then(|| self.n_mismatched as f64 / self.n_matched as f64)
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        io::encode_jsonl(self.pairs.iter())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, &self.to_jsonl()?)
    }

    pub fn load(path: &Path, source_corpus_hash: String) -> Result<Self> {
        Self::from_pairs(io::read_jsonl(path)?, source_corpus_hash)
    }
}

/// Whether a split honours `|mismatched| = round(k * |matched|)`.
pub fn ratio_holds(n_matched: usize, n_mismatched: usize, k: f64) -> bool {
    n_mismatched == round_half_up(k * n_matched as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Mismatched pairs per matched pair.
    pub k: f64,
    pub split_ratio: [f64; 3],
    pub seed: u64,
    pub max_matched_per_cluster: Option<usize>,
    /// Probability that a mismatched draw comes from the same family.
    pub family_bias: f64,
    pub within_category: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            split_ratio: [0.6, 0.2, 0.2],
            seed: 0,
            max_matched_per_cluster: None,
            family_bias: 0.5,
            within_category: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("k = {} must be a non-negative real", self.k)));
        }
        validate_split_ratio(&self.split_ratio)?;
        if !(0.0..=1.0).contains(&self.family_bias) {
            return Err(Error::Config("family_bias must be a probability".into()));
        }
        Ok(())
    }
}

pub(crate) fn validate_split_ratio(r: &[f64; 3]) -> Result<()> {
    let sum: f64 = r.iter().sum();
    if r.iter().any(|x| !(*x >= 0.0)) || r[0] <= 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratio {r:?} must be non-negative with a positive train share and sum to 1"
        )));
    }
    Ok(())
}

/// Every unordered within-cluster pair over `members` (grouped by cluster),
/// optionally capped per cluster by a uniform subset.
pub(crate) fn matched_among(
    corpus: &Corpus,
    members: &[usize],
    cap: Option<usize>,
    seed: u64,
) -> Vec<PosPair> {
    let groups = group_by_cluster(corpus, members);
    groups
        .par_iter()
        .map(|(cluster, recs)| {
            let mut out = Vec::with_capacity(recs.len() * recs.len().saturating_sub(1) / 2);
            for (i, &a) in recs.iter().enumerate() {
                for &b in &recs[i + 1..] {
                    out.push(pos_pair(a, b));
                }
            }
            if let Some(cap) = cap.filter(|&c| c < out.len()) {
                let label = format!("matched/{}", corpus.clusters()[*cluster].id);
                let mut rng = seed::derived_rng(seed, &label);
                out.shuffle(&mut rng);
                out.truncate(cap);
            }
            out
        })
        .flatten()
        .collect()
}

fn group_by_cluster(corpus: &Corpus, members: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for p in sorted {
        let c = corpus.cluster_index_of(p);
        match groups.last_mut() {
            Some((gc, v)) if *gc == c => v.push(p),
            _ => groups.push((c, vec![p])),
        }
    }
    groups
}

pub fn matched_pairs(corpus: &Corpus, cap: Option<usize>, seed: u64) -> PairSet {
    let all: Vec<usize> = (0..corpus.n_records()).collect();
    let pairs: Vec<_> = matched_among(corpus, &all, cap, seed)
        .into_iter()
        .map(|p| (p, Label::Matched))
        .collect();
    PairSet::from_positions(corpus, &pairs)
}

/// Where mismatched pairs may be drawn from.
#[derive(Clone, Copy)]
pub(crate) enum Universe<'a> {
    /// Both records from one pool.
    Within(&'a [usize]),
    /// One record from each of two disjoint pools.
    Between(&'a [usize], &'a [usize]),
}

pub(crate) struct MismatchSpec<'a> {
    pub universe: Universe<'a>,
    pub n: usize,
    pub within_category: bool,
    pub family_bias: f64,
    pub exclude: Option<&'a HashSet<PosPair>>,
}

pub(crate) struct Sampled {
    pub pairs: Vec<PosPair>,
    pub warnings: Vec<String>,
}

/// Per-record attributes the sampler keys on, as small integers.
struct Keys {
    cluster: Vec<usize>,
    category: Vec<usize>,
    family: Vec<Option<usize>>,
}

impl Keys {
    fn of(corpus: &Corpus) -> Self {
        let mut cats: HashMap<&str, usize> = HashMap::new();
        let mut fams: HashMap<&str, usize> = HashMap::new();
        let mut category = Vec::with_capacity(corpus.n_records());
        let mut family = Vec::with_capacity(corpus.n_records());
        for r in corpus.records() {
            let n = cats.len();
            category.push(*cats.entry(r.category.as_str()).or_insert(n));
            family.push(r.family().map(|f| {
                let n = fams.len();
                *fams.entry(f).or_insert(n)
            }));
        }
        Self {
            cluster: (0..corpus.n_records())
                .map(|i| corpus.cluster_index_of(i))
                .collect(),
            category,
            family,
        }
    }
}

/// A category bucket: left and right members plus its cross-pair count.
struct Bucket {
    left: Vec<usize>,
    right: Vec<usize>,
    universe: u64,
}

fn cross_count_within(keys: &Keys, members: &[usize]) -> u64 {
    let n = members.len() as u64;
    let mut per_cluster: HashMap<usize, u64> = HashMap::new();
    for &m in members {
        *per_cluster.entry(keys.cluster[m]).or_insert(0) += 1;
    }
    let same: u64 = per_cluster.values().map(|c| c * c.saturating_sub(1) / 2).sum();
    n * n.saturating_sub(1) / 2 - same
}

fn cross_count_between(keys: &Keys, left: &[usize], right: &[usize]) -> u64 {
    let mut right_per_cluster: HashMap<usize, u64> = HashMap::new();
    for &m in right {
        *right_per_cluster.entry(keys.cluster[m]).or_insert(0) += 1;
    }
    let r = right.len() as u64;
    left.iter()
        .map(|&a| r - right_per_cluster.get(&keys.cluster[a]).copied().unwrap_or(0))
        .sum()
}

pub(crate) fn sample_mismatched_in(
    corpus: &Corpus,
    spec: &MismatchSpec<'_>,
    rng: &mut seed::Rng,
) -> Sampled {
    let keys = Keys::of(corpus);
    let mut warnings = Vec::new();
    if spec.n == 0 {
        return Sampled {
            pairs: Vec::new(),
            warnings,
        };
    }

    let (left_all, right_all, between) = match spec.universe {
        Universe::Within(pool) => (pool, pool, false),
        Universe::Between(l, r) => (l, r, true),
    };
    let bucket_of = |m: usize| if spec.within_category { keys.category[m] } else { 0 };
    let mut buckets: Vec<Bucket> = Vec::new();
    let mut bucket_index: HashMap<usize, usize> = HashMap::new();
    let mut ensure = |b: usize, buckets: &mut Vec<Bucket>| -> usize {
        *bucket_index.entry(b).or_insert_with(|| {
            buckets.push(Bucket {
                left: Vec::new(),
                right: Vec::new(),
                universe: 0,
            });
            buckets.len() - 1
        })
    };
    for &m in left_all {
        let i = ensure(bucket_of(m), &mut buckets);
        buckets[i].left.push(m);
    }
    if between {
        for &m in right_all {
            let i = ensure(bucket_of(m), &mut buckets);
            buckets[i].right.push(m);
        }
    }
    for b in buckets.iter_mut() {
        if between {
            b.universe = cross_count_between(&keys, &b.left, &b.right);
        } else {
            b.right = b.left.clone();
            b.universe = cross_count_within(&keys, &b.left);
        }
    }

    let in_universe = |a: usize, b: usize| -> bool {
        keys.cluster[a] != keys.cluster[b] && bucket_of(a) == bucket_of(b)
    };
    let excluded_count = spec.exclude.map_or(0u64, |ex| {
        let left_set: HashSet<usize> = left_all.iter().copied().collect();
        let right_set: HashSet<usize> = right_all.iter().copied().collect();
        ex.iter()
            .filter(|&&(a, b)| {
                let (a, b) = (a as usize, b as usize);
                let sides = (left_set.contains(&a) && right_set.contains(&b))
                    || (left_set.contains(&b) && right_set.contains(&a));
                sides && in_universe(a, b)
            })
            .count() as u64
    });
    let universe: u64 = buckets.iter().map(|b| b.universe).sum::<u64>() - excluded_count;
    let is_excluded = |p: &PosPair| spec.exclude.is_some_and(|ex| ex.contains(p));

    let n = spec.n as u64;
    if n > universe {
        warnings.push(format!(
            "mismatched shortfall: requested {n}, only {universe} distinct cross-cluster pairs exist"
        ));
    }
    if n * 2 > universe {
        // Dense request: enumerate the universe and take a shuffled prefix.
        let mut all = Vec::with_capacity(universe as usize);
        for b in &buckets {
            for (i, &a) in b.left.iter().enumerate() {
                let partners = if between { &b.right[..] } else { &b.left[i + 1..] };
                for &c in partners {
                    let p = pos_pair(a, c);
                    if keys.cluster[a] != keys.cluster[c] && !is_excluded(&p) {
                        all.push(p);
                    }
                }
            }
        }
        all.sort_unstable();
        all.shuffle(rng);
        all.truncate(spec.n);
        if spec.family_bias > 0.0 && n <= universe {
            warnings.push(
                "dense mismatched request: pairs drawn uniformly, family bias not applied".into(),
            );
        }
        return Sampled {
            pairs: all,
            warnings,
        };
    }

    // Family buckets over the right side, per category bucket.
    let mut family_members: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (bi, b) in buckets.iter().enumerate() {
        for &m in &b.right {
            if let Some(f) = keys.family[m] {
                family_members.entry((bi, f)).or_default().push(m);
            }
        }
    }
    let weights: Vec<u64> = buckets.iter().map(|b| b.universe).collect();
    let total_weight: u64 = weights.iter().sum();
    let pick_bucket = |rng: &mut seed::Rng| -> usize {
        let mut x = rng.random_range(0..total_weight);
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        weights.len() - 1
    };

    let mut chosen: HashSet<PosPair> = HashSet::with_capacity(spec.n);
    let mut out = Vec::with_capacity(spec.n);
    let mut family_bias = if family_members.is_empty() { 0.0 } else { spec.family_bias };
    let mut family_failures = 0u32;
    const MAX_FAMILY_FAILURES: u32 = 2000;
    while out.len() < spec.n {
        let bi = pick_bucket(rng);
        let b = &buckets[bi];
        let a = b.left[rng.random_range(0..b.left.len())];
        let use_family = family_bias > 0.0 && rng.random_bool(family_bias);
        let partner = if use_family {
            match keys.family[a].and_then(|f| family_members.get(&(bi, f))) {
                Some(members) => members[rng.random_range(0..members.len())],
                None => a,
            }
        } else {
            b.right[rng.random_range(0..b.right.len())]
        };
        let p = pos_pair(a, partner);
        let ok = a != partner
            && keys.cluster[a] != keys.cluster[partner]
            && !is_excluded(&p)
            && !chosen.contains(&p);
        if !ok {
            if use_family {
                family_failures += 1;
                if family_failures > MAX_FAMILY_FAILURES {
                    family_bias = 0.0;
                    warnings.push(format!(
                        "same-family mismatched pairs exhausted after {} draws; continuing uniformly",
                        out.len()
                    ));
                }
            }
            continue;
        }
        if use_family {
            family_failures = 0;
        }
        chosen.insert(p);
        out.push(p);
    }
    Sampled {
        pairs: out,
        warnings,
    }
}

/// Samples `n` distinct cross-cluster pairs over the whole corpus.
pub fn sample_mismatched(
    corpus: &Corpus,
    n: usize,
    seed: u64,
    within_category: bool,
    family_bias: f64,
) -> Result<PairSet> {
    if corpus.n_clusters() < 2 {
        return Err(Error::InsufficientClusters {
            requested: 2,
            available: corpus.n_clusters(),
        });
    }
    let all: Vec<usize> = (0..corpus.n_records()).collect();
    let spec = MismatchSpec {
        universe: Universe::Within(&all),
        n,
        within_category,
        family_bias,
        exclude: None,
    };
    let sampled = sample_mismatched_in(corpus, &spec, &mut seed::rng(seed));
    let labeled: Vec<_> = sampled
        .pairs
        .into_iter()
        .map(|p| (p, Label::Mismatched))
        .collect();
    let mut set = PairSet::from_positions(corpus, &labeled);
    for w in &sampled.warnings {
        log::warn!("{w}");
    }
    set.warnings = sampled.warnings;
    Ok(set)
}

/// Train/val/test pair sets of one pair-level split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPairs {
    pub train: PairSet,
    pub val: PairSet,
    pub test: PairSet,
    pub warnings: Vec<String>,
}

/// Position-level form of [`build_vanilla`] over a subset of records.
pub(crate) fn vanilla_split_with_warnings(
    corpus: &Corpus,
    members: &[usize],
    cfg: &GenConfig,
) -> Result<([Vec<(PosPair, Label)>; 3], Vec<String>)> {
    cfg.validate()?;
    let mut matched = matched_among(
        corpus,
        members,
        cfg.max_matched_per_cluster,
        seed::derive(cfg.seed, "vanilla/matched"),
    );
    let n_mis = round_half_up(cfg.k * matched.len() as f64);
    let spec = MismatchSpec {
        universe: Universe::Within(members),
        n: n_mis,
        within_category: cfg.within_category,
        family_bias: cfg.family_bias,
        exclude: None,
    };
    let mut rng = seed::derived_rng(cfg.seed, "vanilla/mismatched");
    let Sampled {
        pairs: mut mismatched,
        mut warnings,
    } = sample_mismatched_in(corpus, &spec, &mut rng);

    // Stratified by label so every split keeps the requested ratio.
    let mut rng = seed::derived_rng(cfg.seed, "vanilla/split");
    matched.shuffle(&mut rng);
    mismatched.shuffle(&mut rng);
    let m = matched.len();
    let m_train = round_half_up(cfg.split_ratio[0] * m as f64).min(m);
    let m_val = round_half_up(cfg.split_ratio[1] * m as f64).min(m - m_train);
    let m_counts = [m_train, m_val, m - m_train - m_val];
    let mut x_left = mismatched.len();
    let mut x_counts = [0usize; 3];
    for i in 0..2 {
        x_counts[i] = round_half_up(cfg.k * m_counts[i] as f64).min(x_left);
        x_left -= x_counts[i];
    }
    x_counts[2] = x_left;
    if mismatched.len() < n_mis {
        warnings.push(format!(
            "vanilla splits short of mismatched pairs: {} of {n_mis}",
            mismatched.len()
        ));
    }

    let mut splits: [Vec<(PosPair, Label)>; 3] = Default::default();
    let (mut mi, mut xi) = (0, 0);
    for s in 0..3 {
        let part = &mut splits[s];
        part.extend(matched[mi..mi + m_counts[s]].iter().map(|&p| (p, Label::Matched)));
        part.extend(
            mismatched[xi..xi + x_counts[s]]
                .iter()
                .map(|&p| (p, Label::Mismatched)),
        );
        mi += m_counts[s];
        xi += x_counts[s];
        part.shuffle(&mut rng);
    }
    Ok((splits, warnings))
}

/// Exhaustive matched pairs plus `round(k * |matched|)` mismatched pairs,
/// split at the pair level. Records and clusters recur across splits.
pub fn build_vanilla(corpus: &Corpus, cfg: &GenConfig) -> Result<SplitPairs> {
    if corpus.n_clusters() < 2 && cfg.k > 0.0 {
        return Err(Error::InsufficientClusters {
            requested: 2,
            available: corpus.n_clusters(),
        });
    }
    let all: Vec<usize> = (0..corpus.n_records()).collect();
    let (splits, warnings) = vanilla_split_with_warnings(corpus, &all, cfg)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let [train, val, test] = splits.map(|s| PairSet::from_positions(corpus, &s));
    Ok(SplitPairs {
        train,
        val,
        test,
        warnings,
    })
}
