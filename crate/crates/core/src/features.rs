//! Pair features for the baseline matchers.
//!
//! Text block: title token Jaccard, attribute token Jaccard, TF-IDF cosine,
//! title character-trigram Dice, token-length ratio and, when enabled, two
//! entity-memory features. Visual block: cosine, negative Euclidean
//! distance and mean/max/std of the absolute elementwise difference.
//!
//! Tokens are interned in lexicographic order, so every floating-point sum
//! runs in the same order whichever corpus the records come from.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntityRecord};
use crate::pairs::PairSet;

pub const TEXT_BASE_FEATURES: [&str; 5] = [
    "title_jaccard",
    "attr_jaccard",
    "tfidf_cosine",
    "title_trigram_dice",
    "length_ratio",
];
pub const MEMORY_FEATURES: [&str; 2] = ["memory_overlap", "memory_same_top"];
pub const VISUAL_FEATURES: [&str; 5] = ["cosine", "neg_euclidean", "absdiff_mean", "absdiff_max", "absdiff_std"];

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Character trigrams of the lowercased text padded with one space each side.
pub fn trigrams(text: &str) -> BTreeSet<String> {
    let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

fn record_tokens(r: &EntityRecord) -> Vec<String> {
    r.attrs.values().flat_map(|v| tokenize(v)).collect()
}

/// Smooth inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
/// Tokens never seen in fitting get the `df = 0` value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub n_docs: usize,
    pub idf: BTreeMap<String, f64>,
}

impl IdfTable {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a EntityRecord>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0;
        for r in records {
            n_docs += 1;
            let unique: BTreeSet<String> = record_tokens(r).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, Self::formula(n_docs, d)))
            .collect();
        Self { n_docs, idf }
    }

    fn formula(n_docs: usize, df: usize) -> f64 {
        ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn unknown(&self) -> f64 {
        Self::formula(self.n_docs, 0)
    }

    pub fn get(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or_else(|| self.unknown())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub enabled: bool,
    /// Softmax temperature over centroid cosines.
    pub temperature: f64,
    /// Components kept per record.
    pub top_k: usize,
    /// Folds for out-of-fold memory features on training pairs; below 2
    /// disables cross-fitting.
    pub cross_fit_folds: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            temperature: 0.05,
            top_k: 5,
            cross_fit_folds: 5,
        }
    }
}

/// Entities observed in training: connected components of the matched
/// training pairs, each summarised by the normalised mean TF-IDF vector of
/// its records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityMemory {
    pub config: MemoryConfig,
    pub centroids: Vec<BTreeMap<String, f64>>,
}

/// Everything fitted on training data that featurization depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub idf: IdfTable,
    pub memory: Option<EntityMemory>,
}

impl FeatureSpace {
    /// Fits IDF on the records referenced by `train` and, if enabled, the
    /// entity memory on its matched pairs.
    pub fn fit(corpus: &Corpus, train: &PairSet, memory: &MemoryConfig) -> Self {
        let mut positions: Vec<usize> = train
            .pairs
            .iter()
            .flat_map(|p| [&p.left_id, &p.right_id])
            .filter_map(|id| corpus.position(id))
            .collect();
        positions.sort_unstable();
        positions.dedup();
        let idf = IdfTable::fit(positions.iter().map(|&i| &corpus.records()[i]));
        let memory = memory.enabled.then(|| EntityMemory {
            config: memory.clone(),
            centroids: fit_centroids(corpus, train, &idf),
        });
        Self { idf, memory }
    }

    /// Same IDF table with the memory refitted on `train` only.
    pub fn refit_memory(&self, corpus: &Corpus, train: &PairSet) -> Self {
        Self {
            idf: self.idf.clone(),
            memory: self.memory.as_ref().map(|m| EntityMemory {
                config: m.config.clone(),
                centroids: fit_centroids(corpus, train, &self.idf),
            }),
        }
    }

    pub fn text_names(&self) -> Vec<&'static str> {
        let mut names = TEXT_BASE_FEATURES.to_vec();
        if self.memory.is_some() {
            names.extend(MEMORY_FEATURES);
        }
        names
    }

    pub fn text_dim(&self) -> usize {
        self.text_names().len()
    }
}

fn tfidf_by_token(r: &EntityRecord, idf: &IdfTable) -> BTreeMap<String, f64> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in record_tokens(r) {
        *tf.entry(t).or_default() += 1.0;
    }
    for (t, w) in tf.iter_mut() {
        *w *= idf.get(t);
    }
    let norm = tf.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        tf.values_mut().for_each(|w| *w /= norm);
    }
    tf
}

fn fit_centroids(corpus: &Corpus, train: &PairSet, idf: &IdfTable) -> Vec<BTreeMap<String, f64>> {
    let n = corpus.n_records();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut member = vec![false; n];
    for p in train.pairs.iter().filter(|p| p.label.is_matched()) {
        let (Some(a), Some(b)) = (corpus.position(&p.left_id), corpus.position(&p.right_id)) else {
            continue;
        };
        member[a] = true;
        member[b] = true;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    // Components ordered by their smallest member position.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..n).filter(|&i| member[i]) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups
        .into_values()
        .map(|members| {
            let mut sum: BTreeMap<String, f64> = BTreeMap::new();
            for &i in &members {
                for (t, w) in tfidf_by_token(&corpus.records()[i], idf) {
                    *sum.entry(t).or_default() += w;
                }
            }
            let norm = sum.values().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                sum.values_mut().for_each(|w| *w /= norm);
            }
            sum
        })
        .collect()
}

/// Per-record quantities reused across every pair the record appears in.
#[derive(Clone, Debug, Default)]
struct RecordView {
    title: Vec<u32>,
    attrs: Vec<u32>,
    n_tokens: usize,
    tfidf: Vec<(u32, f64)>,
    trigrams: Vec<u32>,
    memory: Vec<(u32, f64)>,
    memory_top: Option<u32>,
}

/// Pair features. `visual` is absent when either record lacks an image.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub text: Vec<f64>,
    pub visual: Option<Vec<f64>>,
}

/// A feature space applied to one corpus: every record prepared once.
pub struct Prepared<'c> {
    corpus: &'c Corpus,
    space: &'c FeatureSpace,
    views: Vec<RecordView>,
    empty: Vec<bool>,
}

struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    fn new(vocab: BTreeSet<String>) -> Self {
        let ids = vocab.into_iter().enumerate().map(|(i, t)| (t, i as u32)).collect();
        Self { ids }
    }

    fn sorted_ids<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        let mut ids: Vec<u32> = tokens.into_iter().map(|t| self.ids[t]).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl<'c> Prepared<'c> {
    pub fn new(corpus: &'c Corpus, space: &'c FeatureSpace) -> Self {
        let mut vocab: BTreeSet<String> = space.idf.idf.keys().cloned().collect();
        let mut grams: BTreeSet<String> = BTreeSet::new();
        for r in corpus.records() {
            vocab.extend(record_tokens(r));
            grams.extend(trigrams(r.title()));
        }
        if let Some(m) = &space.memory {
            for c in &m.centroids {
                vocab.extend(c.keys().cloned());
            }
        }
        let words = Interner::new(vocab);
        let grams = Interner::new(grams);
        let centroids: Vec<Vec<(u32, f64)>> = space
            .memory
            .iter()
            .flat_map(|m| &m.centroids)
            .map(|c| c.iter().map(|(t, w)| (words.ids[t.as_str()], *w)).collect())
            .collect();
        let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); words.ids.len()];
        for (ci, c) in centroids.iter().enumerate() {
            for &(t, w) in c {
                postings[t as usize].push((ci as u32, w));
            }
        }

        let views: Vec<RecordView> = corpus
            .records()
            .par_iter()
            .map(|r| {
                let tokens = record_tokens(r);
                let title_tokens = tokenize(r.title());
                let tf = tfidf_by_token(r, &space.idf);
                let tfidf: Vec<(u32, f64)> = tf.iter().map(|(t, w)| (words.ids[t.as_str()], *w)).collect();
                let (memory, memory_top) = match &space.memory {
                    Some(m) => recall(&tfidf, &postings, centroids.len(), &m.config),
                    None => (Vec::new(), None),
                };
                let tri = trigrams(r.title());
                RecordView {
                    title: words.sorted_ids(title_tokens.iter().map(String::as_str)),
                    attrs: words.sorted_ids(tokens.iter().map(String::as_str)),
                    n_tokens: tokens.len(),
                    tfidf,
                    trigrams: grams.sorted_ids(tri.iter().map(String::as_str)),
                    memory,
                    memory_top,
                }
            })
            .collect();
        let empty = corpus.records().iter().map(|r| r.attrs.values().all(|v| tokenize(v).is_empty())).collect();
        Self {
            corpus,
            space,
            views,
            empty,
        }
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn space(&self) -> &'c FeatureSpace {
        self.space
    }

    /// Features of the records at corpus positions `a` and `b`.
    pub fn pair(&self, a: usize, b: usize) -> PairFeatures {
        PairFeatures {
            text: self.text(a, b),
            visual: self.visual(a, b),
        }
    }

    /// True when both records have no attribute tokens at all; their text
    /// features are all zero.
    pub fn is_degenerate(&self, a: usize, b: usize) -> bool {
        self.empty[a] && self.empty[b]
    }

    pub fn text(&self, a: usize, b: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.space.text_dim());
        self.text_into(a, b, &mut out);
        out
    }

    pub fn text_into(&self, a: usize, b: usize, out: &mut Vec<f64>) {
        if self.is_degenerate(a, b) {
            out.extend(std::iter::repeat_n(0.0, self.space.text_dim()));
            return;
        }
        let (x, y) = (&self.views[a], &self.views[b]);
        out.push(jaccard(&x.title, &y.title));
        out.push(jaccard(&x.attrs, &y.attrs));
        out.push(sparse_dot(&x.tfidf, &y.tfidf));
        out.push(dice(&x.trigrams, &y.trigrams));
        let (lo, hi) = (x.n_tokens.min(y.n_tokens), x.n_tokens.max(y.n_tokens));
        out.push(if hi == 0 { 0.0 } else { lo as f64 / hi as f64 });
        if self.space.memory.is_some() {
            out.push(sparse_dot(&x.memory, &y.memory));
            let same = x.memory_top.is_some() && x.memory_top == y.memory_top;
            out.push(if same { 1.0 } else { 0.0 });
        }
    }

    pub fn visual(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let (x, y) = (self.corpus.records()[a].image_vec.as_ref()?, self.corpus.records()[b].image_vec.as_ref()?);
        Some(visual_features(x, y))
    }

    pub fn visual_into(&self, a: usize, b: usize, out: &mut Vec<f64>) -> bool {
        match self.visual(a, b) {
            Some(v) => {
                out.extend(v);
                true
            }
            None => false,
        }
    }
}

/// Top-k components by centroid cosine with softmax weights over the kept
/// set, sorted by component index.
fn recall(
    tfidf: &[(u32, f64)],
    postings: &[Vec<(u32, f64)>],
    n_components: usize,
    config: &MemoryConfig,
) -> (Vec<(u32, f64)>, Option<u32>) {
    if n_components == 0 || config.top_k == 0 {
        return (Vec::new(), None);
    }
    let mut sims = vec![0.0; n_components];
    for &(t, w) in tfidf {
        for &(c, cw) in &postings[t as usize] {
            sims[c as usize] += w * cw;
        }
    }
    let mut order: Vec<u32> = (0..n_components as u32).collect();
    order.sort_by(|&i, &j| sims[j as usize].total_cmp(&sims[i as usize]).then(i.cmp(&j)));
    order.truncate(config.top_k);
    let best = sims[order[0] as usize];
    let mut kept: Vec<(u32, f64)> = order
        .iter()
        .map(|&c| (c, ((sims[c as usize] - best) / config.temperature).exp()))
        .collect();
    let z: f64 = kept.iter().map(|(_, w)| w).sum();
    kept.iter_mut().for_each(|(_, w)| *w /= z);
    let top = order[0];
    kept.sort_unstable_by_key(|(c, _)| *c);
    (kept, Some(top))
}

fn intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Jaccard of two sorted, deduplicated id sets; 0 when both are empty.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Dice coefficient of two sorted, deduplicated id sets.
pub fn dice(a: &[u32], b: &[u32]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        0.0
    } else {
        2.0 * intersection(a, b) as f64 / total as f64
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

pub fn visual_features(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (mut dot, mut na, mut nb, mut sq) = (0.0, 0.0, 0.0, 0.0);
    let (mut sum, mut max, mut sum_sq) = (0.0, 0.0f64, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
        let d = (x - y).abs();
        sq += d * d;
        sum += d;
        sum_sq += d * d;
        max = max.max(d);
    }
    let n = a.len().max(1) as f64;
    let denom = (na * nb).sqrt();
    let cos = if denom > 0.0 { (dot / denom).clamp(-1.0, 1.0) } else { 0.0 };
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    vec![cos, -sq.sqrt(), mean, max, var.sqrt()]
}

/// Featurizes a single pair against `space`, preparing only the two records.
/// The warning is set when both records carry no attribute text.
pub fn featurize(left: &EntityRecord, right: &EntityRecord, space: &FeatureSpace) -> (PairFeatures, Option<String>) {
    let mut l = left.clone();
    let mut r = right.clone();
    if l.record_id == r.record_id {
        r.record_id.push_str("#right");
    }
    // Placing both in one cluster keeps the two-record corpus valid even
    // when the originals disagree on category.
    l.cluster_id = "pair".into();
    r.cluster_id = "pair".into();
    r.category = l.category.clone();
    let corpus = Corpus::from_records(vec![l, r]).expect("two distinct valid records");
    let prepared = Prepared::new(&corpus, space);
    let warning = prepared
        .is_degenerate(0, 1)
        .then(|| format!("records {} and {} have no attribute text; text features are zero", left.record_id, right.record_id));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    (prepared.pair(0, 1), warning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::rec;
    use crate::pairs::{Label, LabeledPair};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn space_for(records: &[EntityRecord]) -> FeatureSpace {
        FeatureSpace {
            idf: IdfTable::fit(records),
            memory: None,
        }
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Red-Shoe, size 42!"), vec!["red", "shoe", "size", "42"]);
        assert!(tokenize(" --- ").is_empty());
    }

    #[test]
    fn identical_records() {
        let a = rec("a", "c", "x", "blue cotton shirt");
        let space = space_for(std::slice::from_ref(&a));
        let (f, w) = featurize(&a, &a, &space);
        assert!(w.is_none());
        assert_eq!(f.text[0], 1.0);
        assert_eq!(f.text[1], 1.0);
        assert!((f.text[2] - 1.0).abs() < 1e-12);
        assert_eq!(f.text[3], 1.0);
        assert_eq!(f.text[4], 1.0);
    }

    #[test]
    fn disjoint_titles() {
        let a = rec("a", "c", "x", "alpha beta");
        let b = rec("b", "d", "x", "gamma delta");
        let (f, _) = featurize(&a, &b, &space_for(&[a.clone(), b.clone()]));
        assert_eq!(f.text[0], 0.0);
        assert_eq!(f.text[2], 0.0);
    }

    #[test]
    fn hand_computed_fixture() {
        // Titles {abc, abd, x} vs {abc, x, y}: Jaccard 2/4.
        let a = rec("a", "c", "x", "abc abd x");
        let b = rec("b", "c", "x", "abc x y");
        let (f, _) = featurize(&a, &b, &space_for(&[a.clone(), b.clone()]));
        assert_eq!(f.text[0], 0.5);
        // " abc abd x ": " ab" abc "bc " "c a" abd "bd " "d x" " x " (8).
        // " abc x y ": " ab" abc "bc " "c x" " x " "x y" " y " (7).
        // Shared: " ab" abc "bc " " x ", so Dice = 2*4/15.
        let ta = trigrams("abc abd x");
        let tb = trigrams("abc x y");
        assert_eq!((ta.len(), tb.len()), (8, 7));
        assert_eq!(ta.intersection(&tb).count(), 4);
        assert_eq!(f.text[3], 8.0 / 15.0);
        assert_eq!(f.text[4], 1.0);
    }

    #[test]
    fn empty_attrs_give_zero_text_and_warning() {
        let a = rec("a", "c", "x", "...");
        let b = rec("b", "c", "x", "--");
        let space = space_for(&[]);
        let (f, w) = featurize(&a, &b, &space);
        assert!(w.is_some());
        assert!(f.text.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_image_drops_visual_block() {
        let mut a = rec("a", "c", "x", "t");
        let b = rec("b", "c", "x", "t");
        a.image_vec = Some(vec![1.0, 0.0]);
        let (f, _) = featurize(&a, &b, &space_for(&[]));
        assert!(f.visual.is_none());
    }

    #[test]
    fn visual_fixture() {
        let v = visual_features(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((v[2], v[3], v[4]), (1.0, 1.0, 0.0));
    }

    #[test]
    fn unknown_token_gets_largest_idf() {
        let recs = [rec("a", "c", "x", "p q"), rec("b", "c", "x", "p")];
        let idf = IdfTable::fit(&recs);
        assert_eq!(idf.get("p"), 1.0);
        assert!(idf.get("q") < idf.get("zzz"));
        assert_eq!(idf.get("zzz"), idf.unknown());
    }

    #[test]
    fn memory_recalls_training_entities() {
        let records = vec![
            rec("a1", "A", "x", "red lamp alpha"),
            rec("a2", "A", "x", "red lamp alpha beta"),
            rec("b1", "B", "x", "blue chair gamma"),
            rec("b2", "B", "x", "blue chair gamma delta"),
            rec("a3", "A", "x", "lamp alpha red"),
            rec("b3", "B", "x", "chair gamma"),
        ];
        let corpus = Corpus::from_records(records).unwrap();
        let pair = |l: &str, r: &str, label| LabeledPair::new(Arc::from(l), Arc::from(r), label).unwrap();
        let train = PairSet::from_pairs(
            vec![
                pair("a1", "a2", Label::Matched),
                pair("b1", "b2", Label::Matched),
                pair("a1", "b1", Label::Mismatched),
            ],
            String::new(),
        )
        .unwrap();
        let space = FeatureSpace::fit(&corpus, &train, &MemoryConfig::default());
        assert_eq!(space.memory.as_ref().unwrap().centroids.len(), 2);
        let prepared = Prepared::new(&corpus, &space);
        let pos = |id: &str| corpus.position(id).unwrap();
        let same = prepared.text(pos("a3"), pos("a1"));
        let diff = prepared.text(pos("a3"), pos("b3"));
        assert_eq!(same[6], 1.0);
        assert_eq!(diff[6], 0.0);
        assert!(same[5] > 0.9 && diff[5] < 0.1, "{same:?} {diff:?}");
    }

    fn arb_record(id: &'static str) -> impl Strategy<Value = EntityRecord> {
        (
            "[a-c]{1,3}( [a-c]{1,3}){0,4}",
            "[a-d]{0,4}",
            prop::option::of(prop::collection::vec(-2.0f64..2.0, 3)),
        )
            .prop_map(move |(title, color, image)| {
                let mut r = rec(id, "c", "x", &title);
                r.attrs.insert("color".into(), color);
                r.image_vec = image;
                r
            })
    }

    proptest! {
        #[test]
        fn symmetric_and_in_range(a in arb_record("a"), b in arb_record("b")) {
            let space = space_for(&[a.clone()]);
            let (ab, _) = featurize(&a, &b, &space);
            let (ba, _) = featurize(&b, &a, &space);
            prop_assert_eq!(&ab, &ba);
            for &x in &ab.text[..4] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
            }
            if let Some(v) = &ab.visual {
                prop_assert!((-1.0..=1.0).contains(&v[0]));
                prop_assert!(v[1] <= 0.0);
            }
        }
    }
}
