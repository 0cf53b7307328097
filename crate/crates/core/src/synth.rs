//! Deterministic synthetic product corpus.
//!
//! Each cluster gets a canonical attribute set; every record is an
//! independently perturbed copy of it. Clusters are grouped into families
//! that share brand, style and most title tokens, so cross-cluster pairs
//! inside a family are hard negatives. The visual modality is a per-cluster
//! latent centroid plus per-record Gaussian noise.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Corpus, EntityRecord, FAMILY_KEY, TITLE_ATTR};
use crate::error::{Error, Result};
use crate::seed;

/// Meta key under which the generator provenance block is stored.
pub const META_KEY: &str = "synth";
const GENERATOR: &str = "embench-synth";

const DEFAULT_CATEGORIES: [&str; 3] = ["clothing", "shoes", "accessories"];
const COLORS: [&str; 12] = [
    "black", "white", "red", "blue", "green", "grey", "brown", "beige", "pink", "navy", "khaki",
    "purple",
];
const MATERIALS: [&str; 8] = [
    "cotton", "leather", "wool", "linen", "polyester", "canvas", "suede", "silk",
];
const TYPO_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// Inclusive integer range, serialized as `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange(pub usize, pub usize);

impl SizeRange {
    fn sample(self, rng: &mut seed::Rng) -> usize {
        rng.random_range(self.0..=self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturb {
    pub token_drop_p: f64,
    pub token_swap_p: f64,
    pub typo_p: f64,
    pub attr_drop_p: f64,
}

impl Default for Perturb {
    fn default() -> Self {
        Self {
            token_drop_p: 0.4,
            token_swap_p: 0.1,
            typo_p: 0.35,
            attr_drop_p: 0.35,
        }
    }
}

impl Perturb {
    pub fn none() -> Self {
        Self {
            token_drop_p: 0.0,
            token_swap_p: 0.0,
            typo_p: 0.0,
            attr_drop_p: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "defaults::n_clusters")]
    pub n_clusters: usize,
    #[serde(default = "defaults::records_per_cluster")]
    pub records_per_cluster: SizeRange,
    #[serde(default = "defaults::n_categories")]
    pub n_categories: usize,
    #[serde(default = "defaults::vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "defaults::title_len")]
    pub title_len: SizeRange,
    /// Title tokens unique to a cluster; the rest are shared by its family.
    #[serde(default = "defaults::distinct_title_tokens")]
    pub distinct_title_tokens: usize,
    /// Common words per category that family titles draw from.
    #[serde(default = "defaults::category_vocab_size")]
    pub category_vocab_size: usize,
    /// Probability that a family title slot holds a category word rather
    /// than a word of its own.
    #[serde(default = "defaults::category_token_share")]
    pub category_token_share: f64,
    #[serde(default)]
    pub perturb: Perturb,
    #[serde(default = "defaults::image_dim")]
    pub image_dim: usize,
    #[serde(default = "defaults::image_noise_sigma")]
    pub image_noise_sigma: f64,
    #[serde(default = "defaults::family_size")]
    pub hard_negative_family_size: usize,
}

mod defaults {
    use super::SizeRange;
    pub fn n_clusters() -> usize {
        350
    }
    pub fn records_per_cluster() -> SizeRange {
        SizeRange(10, 20)
    }
    pub fn n_categories() -> usize {
        3
    }
    pub fn vocab_size() -> usize {
        4000
    }
    pub fn title_len() -> SizeRange {
        SizeRange(6, 10)
    }
    pub fn distinct_title_tokens() -> usize {
        1
    }
    pub fn category_vocab_size() -> usize {
        24
    }
    pub fn category_token_share() -> f64 {
        0.5
    }
    pub fn image_dim() -> usize {
        16
    }
    pub fn image_noise_sigma() -> f64 {
        0.5
    }
    pub fn family_size() -> usize {
        5
    }
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_clusters: defaults::n_clusters(),
            records_per_cluster: defaults::records_per_cluster(),
            n_categories: defaults::n_categories(),
            vocab_size: defaults::vocab_size(),
            title_len: defaults::title_len(),
            distinct_title_tokens: defaults::distinct_title_tokens(),
            category_vocab_size: defaults::category_vocab_size(),
            category_token_share: defaults::category_token_share(),
            perturb: Perturb::default(),
            image_dim: defaults::image_dim(),
            image_noise_sigma: defaults::image_noise_sigma(),
            hard_negative_family_size: defaults::family_size(),
        }
    }

    /// Parses a JSON config; every field but `seed` has a default.
    pub fn from_json(value: &Value) -> Result<Self> {
        let cfg: Self =
            serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.perturb;
        for (name, v) in [
            ("token_drop_p", p.token_drop_p),
            ("token_swap_p", p.token_swap_p),
            ("typo_p", p.typo_p),
            ("attr_drop_p", p.attr_drop_p),
            ("category_token_share", self.category_token_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is not a probability"));
            }
        }
        for (name, r) in [
            ("records_per_cluster", self.records_per_cluster),
            ("title_len", self.title_len),
        ] {
            if r.0 == 0 || r.0 > r.1 {
                return bad(format!("{name} [{}, {}] is empty or starts at 0", r.0, r.1));
            }
        }
        if self.n_clusters == 0 || self.n_categories == 0 || self.image_dim == 0 {
            return bad("n_clusters, n_categories and image_dim must be positive".into());
        }
        if self.hard_negative_family_size == 0 {
            return bad("hard_negative_family_size must be positive".into());
        }
        if self.distinct_title_tokens == 0 || self.distinct_title_tokens >= self.title_len.0 {
            return bad(format!(
                "distinct_title_tokens must be in [1, {})",
                self.title_len.0
            ));
        }
        let n_families = self.n_clusters.div_ceil(self.hard_negative_family_size);
        let needed = n_families * (self.title_len.1 + 1)
            + self.n_clusters * self.distinct_title_tokens
            + self.n_categories * self.category_vocab_size;
        if self.vocab_size < needed {
            return bad(format!("vocab_size must be at least {needed}"));
        }
        if !(self.image_noise_sigma >= 0.0 && self.image_noise_sigma.is_finite()) {
            return bad("image_noise_sigma must be a non-negative real".into());
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.n_categories)
            .map(|i| match DEFAULT_CATEGORIES.get(i) {
                Some(name) if self.n_categories <= DEFAULT_CATEGORIES.len() => name.to_string(),
                _ => format!("category{i}"),
            })
            .collect()
    }
}

/// Provenance block recording every config field and the toolkit version.
pub fn describe(config: &SynthConfig) -> Value {
    serde_json::json!({
        "generator": GENERATOR,
        "version": crate::VERSION,
        "config": config,
    })
}

/// Recovers the config from a block written by [`describe`].
pub fn config_from_description(block: &Value) -> Result<SynthConfig> {
    let cfg = block
        .get("config")
        .ok_or_else(|| Error::Config("provenance block has no 'config'".into()))?;
    SynthConfig::from_json(cfg)
}

struct Family {
    category: usize,
    brand: String,
    shared_tokens: Vec<String>,
    style: String,
}

pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = seed::derived_rng(config.seed, "synth/corpus");
    let vocab = make_vocab(config.vocab_size, &mut rng);
    let categories = config.category_names();
    // Words are handed out without replacement so clusters never collide on
    // their distinctive tokens by accident.
    let mut pool: Vec<&str> = vocab.iter().map(String::as_str).collect();
    pool.shuffle(&mut rng);
    let mut next_word = pool.into_iter();
    let mut word = move || next_word.next().expect("vocab size validated").to_string();

    let category_words: Vec<Vec<String>> = (0..config.n_categories)
        .map(|_| (0..config.category_vocab_size).map(|_| word()).collect())
        .collect();

    let fam_size = config.hard_negative_family_size;
    let n_families = config.n_clusters.div_ceil(fam_size);
    let families: Vec<Family> = (0..n_families)
        .map(|f| {
            let category = f % config.n_categories;
            let mut common: Vec<&String> = category_words[category].iter().collect();
            common.shuffle(&mut rng);
            let mut common = common.into_iter();
            let shared_tokens = (0..config.title_len.1 - 1)
                .map(|_| {
                    let from_category = rng.random_bool(config.category_token_share);
                    match common.next().filter(|_| from_category) {
                        Some(w) => w.clone(),
                        None => word(),
                    }
                })
                .collect();
            Family {
                category,
                brand: word(),
                shared_tokens,
                style: word(),
            }
        })
        .collect();

    let mut records = Vec::new();
    for c in 0..config.n_clusters {
        let fam_idx = c / fam_size;
        let family = &families[fam_idx];
        let cluster_id = format!("c{c:05}");
        let title_len = config.title_len.sample(&mut rng);
        let n_shared = title_len - 1 - config.distinct_title_tokens;
        let mut title: Vec<String> = vec![family.brand.clone()];
        let mut shared = family.shared_tokens.clone();
        shared.shuffle(&mut rng);
        title.extend(shared.into_iter().take(n_shared));
        title.extend((0..config.distinct_title_tokens).map(|_| word()));
        title[1..].shuffle(&mut rng);

        let mut canonical = BTreeMap::new();
        canonical.insert(TITLE_ATTR.to_string(), title.join(" "));
        canonical.insert("color".into(), COLORS.choose(&mut rng).unwrap().to_string());
        canonical.insert(
            "material".into(),
            MATERIALS.choose(&mut rng).unwrap().to_string(),
        );
        canonical.insert("style".into(), family.style.clone());

        let centroid: Vec<f64> = (0..config.image_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let size = config.records_per_cluster.sample(&mut rng);
        for j in 0..size {
            let attrs = perturb_attrs(&canonical, &config.perturb, &mut rng);
            let image = centroid
                .iter()
                .map(|&m| {
                    let noise: f64 = rng.sample(StandardNormal);
                    m + config.image_noise_sigma * noise
                })
                .collect();
            records.push(EntityRecord {
                record_id: format!("{cluster_id}-r{j:02}"),
                cluster_id: cluster_id.clone(),
                category: categories[family.category].clone(),
                attrs,
                image_vec: Some(image),
                extra: BTreeMap::from([(FAMILY_KEY.to_string(), Value::from(format!("f{fam_idx:04}")))]),
            });
        }
    }
    let meta = BTreeMap::from([(META_KEY.to_string(), describe(config))]);
    Ok(Corpus::from_records(records)?.with_meta(meta))
}

fn make_vocab(size: usize, rng: &mut seed::Rng) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
    let mut seen = HashSet::with_capacity(size);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            w.push_str(ONSETS[..14].choose(rng).unwrap());
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn perturb_attrs(
    canonical: &BTreeMap<String, String>,
    p: &Perturb,
    rng: &mut seed::Rng,
) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (name, value) in canonical {
        let is_title = name == TITLE_ATTR;
        if !is_title && rng.random_bool(p.attr_drop_p) {
            continue;
        }
        let mut tokens: Vec<String> = value.split_whitespace().map(str::to_string).collect();
        if is_title {
            let kept: Vec<String> = tokens
                .iter()
                .filter(|_| !rng.random_bool(p.token_drop_p))
                .cloned()
                .collect();
            if !kept.is_empty() {
                tokens = kept;
            }
            for i in 1..tokens.len() {
                if rng.random_bool(p.token_swap_p) {
                    tokens.swap(i - 1, i);
                }
            }
        }
        for t in tokens.iter_mut() {
            if rng.random_bool(p.typo_p) {
                *t = typo(t, rng);
            }
        }
        out.insert(name.clone(), tokens.join(" "));
    }
    out
}

/// Replaces one character with a different one from a fixed alphabet.
fn typo(token: &str, rng: &mut seed::Rng) -> String {
    let mut chars: Vec<char> = token.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let pos = rng.random_range(0..chars.len());
    loop {
        let c = *TYPO_ALPHABET.choose(rng).unwrap() as char;
        if c != chars[pos] {
            chars[pos] = c;
            break;
        }
    }
    chars.into_iter().collect()
}
