//! Records, clusters and corpora: ingestion, validation and serialization.
//!
//! A corpus is stored as JSONL, one record per line, with the cluster id
//! carried on each record. Gold match labels are never ingested; they follow
//! from cluster co-membership.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;

/// Attribute that holds the record title, when present.
pub const TITLE_ATTR: &str = "title";

/// Optional per-record key naming a group of look-alike clusters.
pub const FAMILY_KEY: &str = "family";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub record_id: String,
    pub cluster_id: String,
    pub category: String,
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_vec: Option<Vec<f64>>,
    /// Keys outside the schema, kept so a load/save cycle is lossless.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl EntityRecord {
    /// The title attribute, falling back to the first non-empty attribute.
    pub fn title(&self) -> &str {
        match self.attrs.get(TITLE_ATTR) {
            Some(t) if !t.trim().is_empty() => t,
            _ => self
                .attrs
                .values()
                .find(|v| !v.trim().is_empty())
                .map(String::as_str)
                .unwrap_or(""),
        }
    }

    /// All attribute values joined in attribute-name order.
    pub fn attr_text(&self) -> String {
        let mut out = String::new();
        for v in self.attrs.values().filter(|v| !v.trim().is_empty()) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(v.trim());
        }
        out
    }

    pub fn family(&self) -> Option<&str> {
        self.extra.get(FAMILY_KEY).and_then(Value::as_str)
    }

    fn check(&self) -> Result<()> {
        if self.record_id.is_empty() {
            return Err(Error::InvalidRecord {
                record_id: String::new(),
                reason: "record_id is empty".into(),
            });
        }
        if !self.attrs.values().any(|v| !v.trim().is_empty()) {
            return Err(Error::InvalidRecord {
                record_id: self.record_id.clone(),
                reason: "no non-empty textual attribute".into(),
            });
        }
        if let Some(v) = &self.image_vec {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidRecord {
                    record_id: self.record_id.clone(),
                    reason: "image_vec contains a non-finite value".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSpan {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

impl ClusterSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// An immutable, validated set of entity clusters.
///
/// Records are stored flat, grouped by cluster in cluster-id order, so a
/// record can be addressed by its position. Record order inside a cluster is
/// insertion (file) order.
#[derive(Clone, Debug)]
pub struct Corpus {
    records: Vec<EntityRecord>,
    ids: Vec<Arc<str>>,
    clusters: Vec<ClusterSpan>,
    cluster_of: Vec<usize>,
    index: HashMap<Arc<str>, usize>,
    image_dim: Option<usize>,
    hash: OnceLock<String>,
    pub meta: BTreeMap<String, Value>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.image_dim == other.image_dim
    }
}

impl Corpus {
    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            ids: Vec::new(),
            clusters: Vec::new(),
            cluster_of: Vec::new(),
            index: HashMap::new(),
            image_dim: None,
            hash: OnceLock::new(),
            meta: BTreeMap::new(),
        }
    }

    /// Groups records by `cluster_id` and validates every corpus invariant.
    pub fn from_records(records: Vec<EntityRecord>) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<EntityRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(r.cluster_id.clone()).or_default().push(r);
        }
        Self::from_clusters(grouped)
    }

    pub fn from_clusters(clusters: BTreeMap<String, Vec<EntityRecord>>) -> Result<Self> {
        let mut out = Self::empty();
        for (cid, members) in clusters {
            if members.is_empty() {
                return Err(Error::EmptyCluster(cid));
            }
            let start = out.records.len();
            let len = members.len();
            for r in members {
                r.check()?;
                if r.cluster_id != cid {
                    return Err(Error::InvalidRecord {
                        record_id: r.record_id.clone(),
                        reason: format!("cluster_id '{}' filed under cluster '{cid}'", r.cluster_id),
                    });
                }
                if let Some(v) = &r.image_vec {
                    match out.image_dim {
                        None if v.is_empty() => {
                            return Err(Error::InvalidRecord {
                                record_id: r.record_id.clone(),
                                reason: "image_vec is empty".into(),
                            })
                        }
                        None => out.image_dim = Some(v.len()),
                        Some(d) if d != v.len() => {
                            return Err(Error::ImageDimMismatch {
                                record_id: r.record_id.clone(),
                                expected: d,
                                found: v.len(),
                            })
                        }
                        Some(_) => {}
                    }
                }
                let id: Arc<str> = Arc::from(r.record_id.as_str());
                if out.index.insert(id.clone(), out.records.len()).is_some() {
                    return Err(Error::DuplicateRecordId(r.record_id));
                }
                out.ids.push(id);
                out.cluster_of.push(out.clusters.len());
                out.records.push(r);
            }
            out.clusters.push(ClusterSpan { id: cid, start, len });
        }
        Ok(out)
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn clusters(&self) -> &[ClusterSpan] {
        &self.clusters
    }

    pub fn cluster_records(&self, cluster: usize) -> &[EntityRecord] {
        &self.records[self.clusters[cluster].range()]
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_dim(&self) -> Option<usize> {
        self.image_dim
    }

    /// Shared handle to the id of the record at `idx`.
    pub fn id_at(&self, idx: usize) -> &Arc<str> {
        &self.ids[idx]
    }

    pub fn cluster_index_of(&self, idx: usize) -> usize {
        self.cluster_of[idx]
    }

    pub fn position(&self, record_id: &str) -> Option<usize> {
        self.index.get(record_id).copied()
    }

    pub fn get(&self, record_id: &str) -> Option<&EntityRecord> {
        self.position(record_id).map(|i| &self.records[i])
    }

    /// Category shared by every record of the cluster, or `None` if mixed.
    pub fn cluster_category(&self, cluster: usize) -> Option<&str> {
        let recs = self.cluster_records(cluster);
        let first = recs.first()?.category.as_str();
        recs.iter().all(|r| r.category == first).then_some(first)
    }

    /// Categories in sorted order.
    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self.records.iter().map(|r| r.category.clone()).collect();
        cats.sort();
        cats.dedup();
        cats
    }

    /// Builds a new corpus from a subset of record positions.
    pub fn subset<I: IntoIterator<Item = usize>>(&self, positions: I) -> Result<Self> {
        let mut keep: Vec<usize> = positions.into_iter().collect();
        keep.sort_unstable();
        keep.dedup();
        let records = keep.into_iter().map(|i| self.records[i].clone()).collect();
        Ok(Self::from_records(records)?.with_meta(self.meta.clone()))
    }

    /// Records keyed by id, the equality used for round-trip checks.
    pub fn by_id(&self) -> BTreeMap<&str, &EntityRecord> {
        self.records.iter().map(|r| (r.record_id.as_str(), r)).collect()
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        io::encode_jsonl(self.records.iter())
    }

    /// SHA-256 of the canonical JSONL encoding, computed once.
    pub fn content_hash(&self) -> &str {
        self.hash.get_or_init(|| {
            let bytes = self.to_jsonl().expect("records always serialize");
            io::sha256_hex(&bytes)
        })
    }
}

pub fn meta_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Loads a JSONL corpus and its optional `<path>.meta.json` sidecar.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records: Vec<EntityRecord> = io::read_jsonl(path)?;
    let corpus = Corpus::from_records(records)?;
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        io::read_json(&meta_file)?
    } else {
        BTreeMap::new()
    };
    Ok(corpus.with_meta(meta))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    io::atomic_write(path, &corpus.to_jsonl()?)?;
    if !corpus.meta.is_empty() {
        io::write_json(&meta_path(path), &corpus.meta)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_clusters: usize,
    pub n_records: usize,
    pub size_min: Option<usize>,
    pub size_mean: Option<f64>,
    pub size_max: Option<usize>,
    /// Record count per category.
    pub categories: BTreeMap<String, usize>,
    pub image_coverage: Option<f64>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let sizes: Vec<usize> = corpus.clusters.iter().map(|c| c.len).collect();
    let mut categories = BTreeMap::new();
    for r in &corpus.records {
        *categories.entry(r.category.clone()).or_insert(0) += 1;
    }
    let n = corpus.n_records();
    let with_image = corpus.records.iter().filter(|r| r.image_vec.is_some()).count();
    CorpusStats {
        n_clusters: sizes.len(),
        n_records: n,
        size_min: sizes.iter().min().copied(),
        size_mean: (!sizes.is_empty()).then(|| n as f64 / sizes.len() as f64),
        size_max: sizes.iter().max().copied(),
        categories,
        image_coverage: (n > 0).then(|| with_image as f64 / n as f64),
    }
}

#[derive(Clone, Debug)]
pub struct CategoryFilter {
    pub corpus: Corpus,
    /// Clusters dropped because their records span several categories.
    pub mixed_clusters: Vec<String>,
    pub warnings: Vec<String>,
}

/// Keeps exactly the clusters whose records all carry `category`.
pub fn filter_by_category(corpus: &Corpus, category: &str) -> CategoryFilter {
    let mut keep = Vec::new();
    let mut mixed_clusters = Vec::new();
    let mut warnings = Vec::new();
    for (ci, span) in corpus.clusters.iter().enumerate() {
        match corpus.cluster_category(ci) {
            Some(c) if c == category => keep.extend(span.range()),
            Some(_) => {}
            None => {
                if corpus.cluster_records(ci).iter().any(|r| r.category == category) {
                    mixed_clusters.push(span.id.clone());
                }
            }
        }
    }
    if keep.is_empty() && mixed_clusters.is_empty() {
        warnings.push(format!("category '{category}' does not occur in the corpus"));
    }
    if !mixed_clusters.is_empty() {
        warnings.push(format!(
            "{} mixed-category cluster(s) excluded from '{category}'",
            mixed_clusters.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let corpus = corpus
        .subset(keep)
        .expect("subset of a valid corpus is valid");
    CategoryFilter {
        corpus,
        mixed_clusters,
        warnings,
    }
}
