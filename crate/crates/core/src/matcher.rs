//! Logistic baseline matchers and gated text/visual fusion.
//!
//! Text and visual scorers are logistic models on standardized pair
//! features. The fused scorer mixes them with an input-dependent gate,
//! `s = g * s_visual + (1 - g) * s_text`, where
//! `g = sigmoid(w_g . [x_text ; x_visual] + b_g)`. All blocks are fitted
//! jointly by minibatch Adam on the weighted binary cross-entropy of the
//! final score, with L2 on the weights (not the biases). The epoch with the
//! best validation F1 is kept.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{FeatureSpace, MemoryConfig, Prepared, VISUAL_FEATURES};
use crate::io;
use crate::pairs::PairSet;
use crate::seed;

pub const MODEL_SCHEMA: &str = "embench.model/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Text,
    Visual,
    Fused,
}

impl MatcherKind {
    pub const ALL: [MatcherKind; 3] = [MatcherKind::Text, MatcherKind::Visual, MatcherKind::Fused];

    pub fn key(self) -> &'static str {
        match self {
            MatcherKind::Text => "text",
            MatcherKind::Visual => "visual",
            MatcherKind::Fused => "fused",
        }
    }

    fn uses_text(self) -> bool {
        self != MatcherKind::Visual
    }

    fn uses_visual(self) -> bool {
        self != MatcherKind::Text
    }
}

impl fmt::Display for MatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for MatcherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(MatcherKind::Text),
            "visual" => Ok(MatcherKind::Visual),
            "fused" => Ok(MatcherKind::Fused),
            _ => Err(Error::Config(format!("unknown matcher kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
    /// Pick the decision threshold that maximizes val F1 instead of 0.5.
    pub threshold_sweep: bool,
    pub memory: MemoryConfig,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 30,
            batch_size: 256,
            l2: 1e-4,
            seed: 0,
            class_weighting: false,
            threshold_sweep: false,
            memory: MemoryConfig::default(),
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if self.memory.enabled && !(self.memory.temperature > 0.0) {
            return Err(Error::Config("memory temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Logistic {
    fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Per-feature standardization; constant features are only centred.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim.max(1)).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub loss_curve: Vec<f64>,
    pub val_f1_curve: Vec<f64>,
    pub class_weights: [f64; 2],
    pub threshold_sweep: bool,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatcherModel {
    pub schema: String,
    pub kind: MatcherKind,
    pub space: FeatureSpace,
    pub text_scaler: Option<Scaler>,
    pub visual_scaler: Option<Scaler>,
    pub text: Option<Logistic>,
    pub visual: Option<Logistic>,
    pub gate: Option<Logistic>,
    pub threshold: f64,
    pub hyper: Hyper,
    pub log: TrainingLog,
    /// Digest of the corpus the training pairs refer to.
    pub corpus_hash: String,
}

/// Numerically stable logistic function; maps `-inf` to 0 and `inf` to 1
/// exactly.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scores of every block for one standardized input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockScores {
    pub text: Option<f64>,
    pub visual: Option<f64>,
    pub gate: Option<f64>,
    pub score: f64,
}

impl MatcherModel {
    /// Scores raw (unstandardized) features.
    pub fn score_raw(&self, text: &[f64], visual: Option<&[f64]>) -> Result<BlockScores> {
        let mut xt = text.to_vec();
        let mut xv = visual.map(<[f64]>::to_vec);
        if let Some(s) = &self.text_scaler {
            s.apply(&mut xt);
        }
        if let (Some(s), Some(v)) = (&self.visual_scaler, xv.as_mut()) {
            s.apply(v);
        }
        if self.kind.uses_visual() && xv.is_none() {
            return Err(Error::MissingModality {
                kind: self.kind.to_string(),
                record_id: String::new(),
            });
        }
        Ok(self.score_standardized(&xt, xv.as_deref().unwrap_or(&[])))
    }

    fn score_standardized(&self, xt: &[f64], xv: &[f64]) -> BlockScores {
        let st = self.text.as_ref().map(|m| sigmoid(m.logit(xt)));
        let sv = self.visual.as_ref().map(|m| sigmoid(m.logit(xv)));
        match self.kind {
            MatcherKind::Text => BlockScores {
                text: st,
                visual: None,
                gate: None,
                score: st.expect("text block"),
            },
            MatcherKind::Visual => BlockScores {
                text: None,
                visual: sv,
                gate: None,
                score: sv.expect("visual block"),
            },
            MatcherKind::Fused => {
                let gate = self.gate.as_ref().expect("gate block");
                let z = gate.weights[..xt.len()].iter().zip(xt).map(|(w, x)| w * x).sum::<f64>()
                    + gate.weights[xt.len()..].iter().zip(xv).map(|(w, x)| w * x).sum::<f64>()
                    + gate.bias;
                let g = sigmoid(z);
                let (st, sv) = (st.expect("text block"), sv.expect("visual block"));
                BlockScores {
                    text: Some(st),
                    visual: Some(sv),
                    gate: Some(g),
                    score: g * sv + (1.0 - g) * st,
                }
            }
        }
    }

    /// Score of the records at positions `a` and `b` of `prepared`'s corpus,
    /// which must have been prepared with this model's feature space.
    pub fn score_positions(&self, prepared: &Prepared, a: usize, b: usize) -> Result<f64> {
        let text = if self.kind.uses_text() { prepared.text(a, b) } else { Vec::new() };
        let visual = if self.kind.uses_visual() {
            Some(prepared.visual(a, b).ok_or_else(|| self.missing_image(prepared.corpus(), a, b))?)
        } else {
            None
        };
        Ok(self.score_raw(&text, visual.as_deref())?.score)
    }

    fn missing_image(&self, corpus: &Corpus, a: usize, b: usize) -> Error {
        let pos = if corpus.records()[a].image_vec.is_none() { a } else { b };
        Error::MissingModality {
            kind: self.kind.to_string(),
            record_id: corpus.records()[pos].record_id.clone(),
        }
    }

    pub fn decide(&self, score: f64) -> bool {
        score >= self.threshold
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = io::read_json(path)?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let blocks = [&self.text, &self.visual, &self.gate];
        let finite = blocks
            .iter()
            .filter_map(|b| b.as_ref())
            .all(|b| b.bias.is_finite() && b.weights.iter().all(|w| w.is_finite()));
        if !finite {
            return Err(Error::Config("model weights must be finite".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        let expected = (
            self.kind.uses_text(),
            self.kind.uses_visual(),
            self.kind == MatcherKind::Fused,
        );
        if (self.text.is_some(), self.visual.is_some(), self.gate.is_some()) != expected {
            return Err(Error::Config(format!("weight blocks do not match kind {}", self.kind)));
        }
        Ok(())
    }
}

/// Standardized design matrices, row-major, with labels and loss weights.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub text: Vec<f64>,
    pub visual: Vec<f64>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn xt(&self, i: usize) -> &[f64] {
        &self.text[i * self.text_dim..(i + 1) * self.text_dim]
    }

    fn xv(&self, i: usize) -> &[f64] {
        &self.visual[i * self.visual_dim..(i + 1) * self.visual_dim]
    }
}

/// Length of the flat parameter vector: text block, visual block, gate,
/// each as weights followed by bias.
pub fn param_len(kind: MatcherKind, text_dim: usize, visual_dim: usize) -> usize {
    let t = if kind.uses_text() { text_dim + 1 } else { 0 };
    let v = if kind.uses_visual() { visual_dim + 1 } else { 0 };
    let g = if kind == MatcherKind::Fused { text_dim + visual_dim + 1 } else { 0 };
    t + v + g
}

/// Index ranges of the text, visual and gate blocks in the flat vector.
pub fn param_blocks(kind: MatcherKind, text_dim: usize, visual_dim: usize) -> Vec<(&'static str, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut at = 0;
    if kind.uses_text() {
        out.push(("text", at..at + text_dim + 1));
        at += text_dim + 1;
    }
    if kind.uses_visual() {
        out.push(("visual", at..at + visual_dim + 1));
        at += visual_dim + 1;
    }
    if kind == MatcherKind::Fused {
        out.push(("gate", at..at + text_dim + visual_dim + 1));
    }
    out
}

struct View<'p> {
    text: Option<(&'p [f64], f64)>,
    visual: Option<(&'p [f64], f64)>,
    gate: Option<(&'p [f64], f64)>,
}

fn view(kind: MatcherKind, params: &[f64], dt: usize, dv: usize) -> View<'_> {
    let mut rest = params;
    let mut take = |n: usize| {
        let (block, tail) = rest.split_at(n + 1);
        rest = tail;
        (&block[..n], block[n])
    };
    View {
        text: kind.uses_text().then(|| take(dt)),
        visual: kind.uses_visual().then(|| take(dv)),
        gate: (kind == MatcherKind::Fused).then(|| take(dt + dv)),
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Weighted mean cross-entropy over `rows` plus `l2 / 2 * |w|^2`, and its
/// analytic gradient with respect to the flat parameter vector.
pub fn loss_and_grad(kind: MatcherKind, params: &[f64], data: &Dataset, rows: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let (dt, dv) = (data.text_dim, data.visual_dim);
    let p = view(kind, params, dt, dv);
    let mut grad = vec![0.0; params.len()];
    let blocks = param_blocks(kind, dt, dv);
    let offset = |name: &str| blocks.iter().find(|(n, _)| *n == name).map(|(_, r)| r.start);
    let (ot, ov, og) = (offset("text"), offset("visual"), offset("gate"));
    let n = rows.len().max(1) as f64;
    let mut loss = 0.0;

    for &i in rows {
        let (y, w) = (data.labels[i], data.weights[i]);
        let (xt, xv) = (data.xt(i), data.xv(i));
        // Per-row derivatives of the loss with respect to each block's logit.
        let (l, dzt, dzv, dzg) = match kind {
            MatcherKind::Text | MatcherKind::Visual => {
                let ((wb, b), x) = if kind == MatcherKind::Text {
                    (p.text.unwrap(), xt)
                } else {
                    (p.visual.unwrap(), xv)
                };
                let z = dot(wb, x) + b;
                let d = sigmoid(z) - y;
                let l = softplus(z) - y * z;
                if kind == MatcherKind::Text {
                    (l, d, 0.0, 0.0)
                } else {
                    (l, 0.0, d, 0.0)
                }
            }
            MatcherKind::Fused => {
                let (wt, bt) = p.text.unwrap();
                let (wv, bv) = p.visual.unwrap();
                let (wg, bg) = p.gate.unwrap();
                let st = sigmoid(dot(wt, xt) + bt);
                let sv = sigmoid(dot(wv, xv) + bv);
                let g = sigmoid(dot(&wg[..dt], xt) + dot(&wg[dt..], xv) + bg);
                let s = g * sv + (1.0 - g) * st;
                let s_neg = g * (1.0 - sv) + (1.0 - g) * (1.0 - st);
                let l = -(y * s.max(1e-300).ln() + (1.0 - y) * s_neg.max(1e-300).ln());
                let ds = -y / s + (1.0 - y) / s_neg;
                (
                    l,
                    ds * (1.0 - g) * st * (1.0 - st),
                    ds * g * sv * (1.0 - sv),
                    ds * (sv - st) * g * (1.0 - g),
                )
            }
        };
        loss += w * l;
        let scale = w / n;
        if let Some(o) = ot {
            for (k, x) in xt.iter().enumerate() {
                grad[o + k] += scale * dzt * x;
            }
            grad[o + dt] += scale * dzt;
        }
        if let Some(o) = ov {
            for (k, x) in xv.iter().enumerate() {
                grad[o + k] += scale * dzv * x;
            }
            grad[o + dv] += scale * dzv;
        }
        if let Some(o) = og {
            for (k, x) in xt.iter().chain(xv).enumerate() {
                grad[o + k] += scale * dzg * x;
            }
            grad[o + dt + dv] += scale * dzg;
        }
    }
    loss /= n;
    for (_, range) in &blocks {
        let weights = range.start..range.end - 1;
        for k in weights {
            loss += 0.5 * l2 * params[k] * params[k];
            grad[k] += l2 * params[k];
        }
    }
    (loss, grad)
}

fn featurize_set(
    prepared: &Prepared,
    set: &PairSet,
    kind: MatcherKind,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let corpus = prepared.corpus();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, f64)>> = set
        .pairs
        .par_iter()
        .map(|p| {
            let pos = |id: &str| {
                corpus.position(id).ok_or_else(|| Error::DanglingReference {
                    split: "train".into(),
                    record_id: id.to_string(),
                })
            };
            let (a, b) = (pos(&p.left_id)?, pos(&p.right_id)?);
            let text = if kind.uses_text() { prepared.text(a, b) } else { Vec::new() };
            let visual = if kind.uses_visual() {
                prepared.visual(a, b).ok_or_else(|| {
                    let id = if corpus.records()[a].image_vec.is_none() { &p.left_id } else { &p.right_id };
                    Error::MissingModality {
                        kind: kind.to_string(),
                        record_id: id.to_string(),
                    }
                })?
            } else {
                Vec::new()
            };
            Ok((text, visual, if p.label.is_matched() { 1.0 } else { 0.0 }))
        })
        .collect();
    let mut text = Vec::new();
    let mut visual = Vec::new();
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        let (t, v, y) = row?;
        text.extend(t);
        visual.extend(v);
        labels.push(y);
    }
    Ok((text, visual, labels))
}

/// Features of `set` where each pair's memory block comes from centroids
/// fitted without the folds of its two records, so the scorer learns how
/// far memory can be trusted for records it has not memorized.
fn featurize_cross_fitted(
    space: &FeatureSpace,
    records: &Corpus,
    train: &PairSet,
    set: &PairSet,
    kind: MatcherKind,
    folds: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let fold_of = |id: &str| (seed::derive(seed, &format!("memory-fold/{id}")) % folds as u64) as usize;
    let pair_folds = |l: &str, r: &str| {
        let (a, b) = (fold_of(l), fold_of(r));
        (a.min(b), a.max(b))
    };
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (i, p) in set.pairs.iter().enumerate() {
        groups.entry(pair_folds(&p.left_id, &p.right_id)).or_default().push(i);
    }
    let dt = space.text_dim();
    let dv = if kind.uses_visual() { VISUAL_FEATURES.len() } else { 0 };
    let n = set.len();
    let (mut text, mut visual, mut labels) = (vec![0.0; n * dt], vec![0.0; n * dv], vec![0.0; n]);
    for ((fa, fb), members) in groups {
        let kept: Vec<_> = train
            .pairs
            .iter()
            .filter(|p| p.label.is_matched())
            .filter(|p| ![fold_of(&p.left_id), fold_of(&p.right_id)].iter().any(|f| *f == fa || *f == fb))
            .cloned()
            .collect();
        let sub = PairSet::from_pairs(kept, train.source_corpus_hash.clone())?;
        let fold_space = space.refit_memory(records, &sub);
        let prepared = Prepared::new(records, &fold_space);
        let subset = PairSet::from_pairs(members.iter().map(|&i| set.pairs[i].clone()).collect(), String::new())?;
        let (t, v, y) = featurize_set(&prepared, &subset, kind)?;
        for (j, &i) in members.iter().enumerate() {
            text[i * dt..(i + 1) * dt].copy_from_slice(&t[j * dt..(j + 1) * dt]);
            visual[i * dv..(i + 1) * dv].copy_from_slice(&v[j * dv..(j + 1) * dv]);
            labels[i] = y[j];
        }
    }
    Ok((text, visual, labels))
}

fn f1_at(scores: &[f64], labels: &[f64], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

/// Threshold in (0, 1) maximizing F1 on the given scores; midpoints between
/// adjacent distinct scores are the candidates, ties keep the lowest.
fn best_threshold(scores: &[f64], labels: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best = (f1_at(scores, labels, 0.5), 0.5);
    for w in distinct.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        if t <= 0.0 || t >= 1.0 {
            continue;
        }
        let f = f1_at(scores, labels, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best.1
}

/// Fits a matcher of `kind` on `train`, selecting the epoch with the best
/// F1 on `val`. Feature statistics come from the training pairs only.
pub fn train(kind: MatcherKind, train: &PairSet, val: &PairSet, records: &Corpus, hyper: &Hyper) -> Result<MatcherModel> {
    hyper.validate()?;
    if train.n_matched == 0 || train.n_mismatched == 0 {
        return Err(Error::SingleLabel);
    }
    if kind.uses_visual() && records.image_dim().is_none() {
        let id = records.records().iter().find(|r| r.image_vec.is_none()).map(|r| r.record_id.clone());
        return Err(Error::MissingModality {
            kind: kind.to_string(),
            record_id: id.unwrap_or_default(),
        });
    }
    let space = FeatureSpace::fit(records, train, &hyper.memory);
    let prepared = Prepared::new(records, &space);
    let dt = if kind.uses_text() { space.text_dim() } else { 0 };
    let dv = if kind.uses_visual() { VISUAL_FEATURES.len() } else { 0 };

    let folds = hyper.memory.cross_fit_folds;
    let cross_fit = kind.uses_text() && space.memory.is_some() && folds >= 2;
    let featurize = |set: &PairSet| {
        if cross_fit {
            featurize_cross_fitted(&space, records, train, set, kind, folds, hyper.seed)
        } else {
            featurize_set(&prepared, set, kind)
        }
    };
    let (mut xt, mut xv, y) = featurize(train)?;
    let text_scaler = kind.uses_text().then(|| Scaler::fit(&xt, dt));
    let visual_scaler = kind.uses_visual().then(|| Scaler::fit(&xv, dv));
    let standardize = |x: &mut Vec<f64>, s: &Option<Scaler>, d: usize| {
        if let Some(s) = s {
            x.chunks_mut(d).for_each(|r| s.apply(r));
        }
    };
    standardize(&mut xt, &text_scaler, dt);
    standardize(&mut xv, &visual_scaler, dv);
    let n = y.len() as f64;
    let n_pos = y.iter().filter(|&&v| v > 0.5).count() as f64;
    let class_weights = if hyper.class_weighting {
        [n / (2.0 * (n - n_pos)), n / (2.0 * n_pos)]
    } else {
        [1.0, 1.0]
    };
    let weights = y.iter().map(|&v| class_weights[usize::from(v > 0.5)]).collect();
    let data = Dataset {
        text_dim: dt,
        visual_dim: dv,
        text: xt,
        visual: xv,
        labels: y,
        weights,
    };

    let (mut vt, mut vv, vy) = featurize(val)?;
    standardize(&mut vt, &text_scaler, dt);
    standardize(&mut vv, &visual_scaler, dv);

    let mut model = MatcherModel {
        schema: MODEL_SCHEMA.to_string(),
        kind,
        space: space.clone(),
        text_scaler,
        visual_scaler,
        text: kind.uses_text().then(|| Logistic::zeros(dt)),
        visual: kind.uses_visual().then(|| Logistic::zeros(dv)),
        gate: (kind == MatcherKind::Fused).then(|| Logistic::zeros(dt + dv)),
        threshold: 0.5,
        hyper: hyper.clone(),
        log: TrainingLog {
            seed: hyper.seed,
            epochs: hyper.epochs,
            best_epoch: 0,
            best_val_f1: 0.0,
            loss_curve: Vec::new(),
            val_f1_curve: Vec::new(),
            class_weights,
            threshold_sweep: hyper.threshold_sweep,
            n_train: train.len(),
            n_val: val.len(),
        },
        corpus_hash: train.source_corpus_hash.clone(),
    };

    let val_scores = |params: &[f64], m: &mut MatcherModel| -> Vec<f64> {
        m.set_params(params);
        (0..vy.len())
            .map(|i| m.score_standardized(&vt[i * dt..(i + 1) * dt], &vv[i * dv..(i + 1) * dv]).score)
            .collect()
    };

    let mut params = vec![0.0; param_len(kind, dt, dv)];
    let (mut m1, mut m2) = (vec![0.0; params.len()], vec![0.0; params.len()]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut rng = seed::derived_rng(hyper.seed, &format!("matcher/{kind}/shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let all: Vec<usize> = order.clone();
    let mut best = (f64::NEG_INFINITY, params.clone(), 0usize);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let (_, g) = loss_and_grad(kind, &params, &data, batch, hyper.l2);
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for k in 0..params.len() {
                m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
                params[k] -= hyper.lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
        }
        let (loss, _) = loss_and_grad(kind, &params, &data, &all, hyper.l2);
        let f1 = f1_at(&val_scores(&params, &mut model), &vy, 0.5);
        model.log.loss_curve.push(loss);
        model.log.val_f1_curve.push(f1);
        if f1 > best.0 {
            best = (f1, params.clone(), epoch);
        }
    }
    let (best_f1, best_params, best_epoch) = best;
    model.set_params(&best_params);
    model.log.best_epoch = best_epoch;
    model.log.best_val_f1 = best_f1;
    if hyper.threshold_sweep {
        let scores = val_scores(&best_params, &mut model);
        model.threshold = best_threshold(&scores, &vy);
        model.log.best_val_f1 = f1_at(&scores, &vy, model.threshold);
    }
    model.check()?;
    Ok(model)
}

impl MatcherModel {
    /// Flat parameter vector in the layout of [`param_len`].
    pub fn params(&self) -> Vec<f64> {
        [&self.text, &self.visual, &self.gate]
            .into_iter()
            .flatten()
            .flat_map(|b| b.weights.iter().copied().chain([b.bias]))
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut rest = params;
        for block in [&mut self.text, &mut self.visual, &mut self.gate].into_iter().flatten() {
            let n = block.weights.len();
            block.weights.copy_from_slice(&rest[..n]);
            block.bias = rest[n];
            rest = &rest[n + 1..];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub left_id: String,
    pub right_id: String,
    pub score: f64,
    pub decision: bool,
}

/// Scores each `(left, right)` id pair; labels are not consulted.
pub fn predict<'a>(
    model: &MatcherModel,
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    records: &Corpus,
) -> Result<Vec<Prediction>> {
    let prepared = Prepared::new(records, &model.space);
    let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
    pairs
        .par_iter()
        .map(|&(l, r)| {
            let pos = |id: &str| {
                records.position(id).ok_or_else(|| Error::DanglingReference {
                    split: "predict".into(),
                    record_id: id.to_string(),
                })
            };
            let score = model.score_positions(&prepared, pos(l)?, pos(r)?)?;
            Ok(Prediction {
                left_id: l.to_string(),
                right_id: r.to_string(),
                score,
                decision: model.decide(score),
            })
        })
        .collect()
}

pub fn predict_set(model: &MatcherModel, set: &PairSet, records: &Corpus) -> Result<Vec<Prediction>> {
    predict(model, set.pairs.iter().map(|p| (&*p.left_id, &*p.right_id)), records)
}

pub fn write_predictions(predictions: &[Prediction], path: &Path) -> Result<()> {
    io::atomic_write(path, &io::encode_jsonl(predictions)?)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    io::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::rec;
    use crate::pairs::{Label, LabeledPair};
    use proptest::prelude::*;
    use rand::Rng as _;
    use std::sync::Arc;

    fn toy(with_images: bool) -> (Corpus, PairSet, PairSet) {
        let titles = ["red cotton shirt", "blue wool coat", "green linen scarf", "black leather boot"];
        let mut records = Vec::new();
        for (c, t) in titles.iter().enumerate() {
            for j in 0..4 {
                let mut r = rec(&format!("c{c}-{j}"), &format!("c{c}"), "x", t);
                if with_images {
                    r.image_vec = Some(vec![c as f64, j as f64 * 0.01]);
                }
                records.push(r);
            }
        }
        let corpus = Corpus::from_records(records).unwrap();
        let hash = corpus.content_hash().to_string();
        let mut pairs = Vec::new();
        for a in 0..16usize {
            for b in a + 1..16 {
                let label = if a / 4 == b / 4 { Label::Matched } else { Label::Mismatched };
                let id = |i: usize| Arc::<str>::from(format!("c{}-{}", i / 4, i % 4));
                pairs.push(LabeledPair::new(id(a), id(b), label).unwrap());
            }
        }
        let set = PairSet::from_pairs(pairs, hash).unwrap();
        (corpus, set.clone(), set)
    }

    fn small_hyper() -> Hyper {
        Hyper {
            epochs: 20,
            batch_size: 16,
            memory: MemoryConfig {
                enabled: false,
                ..MemoryConfig::default()
            },
            ..Hyper::default()
        }
    }

    #[test]
    fn sigmoid_limits_are_exact() {
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn separable_toy_reaches_perfect_f1() {
        let (corpus, train_set, val) = toy(false);
        let model = train(MatcherKind::Text, &train_set, &val, &corpus, &small_hyper()).unwrap();
        let preds = predict_set(&model, &train_set, &corpus).unwrap();
        let correct = preds
            .iter()
            .zip(&train_set.pairs)
            .all(|(p, g)| p.decision == g.label.is_matched());
        assert!(correct);
        assert_eq!(model.log.best_val_f1, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, t, v) = toy(true);
        let a = train(MatcherKind::Fused, &t, &v, &corpus, &small_hyper()).unwrap();
        let b = train(MatcherKind::Fused, &t, &v, &corpus, &small_hyper()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn single_label_and_missing_modality() {
        let (corpus, t, v) = toy(false);
        let only_pos = PairSet::from_pairs(
            t.pairs.iter().filter(|p| p.label.is_matched()).cloned().collect(),
            String::new(),
        )
        .unwrap();
        assert!(matches!(
            train(MatcherKind::Text, &only_pos, &v, &corpus, &small_hyper()),
            Err(Error::SingleLabel)
        ));
        assert!(matches!(
            train(MatcherKind::Visual, &t, &v, &corpus, &small_hyper()),
            Err(Error::MissingModality { .. })
        ));
    }

    #[test]
    fn zero_weights_score_sigmoid_of_bias() {
        let (corpus, t, v) = toy(false);
        let mut model = train(MatcherKind::Text, &t, &v, &corpus, &small_hyper()).unwrap();
        let block = model.text.as_mut().unwrap();
        block.weights.iter_mut().for_each(|w| *w = 0.0);
        block.bias = -0.7;
        for p in predict_set(&model, &t, &corpus).unwrap() {
            assert_eq!(p.score, sigmoid(-0.7));
        }
    }

    #[test]
    fn gate_surgery_recovers_each_block() {
        let (corpus, t, v) = toy(true);
        let mut model = train(MatcherKind::Fused, &t, &v, &corpus, &small_hyper()).unwrap();
        let prepared = Prepared::new(&corpus, &model.space);
        let raw: Vec<(Vec<f64>, Vec<f64>)> = (0..16)
            .flat_map(|a| (a + 1..16).map(move |b| (a, b)))
            .map(|(a, b)| (prepared.text(a, b), prepared.visual(a, b).unwrap()))
            .collect();
        for (bias, pick) in [(f64::NEG_INFINITY, 0), (f64::INFINITY, 1)] {
            model.gate.as_mut().unwrap().bias = bias;
            for (xt, xv) in &raw {
                let s = model.score_raw(xt, Some(xv)).unwrap();
                let expected = if pick == 0 { s.text.unwrap() } else { s.visual.unwrap() };
                assert_eq!(s.score, expected);
            }
        }
    }

    #[test]
    fn identical_records_score_above_threshold() {
        let (corpus, t, v) = toy(false);
        let model = train(MatcherKind::Text, &t, &v, &corpus, &small_hyper()).unwrap();
        let preds = predict(&model, [("c1-0", "c1-0")], &corpus).unwrap();
        assert!(preds[0].score > model.threshold);
        assert!(matches!(
            predict(&model, [("c1-0", "nope")], &corpus),
            Err(Error::DanglingReference { .. })
        ));
    }

    #[test]
    fn model_round_trips_through_json() {
        let (corpus, t, v) = toy(true);
        let model = train(MatcherKind::Fused, &t, &v, &corpus, &small_hyper()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(MatcherModel::load(&path).unwrap(), model);
    }

    #[test]
    fn threshold_sweep_is_logged() {
        let (corpus, t, v) = toy(false);
        let hyper = Hyper {
            threshold_sweep: true,
            ..small_hyper()
        };
        let model = train(MatcherKind::Text, &t, &v, &corpus, &hyper).unwrap();
        assert!(model.log.threshold_sweep);
        assert!(model.threshold > 0.0 && model.threshold < 1.0);
    }

    #[test]
    fn best_threshold_fixture() {
        let scores = [0.1, 0.3, 0.35, 0.8];
        let labels = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(best_threshold(&scores, &labels), 0.2);
    }

    fn random_dataset(rng: &mut seed::Rng, n: usize, dt: usize, dv: usize) -> Dataset {
        let mut g = || rng.random_range(-2.0..2.0);
        Dataset {
            text_dim: dt,
            visual_dim: dv,
            text: (0..n * dt).map(|_| g()).collect(),
            visual: (0..n * dv).map(|_| g()).collect(),
            labels: (0..n).map(|i| (i % 2) as f64).collect(),
            weights: (0..n).map(|i| 1.0 + (i % 3) as f64).collect(),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seed::rng(5);
        for kind in MatcherKind::ALL {
            let data = random_dataset(&mut rng, 9, 3, 2);
            let rows: Vec<usize> = (0..9).collect();
            let params: Vec<f64> = (0..param_len(kind, 3, 2)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = loss_and_grad(kind, &params, &data, &rows, 0.1);
            let h = 1e-6;
            for k in 0..params.len() {
                let mut p = params.clone();
                p[k] += h;
                let up = loss_and_grad(kind, &p, &data, &rows, 0.1).0;
                p[k] -= 2.0 * h;
                let down = loss_and_grad(kind, &p, &data, &rows, 0.1).0;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{kind} param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn predictions_are_symmetric(a in 0usize..16, b in 0usize..16) {
            let (corpus, t, v) = toy(true);
            let model = train(MatcherKind::Fused, &t, &v, &corpus, &small_hyper()).unwrap();
            let id = |i: usize| format!("c{}-{}", i / 4, i % 4);
            let (ia, ib) = (id(a), id(b));
            let ab = predict(&model, [(ia.as_str(), ib.as_str())], &corpus).unwrap();
            let ba = predict(&model, [(ib.as_str(), ia.as_str())], &corpus).unwrap();
            prop_assert_eq!(ab[0].score, ba[0].score);
        }
    }
}
