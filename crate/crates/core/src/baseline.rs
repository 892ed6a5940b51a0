//! Flat multi-label baseline: TF-IDF features, one logistic classifier per
//! label, and a linear regressor choosing how many top labels to apply.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, PAD};
use crate::model::PredictionSet;
use crate::ontology::{LabelSet, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum FlatError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid flat-model config: {0}")]
    InvalidConfig(String),
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("inconsistent flat model: {0}")]
    Inconsistent(String),
}

/// Sparse feature vector: `(token id, value)` sorted by id.
pub type SparseVec = Vec<(u32, f64)>;

/// Smoothed inverse document frequencies, `ln((1 + D) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfIndex {
    idf: Vec<f64>,
}

impl TfidfIndex {
    pub fn fit(docs: &[&[u32]], vocab_size: usize) -> Result<Self, FlatError> {
        if docs.is_empty() {
            return Err(FlatError::EmptyCorpus);
        }
        let mut df = vec![0u64; vocab_size];
        let mut seen = vec![usize::MAX; vocab_size];
        for (i, doc) in docs.iter().enumerate() {
            for &t in doc.iter() {
                let slot = seen.get_mut(t as usize).ok_or(FlatError::TokenOutOfRange {
                    token: t,
                    vocab: vocab_size,
                })?;
                if *slot != i {
                    *slot = i;
                    df[t as usize] += 1;
                }
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        Ok(TfidfIndex { idf })
    }

    pub fn from_idf(idf: Vec<f64>) -> Self {
        TfidfIndex { idf }
    }

    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, token: u32) -> Option<f64> {
        self.idf.get(token as usize).copied()
    }

    /// Raw term counts times idf, L2-normalized. Padding and out-of-range
    /// ids are ignored; an empty result is the zero vector.
    pub fn transform(&self, tokens: &[u32]) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for &t in tokens {
            if t != PAD && (t as usize) < self.idf.len() {
                *counts.entry(t).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = counts
            .into_iter()
            .map(|(t, c)| (t, c * self.idf[t as usize]))
            .collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig {
            lr: 0.1,
            epochs: 40,
            l2: 1e-5,
            seed: 0,
        }
    }
}

impl FlatConfig {
    pub fn validate(&self) -> Result<(), FlatError> {
        let bad = |m: &str| Err(FlatError::InvalidConfig(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be finite and non-negative");
        }
        Ok(())
    }
}

/// Dense linear unit `w · x + b` stored as `scale · v` so L2 decay is O(1)
/// per update.
#[derive(Debug, Clone)]
struct ScaledLinear {
    v: Vec<f64>,
    scale: f64,
    b: f64,
}

impl ScaledLinear {
    fn new(dim: usize) -> Self {
        ScaledLinear {
            v: vec![0.0; dim],
            scale: 1.0,
            b: 0.0,
        }
    }

    fn eval(&self, x: &SparseVec) -> f64 {
        self.scale * x.iter().map(|&(j, xj)| self.v[j as usize] * xj).sum::<f64>() + self.b
    }

    /// `w ← (1 − lr·l2) w − lr·g·x`, `b ← b − lr·g`.
    fn update(&mut self, x: &SparseVec, g: f64, lr: f64, l2: f64) {
        let decay = 1.0 - lr * l2;
        if decay != 1.0 {
            self.scale *= decay;
            if self.scale.abs() < 1e-9 {
                self.materialize();
            }
        }
        if g != 0.0 && self.scale != 0.0 {
            let step = lr * g / self.scale;
            for &(j, xj) in x {
                self.v[j as usize] -= step * xj;
            }
        }
        self.b -= lr * g;
    }

    fn materialize(&mut self) {
        for x in &mut self.v {
            *x *= self.scale;
        }
        self.scale = 1.0;
    }

    fn weights(&self) -> Vec<f64> {
        self.v.iter().map(|x| x * self.scale).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// A fitted flat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatModel {
    pub tfidf: TfidfIndex,
    /// Labels with a classifier, ascending.
    pub labels: Vec<NodeId>,
    pub label_weights: Vec<Vec<f64>>,
    pub label_bias: Vec<f64>,
    pub count_weights: Vec<f64>,
    pub count_bias: f64,
}

impl FlatModel {
    pub fn validate(&self) -> Result<(), FlatError> {
        let v = self.tfidf.vocab_size();
        let n = self.labels.len();
        if self.label_weights.len() != n || self.label_bias.len() != n {
            return Err(FlatError::Inconsistent("label arrays differ in length".into()));
        }
        if self.label_weights.iter().any(|w| w.len() != v) || self.count_weights.len() != v {
            return Err(FlatError::Inconsistent("weight vector length differs from vocabulary".into()));
        }
        if self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FlatError::Inconsistent("labels not strictly ascending".into()));
        }
        Ok(())
    }

    fn dot(w: &[f64], x: &SparseVec) -> f64 {
        x.iter().map(|&(j, xj)| w[j as usize] * xj).sum()
    }

    /// Raw regressor output.
    pub fn count_output(&self, x: &SparseVec) -> f64 {
        Self::dot(&self.count_weights, x) + self.count_bias
    }

    pub fn label_scores(&self, x: &SparseVec) -> Vec<f64> {
        self.label_weights
            .iter()
            .zip(&self.label_bias)
            .map(|(w, b)| sigmoid(Self::dot(w, x) + b))
            .collect()
    }

    pub fn predict(&self, tokens: &[u32]) -> PredictionSet {
        let x = self.tfidf.transform(tokens);
        let scores = self.label_scores(&x);
        let k = predicted_count(self.count_output(&x)).min(self.labels.len());
        let applied = top_k(&self.labels, &scores, k);
        PredictionSet {
            applied,
            scores: self.labels.iter().copied().zip(scores).collect(),
        }
    }
}

/// `round(max(1, out))`.
pub fn predicted_count(out: f64) -> usize {
    if out.is_nan() {
        return 1;
    }
    out.max(1.0).round() as usize
}

/// The `k` highest-scoring labels; equal scores prefer the smaller id.
pub fn top_k(labels: &[NodeId], scores: &[f64], k: usize) -> LabelSet {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(labels[a].cmp(&labels[b])));
    idx.into_iter().take(k).map(|i| labels[i]).collect()
}

/// Mean per-document training loss: summed label BCE plus half squared
/// count error, measured before each update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Fits the flat model. `observer` sees the model after every epoch and may
/// return `false` to stop early.
pub fn fit_flat(
    docs: &[Document],
    vocab_size: usize,
    config: &FlatConfig,
    observer: &mut dyn FnMut(FlatEpoch, &FlatModel) -> bool,
) -> Result<FlatModel, FlatError> {
    config.validate()?;
    if docs.is_empty() {
        return Err(FlatError::EmptyCorpus);
    }
    let token_lists: Vec<&[u32]> = docs.iter().map(|d| d.tokens.as_slice()).collect();
    let tfidf = TfidfIndex::fit(&token_lists, vocab_size)?;
    let xs: Vec<SparseVec> = docs.iter().map(|d| tfidf.transform(&d.tokens)).collect();
    let labels: Vec<NodeId> = docs
        .iter()
        .flat_map(|d| d.gold.iter().copied())
        .filter(|v| !v.is_root())
        .collect::<LabelSet>()
        .into_iter()
        .collect();
    let targets: Vec<Vec<bool>> = labels
        .iter()
        .map(|v| docs.iter().map(|d| d.gold.contains(v)).collect())
        .collect();
    let counts: Vec<f64> = docs.iter().map(|d| d.gold.len() as f64).collect();

    let mut label_units = vec![ScaledLinear::new(vocab_size); labels.len()];
    let mut count_unit = ScaledLinear::new(vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let (lr, l2) = (config.lr, config.l2);

    let mut model = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let label_loss: f64 = label_units
            .par_iter_mut()
            .zip(targets.par_iter())
            .map(|(unit, ys)| {
                let mut loss = 0.0;
                for &i in &order {
                    let p = sigmoid(unit.eval(&xs[i]));
                    loss += bce(p, ys[i]);
                    unit.update(&xs[i], p - f64::from(u8::from(ys[i])), lr, l2);
                }
                loss
            })
            .sum();
        let mut count_loss = 0.0;
        for &i in &order {
            let err = count_unit.eval(&xs[i]) - counts[i];
            count_loss += 0.5 * err * err;
            count_unit.update(&xs[i], err, lr, l2);
        }
        let fitted = FlatModel {
            tfidf: tfidf.clone(),
            labels: labels.clone(),
            label_weights: label_units.iter().map(ScaledLinear::weights).collect(),
            label_bias: label_units.iter().map(|u| u.b).collect(),
            count_weights: count_unit.weights(),
            count_bias: count_unit.b,
        };
        let stats = FlatEpoch {
            epoch,
            mean_loss: (label_loss + count_loss) / docs.len() as f64,
        };
        let go_on = observer(stats, &fitted);
        model = Some(fitted);
        if !go_on {
            break;
        }
    }
    Ok(model.expect("at least one epoch"))
}
