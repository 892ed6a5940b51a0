//! Node-wise precision/recall/F1 and semantic distance between label sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{LabelSet, NodeId, OntologyError, OntologyTree};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{gold} gold sets but {pred} predicted sets")]
    LengthMismatch { gold: usize, pred: usize },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

/// Micro-averaged scores pooled over (document, node) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, n_pred: usize, n_gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(hits, n_pred);
        let recall = ratio(hits, n_gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn check_aligned(gold: &[LabelSet], pred: &[LabelSet]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(())
}

pub fn prf(gold: &[LabelSet], pred: &[LabelSet]) -> Result<Prf, MetricsError> {
    check_aligned(gold, pred)?;
    let (mut hits, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        hits += g.intersection(p).count();
        n_pred += p.len();
        n_gold += g.len();
    }
    Ok(Prf::from_counts(hits, n_pred, n_gold))
}

/// Mean over gold nodes of the distance to the nearest predicted node, with
/// the root counted as predicted. Zero when `gold` is empty.
pub fn semantic_distance(gold: &LabelSet, pred: &LabelSet, tree: &OntologyTree) -> Result<f64, MetricsError> {
    for &v in gold.iter().chain(pred) {
        if !tree.contains(v) {
            return Err(OntologyError::InvalidNode(v).into());
        }
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0u64;
    for &u in gold {
        let mut best = tree.depth(u)?;
        for &v in pred {
            if best == 0 {
                break;
            }
            best = best.min(tree.distance(u, v)?);
        }
        total += u64::from(best);
    }
    Ok(total as f64 / gold.len() as f64)
}

pub fn corpus_sd(gold: &[LabelSet], pred: &[LabelSet], tree: &OntologyTree) -> Result<f64, MetricsError> {
    check_aligned(gold, pred)?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (g, p) in gold.iter().zip(pred) {
        sum += semantic_distance(g, p, tree)?;
    }
    Ok(sum / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocReport {
    pub doc_id: String,
    pub n_gold: usize,
    pub n_pred: usize,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sd: f64,
    pub docs: Vec<DocReport>,
}

impl EvalReport {
    pub fn build(
        doc_ids: &[String],
        gold: &[LabelSet],
        pred: &[LabelSet],
        tree: &OntologyTree,
    ) -> Result<Self, MetricsError> {
        check_aligned(gold, pred)?;
        if doc_ids.len() != gold.len() {
            return Err(MetricsError::LengthMismatch {
                gold: gold.len(),
                pred: doc_ids.len(),
            });
        }
        let scores = prf(gold, pred)?;
        let mut docs = Vec::with_capacity(gold.len());
        for ((id, g), p) in doc_ids.iter().zip(gold).zip(pred) {
            docs.push(DocReport {
                doc_id: id.clone(),
                n_gold: g.len(),
                n_pred: p.len(),
                sd: semantic_distance(g, p, tree)?,
            });
        }
        let sd = if docs.is_empty() {
            0.0
        } else {
            docs.iter().map(|d| d.sd).sum::<f64>() / docs.len() as f64
        };
        Ok(EvalReport {
            averaging: "micro".into(),
            precision: scores.precision,
            recall: scores.recall,
            f1: scores.f1,
            sd,
            docs,
        })
    }

    /// `P=.. R=.. F1=.. SD=..`
    pub fn summary(&self) -> String {
        format!(
            "P={:.4} R={:.4} F1={:.4} SD={:.4}",
            self.precision, self.recall, self.f1, self.sd
        )
    }
}

/// Labels are compared as node ids; `ROOT` never counts.
pub fn strip_root(set: &LabelSet) -> LabelSet {
    set.iter().copied().filter(|v| *v != NodeId::ROOT).collect()
}
