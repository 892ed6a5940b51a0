//! Per-example SGD with teacher forcing and per-epoch validation.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Vocabulary, DEFAULT_MAX_LEN};
use crate::diffcore::Gradients;
use crate::metrics::{corpus_sd, prf, MetricsError};
use crate::model::{attention, mask, ModelDims, ModelError, NtdConfig, NtdModel, PredictionSet};
use crate::ontology::{node_frequencies, LabelSet, OntologyError, OntologyTree};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown training variant `{0}`")]
    UnknownVariant(String),
    #[error("gold labels of document `{0}` are not ancestor-closed")]
    NotClosed(String),
    #[error("non-finite loss at epoch {epoch}, document {index} (`{doc_id}`)")]
    NonFiniteLoss {
        epoch: usize,
        index: usize,
        doc_id: String,
    },
    #[error("no threshold candidates")]
    NoCandidates,
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: String,
    /// Threshold used for validation decoding.
    pub tau: f64,
    pub dims: ModelDims,
    pub attention: String,
    pub max_len: usize,
    pub grad_clip: Option<f64>,
    pub early_stop_patience: Option<usize>,
    pub word_embeddings: Option<PathBuf>,
    pub node_embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 30,
            seed: 0,
            variant: mask::DEFAULT_VARIANT.into(),
            tau: 0.5,
            dims: ModelDims::default(),
            attention: attention::DEFAULT_ATTENTION.into(),
            max_len: DEFAULT_MAX_LEN,
            grad_clip: Some(5.0),
            early_stop_patience: None,
            word_embeddings: None,
            node_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be positive");
        }
        if mask::lookup(&self.variant).is_none() {
            return Err(TrainError::UnknownVariant(self.variant.clone()));
        }
        if attention::lookup(&self.attention).is_none() {
            return Err(ModelError::UnknownAttention(self.attention.clone()).into());
        }
        self.dims.validate()?;
        Ok(())
    }
}

/// Independent seeds for parameter init, epoch shuffling and loss masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub init: u64,
    pub shuffle: u64,
    pub mask: u64,
}

impl SeedStreams {
    pub fn derive(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng.next_u64()
        };
        SeedStreams {
            init: stream(1),
            shuffle: stream(2),
            mask: stream(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_sd: f64,
}

impl EpochStats {
    /// `epoch=E loss=L val_f1=F val_sd=S`
    pub fn progress_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} val_f1={:.4} val_sd={:.4}",
            self.epoch, self.mean_loss, self.val_f1, self.val_sd
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Not written to report files, so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub model: NtdModel,
    pub report: TrainReport,
}

fn check_corpus(docs: &[Document], tree: &OntologyTree, which: &'static str) -> Result<(), TrainError> {
    if docs.is_empty() {
        return Err(TrainError::EmptyCorpus(which));
    }
    for d in docs {
        if tree.closure(d.gold.iter())? != d.gold {
            return Err(TrainError::NotClosed(d.doc_id.clone()));
        }
    }
    Ok(())
}

fn open(path: &PathBuf) -> Result<BufReader<File>, TrainError> {
    File::open(path).map(BufReader::new).map_err(|source| TrainError::Io {
        path: path.clone(),
        source,
    })
}

pub fn init_model(
    tree: &OntologyTree,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<NtdModel, TrainError> {
    let mut net = NtdConfig::new(config.dims, vocab.len(), tree.len());
    net.attention = config.attention.clone();
    let mut model = NtdModel::new(net, SeedStreams::derive(config.seed).init)?;
    if let Some(path) = &config.word_embeddings {
        model.load_word_embeddings(open(path)?, vocab)?;
    }
    if let Some(path) = &config.node_embeddings {
        model.load_node_embeddings(open(path)?, tree)?;
    }
    Ok(model)
}

pub fn decode_all(
    model: &NtdModel,
    docs: &[Document],
    tree: &OntologyTree,
    tau: f64,
) -> Result<Vec<PredictionSet>, ModelError> {
    docs.par_iter()
        .map(|d| model.decode(tree, &d.tokens, tau, tree.len()))
        .collect()
}

/// Micro P/R/F1 and mean SD of `model` on `docs`.
pub fn evaluate_model(
    model: &NtdModel,
    docs: &[Document],
    tree: &OntologyTree,
    tau: f64,
) -> Result<(crate::metrics::Prf, f64), TrainError> {
    let preds = decode_all(model, docs, tree, tau)?;
    let pred: Vec<LabelSet> = preds.into_iter().map(|p| p.applied).collect();
    let gold: Vec<LabelSet> = docs.iter().map(|d| d.gold.clone()).collect();
    Ok((prf(&gold, &pred)?, corpus_sd(&gold, &pred, tree)?))
}

pub fn train(
    train_docs: &[Document],
    val_docs: &[Document],
    tree: &OntologyTree,
    vocab: &Vocabulary,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    let started = Instant::now();
    config.validate()?;
    check_corpus(train_docs, tree, "training")?;
    check_corpus(val_docs, tree, "validation")?;

    let seeds = SeedStreams::derive(config.seed);
    let mut model = init_model(tree, vocab, config)?;
    let golds: Vec<&LabelSet> = train_docs.iter().map(|d| &d.gold).collect();
    let freq = node_frequencies(tree, &golds)?;
    let variant = mask::lookup(&config.variant).ok_or_else(|| TrainError::UnknownVariant(config.variant.clone()))?;
    let mut loss_mask = variant.mask(&freq, seeds.mask);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut grads = Gradients::zeros_like(model.params());
    let mut order: Vec<usize> = (0..train_docs.len()).collect();

    let mut best = model.clone();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_f1: f64::NEG_INFINITY,
        wall_clock_secs: 0.0,
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let doc = &train_docs[i];
            grads.zero();
            let loss = model.loss_and_grad(tree, &doc.tokens, &doc.gold, loss_mask.as_mut(), &mut grads)?;
            let norm = match config.grad_clip {
                Some(c) => grads.clip_global_norm(c),
                None => grads.global_norm(),
            };
            if !loss.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    index: i,
                    doc_id: doc.doc_id.clone(),
                });
            }
            model.parts_mut().1.sgd_step(&grads, config.lr);
            total += loss;
        }

        let (scores, sd) = evaluate_model(&model, val_docs, tree, config.tau)?;
        let stats = EpochStats {
            epoch,
            mean_loss: total / train_docs.len() as f64,
            val_precision: scores.precision,
            val_recall: scores.recall,
            val_f1: scores.f1,
            val_sd: sd,
        };
        observer(&stats);
        report.epochs.push(stats);
        if scores.f1 > report.best_val_f1 {
            report.best_val_f1 = scores.f1;
            report.best_epoch = epoch;
            best = model.clone();
        }
        if let Some(p) = config.early_stop_patience {
            if epoch - report.best_epoch >= p {
                break;
            }
        }
    }

    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model: best,
        report,
    })
}

/// `(2i − 1) / 20` for `i = 1..=10`.
pub fn default_tau_candidates() -> Vec<f64> {
    (1..=10).map(|i| (2 * i - 1) as f64 / 20.0).collect()
}

/// The candidate with the highest validation micro-F1; ties go to the
/// smaller threshold. Returns `(tau, f1)`.
pub fn select_threshold(
    model: &NtdModel,
    val_docs: &[Document],
    tree: &OntologyTree,
    candidates: &[f64],
) -> Result<(f64, f64), TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::NoCandidates);
    }
    if let Some(&c) = candidates.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
        return Err(TrainError::InvalidConfig(format!("threshold candidate {c} outside (0, 1)")));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], f64::NEG_INFINITY);
    for tau in sorted {
        let (scores, _) = evaluate_model(model, val_docs, tree, tau)?;
        if scores.f1 > best.1 {
            best = (tau, scores.f1);
        }
    }
    Ok(best)
}
