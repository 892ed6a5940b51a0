//! Model kinds selectable by name.
//!
//! Each kind declares its default settings as a JSON object, trains from
//! (possibly overridden) settings, and restores itself from a checkpoint.
//! Callers only see `dyn Tagger`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::baseline::{fit_flat, FlatConfig, FlatError, FlatModel, TfidfIndex};
use crate::checkpoint::{Checkpoint, CheckpointError, NamedArray};
use crate::corpus::{Document, Vocabulary, DEFAULT_MAX_LEN};
use crate::diffcore::{Array, ParamStore, TapeError};
use crate::metrics::{corpus_sd, prf, MetricsError};
use crate::model::{ModelError, NtdConfig, NtdModel, PredictionSet};
use crate::ontology::{LabelSet, NodeId, OntologyError, OntologyTree};
use crate::training::{
    default_tau_candidates, select_threshold, train, EpochStats, TrainConfig, TrainError, TrainReport,
};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("option `{key}` does not apply to model kind `{kind}`")]
    UnknownOption { kind: &'static str, key: String },
    #[error("invalid settings for `{kind}`: {source}")]
    Settings {
        kind: &'static str,
        source: serde_json::Error,
    },
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    KindMismatch { expected: &'static str, found: String },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Flat(#[from] FlatError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

pub struct TrainData<'a> {
    pub train: &'a [Document],
    pub val: &'a [Document],
    pub tree: &'a OntologyTree,
    pub vocab: &'a Vocabulary,
}

/// A trained model ready for inference.
pub trait Tagger: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Threshold used when the caller does not pass one.
    fn default_tau(&self) -> f64;

    /// Whether `tau` affects [`Tagger::predict`].
    fn uses_threshold(&self) -> bool;

    fn predict(&self, tree: &OntologyTree, tokens: &[u32], tau: f64) -> Result<PredictionSet, RegistryError>;

    /// Checkpoint config and parameter arrays.
    fn export(&self, tree: &OntologyTree) -> Result<(Value, Vec<NamedArray>), RegistryError>;
}

pub struct Fitted {
    pub tagger: Box<dyn Tagger>,
    pub report: TrainReport,
}

pub trait TaggerKind: Sync {
    fn name(&self) -> &'static str;

    /// Every setting with its default value.
    fn default_settings(&self) -> Value;

    fn fit(
        &self,
        data: &TrainData<'_>,
        settings: &Value,
        observer: &mut dyn FnMut(&EpochStats),
    ) -> Result<Fitted, RegistryError>;

    fn restore(&self, ckpt: &Checkpoint, tree: &OntologyTree) -> Result<Box<dyn Tagger>, RegistryError>;
}

static REGISTRY: [&dyn TaggerKind; 2] = [&NtdKind, &FlatKind];

pub fn registry() -> &'static [&'static dyn TaggerKind] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Result<&'static dyn TaggerKind, RegistryError> {
    REGISTRY
        .iter()
        .copied()
        .find(|k| k.name() == name)
        .ok_or_else(|| RegistryError::UnknownKind(name.to_owned()))
}

/// Defaults of `kind` with `overrides` applied. Keys the kind does not
/// declare are rejected.
pub fn resolve_settings(kind: &dyn TaggerKind, overrides: &Map<String, Value>) -> Result<Value, RegistryError> {
    let mut settings = kind.default_settings();
    let obj = settings.as_object_mut().expect("settings are an object");
    for (k, v) in overrides {
        match obj.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => {
                return Err(RegistryError::UnknownOption {
                    kind: kind.name(),
                    key: k.clone(),
                })
            }
        }
    }
    Ok(settings)
}

/// Token truncation length declared in resolved settings.
pub fn settings_max_len(settings: &Value) -> usize {
    settings
        .get("max_len")
        .and_then(Value::as_u64)
        .map_or(DEFAULT_MAX_LEN, |n| n as usize)
}

fn parse_settings<T: for<'de> Deserialize<'de>>(kind: &'static str, v: &Value) -> Result<T, RegistryError> {
    serde_json::from_value(v.clone()).map_err(|source| RegistryError::Settings { kind, source })
}

pub fn save_checkpoint(
    path: &Path,
    tagger: &dyn Tagger,
    vocab: &Vocabulary,
    tree: &OntologyTree,
    max_len: usize,
) -> Result<Checkpoint, RegistryError> {
    let ckpt = to_checkpoint(tagger, vocab, tree, max_len)?;
    ckpt.save(path)?;
    Ok(ckpt)
}

pub fn to_checkpoint(
    tagger: &dyn Tagger,
    vocab: &Vocabulary,
    tree: &OntologyTree,
    max_len: usize,
) -> Result<Checkpoint, RegistryError> {
    let (config, params) = tagger.export(tree)?;
    Ok(Checkpoint::new(tagger.kind(), config, max_len, vocab, tree, params))
}

pub struct Loaded {
    pub tagger: Box<dyn Tagger>,
    pub vocab: Vocabulary,
    pub tree: OntologyTree,
    pub max_len: usize,
}

pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Loaded, RegistryError> {
    let (vocab, tree) = ckpt.resources()?;
    let tagger = lookup(&ckpt.model_kind)?.restore(ckpt, &tree)?;
    Ok(Loaded {
        tagger,
        vocab,
        tree,
        max_len: ckpt.max_len,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded, RegistryError> {
    from_checkpoint(&Checkpoint::load(path)?)
}

fn named_array(ckpt: &Checkpoint, name: &str) -> Result<Array, RegistryError> {
    Ok(ckpt
        .param(name)
        .ok_or_else(|| RegistryError::MissingParam(name.to_owned()))?
        .to_array()?)
}

// ---------------------------------------------------------------- ntd

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtdSettings {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Sweep ten thresholds on validation after training and keep the best.
    pub select_threshold: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NtdCheckpointConfig {
    settings: NtdSettings,
    model: NtdConfig,
    decode_tau: f64,
}

pub struct NtdKind;

pub struct NtdTagger {
    pub model: NtdModel,
    pub settings: NtdSettings,
    pub decode_tau: f64,
}

impl Tagger for NtdTagger {
    fn kind(&self) -> &'static str {
        "ntd"
    }

    fn default_tau(&self) -> f64 {
        self.decode_tau
    }

    fn uses_threshold(&self) -> bool {
        true
    }

    fn predict(&self, tree: &OntologyTree, tokens: &[u32], tau: f64) -> Result<PredictionSet, RegistryError> {
        Ok(self.model.decode(tree, tokens, tau, tree.len())?)
    }

    fn export(&self, _tree: &OntologyTree) -> Result<(Value, Vec<NamedArray>), RegistryError> {
        let config = NtdCheckpointConfig {
            settings: self.settings.clone(),
            model: self.model.config().clone(),
            decode_tau: self.decode_tau,
        };
        let params = self
            .model
            .params()
            .iter()
            .map(|(_, name, arr)| NamedArray::new(name, arr))
            .collect();
        Ok((serde_json::to_value(config).expect("config serializes"), params))
    }
}

impl TaggerKind for NtdKind {
    fn name(&self) -> &'static str {
        "ntd"
    }

    fn default_settings(&self) -> Value {
        serde_json::to_value(NtdSettings::default()).expect("settings serialize")
    }

    fn fit(
        &self,
        data: &TrainData<'_>,
        settings: &Value,
        observer: &mut dyn FnMut(&EpochStats),
    ) -> Result<Fitted, RegistryError> {
        let settings: NtdSettings = parse_settings("ntd", settings)?;
        let out = train(data.train, data.val, data.tree, data.vocab, &settings.train, observer)?;
        let decode_tau = if settings.select_threshold {
            select_threshold(&out.model, data.val, data.tree, &default_tau_candidates())?.0
        } else {
            settings.train.tau
        };
        Ok(Fitted {
            tagger: Box::new(NtdTagger {
                model: out.model,
                settings,
                decode_tau,
            }),
            report: out.report,
        })
    }

    fn restore(&self, ckpt: &Checkpoint, tree: &OntologyTree) -> Result<Box<dyn Tagger>, RegistryError> {
        if ckpt.model_kind != "ntd" {
            return Err(RegistryError::KindMismatch {
                expected: "ntd",
                found: ckpt.model_kind.clone(),
            });
        }
        let config: NtdCheckpointConfig = parse_settings("ntd", &ckpt.config)?;
        let mut store = ParamStore::new();
        for spec in config.model.param_specs()? {
            store.insert(spec.name.clone(), named_array(ckpt, &spec.name)?)?;
        }
        let model = NtdModel::from_params(config.model, store)?;
        model.network().check_tree(tree)?;
        Ok(Box::new(NtdTagger {
            model,
            settings: config.settings,
            decode_tau: config.decode_tau,
        }))
    }
}

// ---------------------------------------------------------------- flat

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatSettings {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for FlatSettings {
    fn default() -> Self {
        let c = FlatConfig::default();
        FlatSettings {
            lr: c.lr,
            epochs: c.epochs,
            l2: c.l2,
            seed: c.seed,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl FlatSettings {
    pub fn config(&self) -> FlatConfig {
        FlatConfig {
            lr: self.lr,
            epochs: self.epochs,
            l2: self.l2,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlatCheckpointConfig {
    settings: FlatSettings,
    labels: Vec<String>,
}

pub struct FlatKind;

pub struct FlatTagger {
    pub model: FlatModel,
    pub settings: FlatSettings,
}

fn flat_eval(model: &FlatModel, docs: &[Document], tree: &OntologyTree) -> Result<(crate::metrics::Prf, f64), RegistryError> {
    let pred: Vec<LabelSet> = docs.iter().map(|d| model.predict(&d.tokens).applied).collect();
    let gold: Vec<LabelSet> = docs.iter().map(|d| d.gold.clone()).collect();
    Ok((prf(&gold, &pred)?, corpus_sd(&gold, &pred, tree)?))
}

impl Tagger for FlatTagger {
    fn kind(&self) -> &'static str {
        "flat"
    }

    fn default_tau(&self) -> f64 {
        0.5
    }

    fn uses_threshold(&self) -> bool {
        false
    }

    fn predict(&self, _tree: &OntologyTree, tokens: &[u32], _tau: f64) -> Result<PredictionSet, RegistryError> {
        Ok(self.model.predict(tokens))
    }

    fn export(&self, tree: &OntologyTree) -> Result<(Value, Vec<NamedArray>), RegistryError> {
        let m = &self.model;
        let labels = m
            .labels
            .iter()
            .map(|&v| tree.label(v).map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let config = FlatCheckpointConfig {
            settings: self.settings.clone(),
            labels,
        };
        let row = |v: &[f64]| Array::from_vec(1, v.len(), v.to_vec());
        let idf: Vec<f64> = (0..m.tfidf.vocab_size() as u32).map(|t| m.tfidf.idf(t).unwrap_or(0.0)).collect();
        let weights = Array::from_rows(&m.label_weights).unwrap_or_else(|_| Array::zeros(0, idf.len()));
        let params = vec![
            NamedArray::new("tfidf.idf", &row(&idf)?),
            NamedArray::new("label.w", &weights),
            NamedArray::new("label.b", &Array::from_vec(m.label_bias.len(), 1, m.label_bias.clone())?),
            NamedArray::new("count.w", &row(&m.count_weights)?),
            NamedArray::new("count.b", &Array::from_vec(1, 1, vec![m.count_bias])?),
        ];
        Ok((serde_json::to_value(config).expect("config serializes"), params))
    }
}

impl TaggerKind for FlatKind {
    fn name(&self) -> &'static str {
        "flat"
    }

    fn default_settings(&self) -> Value {
        serde_json::to_value(FlatSettings::default()).expect("settings serialize")
    }

    fn fit(
        &self,
        data: &TrainData<'_>,
        settings: &Value,
        observer: &mut dyn FnMut(&EpochStats),
    ) -> Result<Fitted, RegistryError> {
        let settings: FlatSettings = parse_settings("flat", settings)?;
        if data.val.is_empty() {
            return Err(TrainError::EmptyCorpus("validation").into());
        }
        let mut report = TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_f1: f64::NEG_INFINITY,
            wall_clock_secs: 0.0,
        };
        let started = std::time::Instant::now();
        let mut best: Option<FlatModel> = None;
        let mut failure = None;
        fit_flat(data.train, data.vocab.len(), &settings.config(), &mut |e, m| {
            match flat_eval(m, data.val, data.tree) {
                Ok((scores, sd)) => {
                    let stats = EpochStats {
                        epoch: e.epoch,
                        mean_loss: e.mean_loss,
                        val_precision: scores.precision,
                        val_recall: scores.recall,
                        val_f1: scores.f1,
                        val_sd: sd,
                    };
                    observer(&stats);
                    report.epochs.push(stats);
                    if scores.f1 > report.best_val_f1 {
                        report.best_val_f1 = scores.f1;
                        report.best_epoch = e.epoch;
                        best = Some(m.clone());
                    }
                    true
                }
                Err(err) => {
                    failure = Some(err);
                    false
                }
            }
        })?;
        if let Some(err) = failure {
            return Err(err);
        }
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok(Fitted {
            tagger: Box::new(FlatTagger {
                model: best.expect("at least one epoch evaluated"),
                settings,
            }),
            report,
        })
    }

    fn restore(&self, ckpt: &Checkpoint, tree: &OntologyTree) -> Result<Box<dyn Tagger>, RegistryError> {
        if ckpt.model_kind != "flat" {
            return Err(RegistryError::KindMismatch {
                expected: "flat",
                found: ckpt.model_kind.clone(),
            });
        }
        let config: FlatCheckpointConfig = parse_settings("flat", &ckpt.config)?;
        let labels = config
            .labels
            .iter()
            .map(|l| tree.id_of(l))
            .collect::<Result<Vec<NodeId>, _>>()?;
        let idf = named_array(ckpt, "tfidf.idf")?;
        let weights = named_array(ckpt, "label.w")?;
        let bias = named_array(ckpt, "label.b")?;
        let model = FlatModel {
            tfidf: TfidfIndex::from_idf(idf.data().to_vec()),
            labels,
            label_weights: weights.to_rows(),
            label_bias: bias.data().to_vec(),
            count_weights: named_array(ckpt, "count.w")?.data().to_vec(),
            count_bias: named_array(ckpt, "count.b")?.data().first().copied().unwrap_or(0.0),
        };
        model.validate()?;
        Ok(Box::new(FlatTagger {
            model,
            settings: config.settings,
        }))
    }
}
