//! Self-describing checkpoint files.
//!
//! One JSON document holding the model kind, its resolved config, the
//! vocabulary and ontology it was trained against (with content hashes that
//! are re-verified on load), and every parameter array as nested rows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::diffcore::{Array, TapeError};
use crate::ontology::{EdgeRecord, OntologyError, OntologyTree};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed checkpoint: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("{what} hash mismatch: checkpoint has {expected}, found {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("parameter `{name}`: {source}")]
    Array { name: String, source: TapeError },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f64>>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, array: &Array) -> Self {
        NamedArray {
            name: name.into(),
            rows: array.rows(),
            cols: array.cols(),
            values: array.to_rows(),
        }
    }

    pub fn to_array(&self) -> Result<Array, CheckpointError> {
        let err = |source| CheckpointError::Array {
            name: self.name.clone(),
            source,
        };
        if self.values.len() != self.rows {
            return Err(err(TapeError::Shape {
                op: "checkpoint",
                expected: self.rows,
                found: self.values.len(),
            }));
        }
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for row in &self.values {
            if row.len() != self.cols {
                return Err(err(TapeError::Shape {
                    op: "checkpoint",
                    expected: self.cols,
                    found: row.len(),
                }));
            }
            data.extend_from_slice(row);
        }
        Array::from_vec(self.rows, self.cols, data).map_err(err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub config: serde_json::Value,
    pub max_len: usize,
    pub vocab_hash: String,
    pub ontology_hash: String,
    /// Non-reserved tokens in id order.
    pub vocabulary: Vec<String>,
    pub ontology: Vec<EdgeRecord>,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(
        model_kind: &str,
        config: serde_json::Value,
        max_len: usize,
        vocab: &Vocabulary,
        tree: &OntologyTree,
        params: Vec<NamedArray>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model_kind: model_kind.to_owned(),
            config,
            max_len,
            vocab_hash: vocab.content_hash(),
            ontology_hash: tree.content_hash(),
            vocabulary: vocab.tokens().to_vec(),
            ontology: tree.records(),
            params,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, CheckpointError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|source| CheckpointError::Parse {
            path: path.to_owned(),
            source,
        })?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(ckpt.format_version));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Rebuilds the embedded vocabulary and ontology, checking both hashes.
    pub fn resources(&self) -> Result<(Vocabulary, OntologyTree), CheckpointError> {
        let vocab = Vocabulary::from_tokens(self.vocabulary.iter().cloned());
        check_hash("vocabulary", &self.vocab_hash, &vocab.content_hash())?;
        let tree = OntologyTree::from_records(self.ontology.iter().cloned())?;
        check_hash("ontology", &self.ontology_hash, &tree.content_hash())?;
        Ok((vocab, tree))
    }

    pub fn param(&self, name: &str) -> Option<&NamedArray> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn check_hash(what: &'static str, expected: &str, found: &str) -> Result<(), CheckpointError> {
    if expected != found {
        return Err(CheckpointError::HashMismatch {
            what,
            expected: expected.to_owned(),
            found: found.to_owned(),
        });
    }
    Ok(())
}
