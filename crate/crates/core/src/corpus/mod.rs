//! Text ingestion: tokenization, vocabulary, corpus and embedding files.
//!
//! Corpus files hold one JSON object per line with a `doc_id`, the raw
//! `text` and a `labels` array of ontology label strings.

pub mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffcore::Array;
use crate::ontology::{LabelSet, OntologyError, OntologyTree};

pub use synth::{gen_synthetic, LabelDistribution, SynthSpec};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

/// Default vocabulary bound.
pub const DEFAULT_VOCAB_SIZE: usize = 50_000;
/// Default truncation length in tokens.
pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary bound must be at least 1")]
    InvalidBound,
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: document `{doc_id}` has no tokens")]
    EmptyDocument { line: usize, doc_id: String },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("embedding line {line}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding line {line}: cannot parse `{value}`")]
    Unparseable { line: usize, value: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Lowercases and splits on every maximal run of characters that are neither
/// alphanumeric nor `_`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ id map with `<pad>` = 0 and `<unk>` = 1 reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `max_size` most frequent tokens, ties broken lexicographically.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size == 0 {
            return Err(CorpusError::InvalidBound);
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut seen_any = false;
        for text in texts {
            seen_any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    /// Builds a vocabulary from an explicit token list (reserved entries are
    /// added automatically and must not be included).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens: all, index }
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// Total size including reserved entries.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK_TOKEN)).collect()
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// One line of a corpus or prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub doc_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

/// A tokenized document with its ancestor-closed gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<u32>,
    pub gold: LabelSet,
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<RawRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_records(file)
}

pub fn write_records<W: Write>(mut writer: W, records: &[RawRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_records_file(path: &Path, records: &[RawRecord]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_records(BufWriter::new(file), records).map_err(|e| CorpusError::io(path, e))
}

/// Resolves label strings to an ancestor-closed set. `line` is 1-based and
/// only used for error messages.
pub fn resolve_labels(
    tree: &OntologyTree,
    labels: &[String],
    line: usize,
) -> Result<LabelSet, CorpusError> {
    let ids = labels
        .iter()
        .map(|l| {
            tree.id_of(l).map_err(|_| CorpusError::UnknownLabel {
                line,
                label: l.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tree.closure(&ids)?)
}

/// Tokenizes and encodes text, truncating to `max_len` tokens.
pub fn encode_text(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<u32> {
    let mut tokens = tokenize(text);
    tokens.truncate(max_len);
    vocab.encode(&tokens)
}

pub fn documents_from_records(
    records: &[RawRecord],
    tree: &OntologyTree,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<Document>, CorpusError> {
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 1;
            let gold = resolve_labels(tree, &rec.labels, line)?;
            let tokens = encode_text(vocab, &rec.text, max_len);
            if tokens.is_empty() {
                return Err(CorpusError::EmptyDocument {
                    line,
                    doc_id: rec.doc_id.clone(),
                });
            }
            Ok(Document {
                doc_id: rec.doc_id.clone(),
                tokens,
                gold,
            })
        })
        .collect()
}

/// Reads a corpus file into documents. Record line numbers in errors count
/// non-blank lines.
pub fn load_corpus(
    path: &Path,
    tree: &OntologyTree,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<Document>, CorpusError> {
    let records = read_records_file(path)?;
    documents_from_records(&records, tree, vocab, max_len)
}

/// Overwrites rows of `table` from a whitespace-separated text file of
/// `key v1 .. vd` lines. `row_of` maps a key to its row; unknown keys are
/// skipped. Returns the number of distinct rows written.
pub fn load_embeddings_into<R, F>(
    reader: R,
    table: &mut Array,
    mut row_of: F,
) -> Result<usize, CorpusError>
where
    R: Read,
    F: FnMut(&str) -> Option<usize>,
{
    let dim = table.cols();
    let mut written = vec![false; table.rows()];
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let values = fields
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CorpusError::Unparseable {
                        line: line_no,
                        value: v.to_owned(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(row) = row_of(key).filter(|&r| r < table.rows()) {
            table.row_mut(row).copy_from_slice(&values);
            written[row] = true;
        }
    }
    Ok(written.iter().filter(|&&w| w).count())
}

/// Loads pretrained word vectors into `table` (one row per vocabulary id) and
/// returns the fraction of non-reserved vocabulary entries covered.
pub fn load_word_embeddings<R: Read>(
    reader: R,
    vocab: &Vocabulary,
    table: &mut Array,
) -> Result<f64, CorpusError> {
    let written = load_embeddings_into(reader, table, |tok| {
        vocab.get(tok).filter(|&id| id > UNK).map(|id| id as usize)
    })?;
    let total = vocab.len().saturating_sub(2);
    Ok(if total == 0 {
        0.0
    } else {
        written as f64 / total as f64
    })
}
