//! Synthetic corpora over complete b-ary label trees.
//!
//! Every non-root node owns `keywords_per_node` unique tokens
//! (`kw_<nodeid>_<j>`). A document samples `labels_per_doc` distinct nodes,
//! closes them under ancestors and emits `repeats` copies of every keyword of
//! every node in the closure, plus filler tokens (`noise_<k>`) so that the
//! expected fraction of filler equals `noise_rate`. Tokens are shuffled.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, RawRecord};
use crate::ontology::{EdgeRecord, NodeId, OntologyTree};

/// How the `labels_per_doc` nodes of a document are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelDistribution {
    Uniform,
    /// Nodes are ranked by a seeded permutation and drawn with weight
    /// `1 / rank^exponent`.
    Zipf { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub branching: usize,
    pub depth: usize,
    pub keywords_per_node: usize,
    pub labels_per_doc: usize,
    pub noise_rate: f64,
    pub repeats: usize,
    pub noise_vocab: usize,
    pub label_distribution: LabelDistribution,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            branching: 3,
            depth: 3,
            keywords_per_node: 2,
            labels_per_doc: 2,
            noise_rate: 0.1,
            repeats: 1,
            noise_vocab: 100,
            label_distribution: LabelDistribution::Uniform,
            seed: 7,
        }
    }
}

impl SynthSpec {
    /// Node count of the generated tree, root included.
    pub fn node_count(&self) -> usize {
        (self.branching.pow(self.depth as u32 + 1) - 1) / (self.branching - 1)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: &str| Err(CorpusError::InvalidSpec(m.to_owned()));
        if self.branching < 2 {
            return fail("branching must be at least 2");
        }
        if self.depth < 2 {
            return fail("depth must be at least 2");
        }
        if self.keywords_per_node < 1 {
            return fail("keywords_per_node must be at least 1");
        }
        if self.labels_per_doc < 1 {
            return fail("labels_per_doc must be at least 1");
        }
        if self.repeats < 1 {
            return fail("repeats must be at least 1");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return fail("noise_rate must lie in [0, 1)");
        }
        if self.noise_rate > 0.0 && self.noise_vocab == 0 {
            return fail("noise_vocab must be positive when noise_rate > 0");
        }
        if let LabelDistribution::Zipf { exponent } = self.label_distribution {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return fail("zipf exponent must be finite and non-negative");
            }
        }
        // Guard against absurd sizes before computing powers.
        if (self.depth as f64 + 1.0) * (self.branching as f64).log2() > 24.0 {
            return fail("tree too large");
        }
        if self.labels_per_doc > self.node_count() - 1 {
            return fail("labels_per_doc exceeds the number of non-root nodes");
        }
        Ok(())
    }
}

/// Keyword token `j` of node `v`.
pub fn keyword(v: NodeId, j: usize) -> String {
    format!("kw_{}_{}", v.0, j)
}

/// Complete b-ary tree, labels in tree-number style (`T1`, `T1.2`, ...),
/// declared breadth-first so node ids are BFS order.
pub fn complete_tree(branching: usize, depth: usize) -> OntologyTree {
    let mut records = Vec::new();
    let mut frontier: Vec<Option<String>> = vec![None];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for parent in &frontier {
            for k in 1..=branching {
                let label = match parent {
                    None => format!("T{k}"),
                    Some(p) => format!("{p}.{k}"),
                };
                records.push(EdgeRecord::new(label.clone(), parent.as_deref()));
                next.push(Some(label));
            }
        }
        frontier = next;
    }
    OntologyTree::from_records(records).expect("complete tree is valid")
}

/// Generates the ontology and `n_docs` corpus records. Output is a pure
/// function of `spec` and `n_docs`. Record labels are already closed under
/// ancestors and sorted by node id.
pub fn gen_synthetic(
    spec: &SynthSpec,
    n_docs: usize,
) -> Result<(OntologyTree, Vec<RawRecord>), CorpusError> {
    spec.validate()?;
    let tree = complete_tree(spec.branching, spec.depth);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let candidates: Vec<NodeId> = tree.node_ids().skip(1).collect();

    let weights: Vec<f64> = match spec.label_distribution {
        LabelDistribution::Uniform => vec![1.0; candidates.len()],
        LabelDistribution::Zipf { exponent } => {
            let mut ranks: Vec<usize> = (1..=candidates.len()).collect();
            ranks.shuffle(&mut rng);
            ranks.iter().map(|&r| (r as f64).powf(-exponent)).collect()
        }
    };
    let sampler = WeightedIndex::new(&weights).expect("positive weights");

    let width = n_docs.saturating_sub(1).to_string().len().max(4);
    let mut records = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let mut picked: Vec<NodeId> = Vec::with_capacity(spec.labels_per_doc);
        while picked.len() < spec.labels_per_doc {
            let v = candidates[sampler.sample(&mut rng)];
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        let closed = tree.closure(&picked)?;

        let mut tokens = Vec::new();
        for &v in &closed {
            for j in 0..spec.keywords_per_node {
                for _ in 0..spec.repeats {
                    tokens.push(keyword(v, j));
                }
            }
        }
        let n_noise = (tokens.len() as f64 * spec.noise_rate / (1.0 - spec.noise_rate)).round() as usize;
        for _ in 0..n_noise {
            tokens.push(format!("noise_{}", rng.gen_range(0..spec.noise_vocab)));
        }
        tokens.shuffle(&mut rng);

        let labels = closed
            .iter()
            .map(|&v| tree.label(v).map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(RawRecord {
            doc_id: format!("doc{i:0width$}"),
            text: tokens.join(" "),
            labels,
        });
    }
    Ok((tree, records))
}
