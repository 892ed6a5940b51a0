//! The neural tree decoder.
//!
//! A GRU encodes the token sequence into states `H`. Decoding starts at the
//! root with a zero state. At node `n` with incoming state `s`, attention
//! conditioned on `(s, n)` yields a context `c_n`; a decoder GRU consumes
//! `[e_n; c_n]` to produce `s_n`; each child `v` is scored
//! `σ(W_v · [s_n; c_n] + b_v)`. Children above the threshold are applied and
//! expanded with `s_n` as their incoming state.
//!
//! [`NtdNetwork`] holds the wiring (parameter handles and the attention
//! strategy) and runs on a [`Tape`]; [`NtdModel`] pairs it with the
//! parameter values.

pub mod attention;
pub mod gru;
pub mod mask;

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_embeddings_into, CorpusError, Vocabulary};
use crate::diffcore::{
    Gradients, Init, Objective, ParamId, ParamSpec, ParamStore, Tape, TapeError, Var,
};
use crate::ontology::{LabelSet, NodeId, OntologyTree};

use attention::AttentionScorer;
use gru::GruParams;
use mask::LossMask;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("empty document")]
    EmptyDocument,
    #[error("decoding visited more than {max_nodes} nodes")]
    BudgetExceeded { max_nodes: usize },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("model has {model} nodes but the ontology has {ontology}")]
    TreeMismatch { model: usize, ontology: usize },
    #[error("unknown attention variant `{0}`")]
    UnknownAttention(String),
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Embeddings(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Word embedding size.
    pub d_w: usize,
    /// Encoder state size.
    pub d_h: usize,
    /// Decoder state size.
    pub d_s: usize,
    /// Node embedding size.
    pub d_n: usize,
    /// Attention hidden size.
    pub d_a: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_w: 32,
            d_h: 64,
            d_s: 64,
            d_n: 16,
            d_a: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.d_w, self.d_h, self.d_s, self.d_n, self.d_a];
        if all.contains(&0) {
            return Err(ModelError::InvalidDims("all dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtdConfig {
    pub dims: ModelDims,
    pub attention: String,
    pub vocab_size: usize,
    pub n_nodes: usize,
}

impl NtdConfig {
    pub fn new(dims: ModelDims, vocab_size: usize, n_nodes: usize) -> Self {
        NtdConfig {
            dims,
            attention: attention::DEFAULT_ATTENTION.to_owned(),
            vocab_size,
            n_nodes,
        }
    }

    fn attention_kind(&self) -> Result<&'static dyn attention::AttentionKind, ModelError> {
        attention::lookup(&self.attention).ok_or_else(|| ModelError::UnknownAttention(self.attention.clone()))
    }

    /// Every parameter array the model declares, in store order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>, ModelError> {
        self.dims.validate()?;
        let d = &self.dims;
        let mut specs = vec![ParamSpec::new(
            "word_emb",
            self.vocab_size,
            d.d_w,
            Init::Xavier {
                fan_in: 1,
                fan_out: d.d_w,
            },
        )];
        specs.extend(GruParams::specs("enc_gru", d.d_w, d.d_h));
        specs.push(ParamSpec::new(
            "node_emb",
            self.n_nodes,
            d.d_n,
            Init::Xavier {
                fan_in: 1,
                fan_out: d.d_n,
            },
        ));
        specs.extend(self.attention_kind()?.param_specs(d, self.n_nodes));
        specs.extend(GruParams::specs("dec_gru", d.d_n + d.d_h, d.d_s));
        specs.push(ParamSpec::new(
            "out.w",
            self.n_nodes,
            d.d_s + d.d_h,
            Init::Xavier {
                fan_in: d.d_s + d.d_h,
                fan_out: 1,
            },
        ));
        specs.push(ParamSpec::new("out.b", self.n_nodes, 1, Init::Zero));
        Ok(specs)
    }
}

/// Applied labels plus every score computed while decoding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub applied: LabelSet,
    pub scores: BTreeMap<NodeId, f64>,
}

/// Encoder states plus the attention strategy's per-document keys.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Vec<Var>,
    pub keys: Vec<Var>,
}

/// Output of one decoder step at a node.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub attention: Var,
    pub context: Var,
    pub state: Var,
    /// `[s_n; c_n]`, the input to child scoring.
    pub features: Var,
}

/// Result of a teacher-forced loss traversal.
#[derive(Debug, Clone)]
pub struct LossTrace {
    pub loss: Var,
    pub visited: Vec<NodeId>,
    pub scored: Vec<NodeId>,
    pub included: Vec<NodeId>,
}

/// Parameter handles and wiring; independent of parameter values.
pub struct NtdNetwork {
    config: NtdConfig,
    word_emb: ParamId,
    enc: GruParams,
    node_emb: ParamId,
    dec: GruParams,
    out_w: ParamId,
    out_b: ParamId,
    attention: Box<dyn AttentionScorer>,
}

impl NtdNetwork {
    fn bind(config: NtdConfig, store: &ParamStore) -> Result<Self, ModelError> {
        for spec in config.param_specs()? {
            let found = store
                .by_name(&spec.name)
                .ok_or_else(|| TapeError::UnknownParam(spec.name.clone()))?
                .shape();
            if found != (spec.rows, spec.cols) {
                return Err(ModelError::ParamShape {
                    name: spec.name,
                    expected: (spec.rows, spec.cols),
                    found,
                });
            }
        }
        let attention = config.attention_kind()?.bind(store)?;
        Ok(NtdNetwork {
            word_emb: store.id("word_emb")?,
            enc: GruParams::bind(store, "enc_gru")?,
            node_emb: store.id("node_emb")?,
            dec: GruParams::bind(store, "dec_gru")?,
            out_w: store.id("out.w")?,
            out_b: store.id("out.b")?,
            attention,
            config,
        })
    }

    pub fn config(&self) -> &NtdConfig {
        &self.config
    }

    pub fn check_tree(&self, tree: &OntologyTree) -> Result<(), ModelError> {
        if tree.len() != self.config.n_nodes {
            return Err(ModelError::TreeMismatch {
                model: self.config.n_nodes,
                ontology: tree.len(),
            });
        }
        Ok(())
    }

    /// `h_t = GRU(x_t, h_{t−1})` from a zero initial state.
    pub fn encode(&self, tape: &mut Tape<'_>, tokens: &[u32]) -> Result<Encoded, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyDocument);
        }
        let mut h = tape.zeros(self.config.dims.d_h);
        let mut states = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let x = tape.param_row(self.word_emb, tok as usize)?;
            h = self.enc.step(tape, x, h)?;
            states.push(h);
        }
        let keys = self.attention.prepare(tape, &states)?;
        Ok(Encoded { states, keys })
    }

    /// Attention distribution and context vector for node `n` given the
    /// incoming state.
    pub fn attend(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        state_in: Var,
        node: NodeId,
    ) -> Result<(Var, Var), ModelError> {
        let scores = self.attention.scores(tape, &enc.keys, state_in, node)?;
        let stacked = tape.concat(&scores)?;
        let alpha = tape.softmax(stacked)?;
        let context = tape.weighted_sum(alpha, &enc.states)?;
        Ok((alpha, context))
    }

    /// `c_n` from attention on the incoming state, then
    /// `s_n = GRU([e_n; c_n], s_in)`.
    pub fn step(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        node: NodeId,
        state_in: Var,
    ) -> Result<Step, ModelError> {
        let (alpha, context) = self.attend(tape, enc, state_in, node)?;
        let emb = tape.param_row(self.node_emb, node.index())?;
        let input = tape.concat(&[emb, context])?;
        let state = self.dec.step(tape, input, state_in)?;
        let features = tape.concat(&[state, context])?;
        Ok(Step {
            attention: alpha,
            context,
            state,
            features,
        })
    }

    /// `σ(W_v · [s_n; c_n] + b_v)` as a length-1 var.
    pub fn score_child(&self, tape: &mut Tape<'_>, features: Var, v: NodeId) -> Result<Var, ModelError> {
        let logit = tape.matvec_rows(self.out_w, v.index(), 1, features)?;
        let bias = tape.param_row(self.out_b, v.index())?;
        let z = tape.add(logit, bias)?;
        Ok(tape.sigmoid(z))
    }

    /// Inference: depth-first expansion of every child scoring above `tau`.
    pub fn decode(
        &self,
        params: &ParamStore,
        tree: &OntologyTree,
        tokens: &[u32],
        tau: f64,
        max_nodes: usize,
    ) -> Result<PredictionSet, ModelError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(ModelError::InvalidThreshold(tau));
        }
        self.check_tree(tree)?;
        let mut tape = Tape::new(params);
        let enc = self.encode(&mut tape, tokens)?;
        let s0 = tape.zeros(self.config.dims.d_s);
        let mut out = PredictionSet::default();
        let mut visited = 0usize;
        self.expand(&mut tape, tree, &enc, NodeId::ROOT, s0, tau, max_nodes, &mut visited, &mut out)?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(
        &self,
        tape: &mut Tape<'_>,
        tree: &OntologyTree,
        enc: &Encoded,
        node: NodeId,
        state_in: Var,
        tau: f64,
        max_nodes: usize,
        visited: &mut usize,
        out: &mut PredictionSet,
    ) -> Result<(), ModelError> {
        *visited += 1;
        if *visited > max_nodes {
            return Err(ModelError::BudgetExceeded { max_nodes });
        }
        let step = self.step(tape, enc, node, state_in)?;
        for &v in tree.children(node).expect("node from tree") {
            let y = self.score_child(tape, step.features, v)?;
            let p = tape.scalar(y);
            out.scores.insert(v, p);
            if p > tau {
                out.applied.insert(v);
                self.expand(tape, tree, enc, v, step.state, tau, max_nodes, visited, out)?;
            }
        }
        Ok(())
    }

    /// Teacher-forced loss from node `n`: every child is scored, children the
    /// mask includes add a binary cross-entropy term, and recursion follows
    /// the gold subtree only.
    #[allow(clippy::too_many_arguments)]
    pub fn node_loss(
        &self,
        tape: &mut Tape<'_>,
        tree: &OntologyTree,
        enc: &Encoded,
        node: NodeId,
        state_in: Var,
        gold: &LabelSet,
        mask: &mut dyn LossMask,
    ) -> Result<LossTrace, ModelError> {
        self.check_tree(tree)?;
        let mut terms = Vec::new();
        let mut trace = LossTrace {
            loss: state_in,
            visited: Vec::new(),
            scored: Vec::new(),
            included: Vec::new(),
        };
        self.accumulate_loss(tape, tree, enc, node, state_in, gold, mask, &mut terms, &mut trace)?;
        trace.loss = if terms.is_empty() {
            tape.constant(&[0.0])
        } else {
            tape.sum(&terms)?
        };
        Ok(trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_loss(
        &self,
        tape: &mut Tape<'_>,
        tree: &OntologyTree,
        enc: &Encoded,
        node: NodeId,
        state_in: Var,
        gold: &LabelSet,
        mask: &mut dyn LossMask,
        terms: &mut Vec<Var>,
        trace: &mut LossTrace,
    ) -> Result<(), ModelError> {
        trace.visited.push(node);
        let step = self.step(tape, enc, node, state_in)?;
        for &v in tree.children(node).expect("node from tree") {
            let y = self.score_child(tape, step.features, v)?;
            trace.scored.push(v);
            let positive = gold.contains(&v);
            if mask.include(v) {
                trace.included.push(v);
                terms.push(tape.bce(y, if positive { 1.0 } else { 0.0 })?);
            }
            if positive {
                self.accumulate_loss(tape, tree, enc, v, step.state, gold, mask, terms, trace)?;
            }
        }
        Ok(())
    }

    /// Encodes the document and runs [`node_loss`] from the root with a zero state.
    ///
    /// [`node_loss`]: NtdNetwork::node_loss
    pub fn document_loss(
        &self,
        tape: &mut Tape<'_>,
        tree: &OntologyTree,
        tokens: &[u32],
        gold: &LabelSet,
        mask: &mut dyn LossMask,
    ) -> Result<LossTrace, ModelError> {
        let enc = self.encode(tape, tokens)?;
        let s0 = tape.zeros(self.config.dims.d_s);
        self.node_loss(tape, tree, &enc, NodeId::ROOT, s0, gold, mask)
    }
}

/// Document loss as a rebuildable objective for gradient checking.
pub struct DocumentObjective<'a, M> {
    network: &'a NtdNetwork,
    tree: &'a OntologyTree,
    tokens: &'a [u32],
    gold: &'a LabelSet,
    mask: M,
}

impl<'a, M: LossMask> DocumentObjective<'a, M> {
    pub fn new(
        network: &'a NtdNetwork,
        tree: &'a OntologyTree,
        tokens: &'a [u32],
        gold: &'a LabelSet,
        mask: M,
    ) -> Result<Self, ModelError> {
        network.check_tree(tree)?;
        if tokens.is_empty() {
            return Err(ModelError::EmptyDocument);
        }
        Ok(DocumentObjective {
            network,
            tree,
            tokens,
            gold,
            mask,
        })
    }
}

impl<M: LossMask> Objective for DocumentObjective<'_, M> {
    fn is_deterministic(&self) -> bool {
        self.mask.is_frozen()
    }

    fn build(&mut self, tape: &mut Tape<'_>) -> Result<Var, TapeError> {
        match self
            .network
            .document_loss(tape, self.tree, self.tokens, self.gold, &mut self.mask)
        {
            Ok(trace) => Ok(trace.loss),
            Err(ModelError::Tape(e)) => Err(e),
            Err(other) => unreachable!("checked in DocumentObjective::new: {other}"),
        }
    }
}

/// Network wiring together with its parameter values.
pub struct NtdModel {
    network: NtdNetwork,
    params: ParamStore,
}

impl Clone for NtdModel {
    fn clone(&self) -> Self {
        NtdModel::from_params(self.network.config.clone(), self.params.clone())
            .expect("cloning a valid model")
    }
}

impl std::fmt::Debug for NtdModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NtdModel")
            .field("config", &self.network.config)
            .field("num_values", &self.params.num_values())
            .finish()
    }
}

impl NtdModel {
    /// Freshly initialized parameters.
    pub fn new(config: NtdConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ParamStore::init(&config.param_specs()?, seed)?;
        Self::from_params(config, params)
    }

    /// Wraps existing parameter values, checking every expected array exists
    /// with the right shape.
    pub fn from_params(config: NtdConfig, params: ParamStore) -> Result<Self, ModelError> {
        let network = NtdNetwork::bind(config, &params)?;
        Ok(NtdModel { network, params })
    }

    pub fn config(&self) -> &NtdConfig {
        &self.network.config
    }

    pub fn network(&self) -> &NtdNetwork {
        &self.network
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Split borrow for training and gradient checks.
    pub fn parts_mut(&mut self) -> (&NtdNetwork, &mut ParamStore) {
        (&self.network, &mut self.params)
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn decode(
        &self,
        tree: &OntologyTree,
        tokens: &[u32],
        tau: f64,
        max_nodes: usize,
    ) -> Result<PredictionSet, ModelError> {
        self.network.decode(&self.params, tree, tokens, tau, max_nodes)
    }

    /// Loss of one document; gradients are added into `grads`.
    pub fn loss_and_grad(
        &self,
        tree: &OntologyTree,
        tokens: &[u32],
        gold: &LabelSet,
        mask: &mut dyn LossMask,
        grads: &mut Gradients,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new(&self.params);
        let trace = self.network.document_loss(&mut tape, tree, tokens, gold, mask)?;
        tape.backward(trace.loss, grads)?;
        Ok(tape.scalar(trace.loss))
    }

    /// Overwrites word embedding rows from a `token v1 .. vd` file; returns
    /// the fraction of vocabulary entries covered.
    pub fn load_word_embeddings<R: Read>(&mut self, reader: R, vocab: &Vocabulary) -> Result<f64, ModelError> {
        let table = self.params.get_mut(self.network.word_emb);
        Ok(crate::corpus::load_word_embeddings(reader, vocab, table)?)
    }

    /// Overwrites node embedding rows from a `label v1 .. vd` file; returns
    /// the fraction of non-root nodes covered.
    pub fn load_node_embeddings<R: Read>(&mut self, reader: R, tree: &OntologyTree) -> Result<f64, ModelError> {
        self.network.check_tree(tree)?;
        let table = self.params.get_mut(self.network.node_emb);
        let written = load_embeddings_into(reader, table, |label| tree.id_of(label).ok().map(NodeId::index))?;
        let total = tree.len() - 1;
        Ok(if total == 0 { 0.0 } else { written as f64 / total as f64 })
    }
}

#[cfg(test)]
mod tests;
