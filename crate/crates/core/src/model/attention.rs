//! Node-conditioned attention over encoder states.
//!
//! For node `n` with incoming decoder state `s`, encoder state `h_j` is
//! scored as `u_n · tanh(W [s; h_j] + b)`. The variants differ in which of
//! `W` and `b` are node-specific; `u_n` always is.

use super::ModelDims;
use crate::diffcore::{Init, ParamId, ParamSpec, ParamStore, Tape, TapeError, Var};
use crate::ontology::NodeId;

/// Scores encoder states for a node. Bound to the parameter store it was
/// created from.
pub trait AttentionScorer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Per-document work shared by every node (e.g. projecting `h_j`).
    fn prepare(&self, tape: &mut Tape<'_>, states: &[Var]) -> Result<Vec<Var>, TapeError>;

    /// One unnormalized score (length-1 var) per encoder position.
    fn scores(
        &self,
        tape: &mut Tape<'_>,
        keys: &[Var],
        state: Var,
        node: NodeId,
    ) -> Result<Vec<Var>, TapeError>;
}

/// A registered attention variant: declares its parameters and binds a scorer.
pub trait AttentionKind: Sync {
    fn name(&self) -> &'static str;
    fn param_specs(&self, dims: &ModelDims, n_nodes: usize) -> Vec<ParamSpec>;
    fn bind(&self, store: &ParamStore) -> Result<Box<dyn AttentionScorer>, TapeError>;
}

pub const DEFAULT_ATTENTION: &str = "factored";

static REGISTRY: [&dyn AttentionKind; 2] = [&Factored, &PerNodeMlp];

pub fn registry() -> &'static [&'static dyn AttentionKind] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Option<&'static dyn AttentionKind> {
    REGISTRY.iter().copied().find(|k| k.name() == name)
}

/// Shared `W`, `b` (`attn_shared.*`) and a per-node score vector `u_n`
/// (`attn_node.u`). Encoder projections are computed once per document.
pub struct Factored;

struct FactoredScorer {
    w_s: ParamId,
    w_h: ParamId,
    b: ParamId,
    u: ParamId,
}

impl AttentionKind for Factored {
    fn name(&self) -> &'static str {
        "factored"
    }

    fn param_specs(&self, dims: &ModelDims, n_nodes: usize) -> Vec<ParamSpec> {
        let fan_in = dims.d_s + dims.d_h;
        vec![
            ParamSpec::new(
                "attn_shared.w_s",
                dims.d_a,
                dims.d_s,
                Init::Xavier {
                    fan_in,
                    fan_out: dims.d_a,
                },
            ),
            ParamSpec::new(
                "attn_shared.w_h",
                dims.d_a,
                dims.d_h,
                Init::Xavier {
                    fan_in,
                    fan_out: dims.d_a,
                },
            ),
            ParamSpec::new("attn_shared.b", 1, dims.d_a, Init::Zero),
            ParamSpec::new(
                "attn_node.u",
                n_nodes,
                dims.d_a,
                Init::Xavier {
                    fan_in: dims.d_a,
                    fan_out: 1,
                },
            ),
        ]
    }

    fn bind(&self, store: &ParamStore) -> Result<Box<dyn AttentionScorer>, TapeError> {
        Ok(Box::new(FactoredScorer {
            w_s: store.id("attn_shared.w_s")?,
            w_h: store.id("attn_shared.w_h")?,
            b: store.id("attn_shared.b")?,
            u: store.id("attn_node.u")?,
        }))
    }
}

impl AttentionScorer for FactoredScorer {
    fn name(&self) -> &'static str {
        "factored"
    }

    fn prepare(&self, tape: &mut Tape<'_>, states: &[Var]) -> Result<Vec<Var>, TapeError> {
        states.iter().map(|&h| tape.matvec(self.w_h, h)).collect()
    }

    fn scores(
        &self,
        tape: &mut Tape<'_>,
        keys: &[Var],
        state: Var,
        node: NodeId,
    ) -> Result<Vec<Var>, TapeError> {
        let ws = tape.matvec(self.w_s, state)?;
        let b = tape.param_row(self.b, 0)?;
        let query = tape.add(ws, b)?;
        let u = tape.param_row(self.u, node.index())?;
        keys.iter()
            .map(|&k| {
                let pre = tape.add(k, query)?;
                let act = tape.tanh(pre);
                tape.dot(u, act)
            })
            .collect()
    }
}

/// A full MLP per node: `attn_node.{w_s, w_h, b, u}` with blocks of `d_a`
/// rows per node. Memory grows with `N · d_a · (d_s + d_h)`.
pub struct PerNodeMlp;

struct PerNodeScorer {
    w_s: ParamId,
    w_h: ParamId,
    b: ParamId,
    u: ParamId,
    d_a: usize,
}

impl AttentionKind for PerNodeMlp {
    fn name(&self) -> &'static str {
        "per-node-mlp"
    }

    fn param_specs(&self, dims: &ModelDims, n_nodes: usize) -> Vec<ParamSpec> {
        let fan_in = dims.d_s + dims.d_h;
        vec![
            ParamSpec::new(
                "attn_node.w_s",
                n_nodes * dims.d_a,
                dims.d_s,
                Init::Xavier {
                    fan_in,
                    fan_out: dims.d_a,
                },
            ),
            ParamSpec::new(
                "attn_node.w_h",
                n_nodes * dims.d_a,
                dims.d_h,
                Init::Xavier {
                    fan_in,
                    fan_out: dims.d_a,
                },
            ),
            ParamSpec::new("attn_node.b", n_nodes, dims.d_a, Init::Zero),
            ParamSpec::new(
                "attn_node.u",
                n_nodes,
                dims.d_a,
                Init::Xavier {
                    fan_in: dims.d_a,
                    fan_out: 1,
                },
            ),
        ]
    }

    fn bind(&self, store: &ParamStore) -> Result<Box<dyn AttentionScorer>, TapeError> {
        let u = store.id("attn_node.u")?;
        Ok(Box::new(PerNodeScorer {
            w_s: store.id("attn_node.w_s")?,
            w_h: store.id("attn_node.w_h")?,
            b: store.id("attn_node.b")?,
            u,
            d_a: store.get(u).cols(),
        }))
    }
}

impl AttentionScorer for PerNodeScorer {
    fn name(&self) -> &'static str {
        "per-node-mlp"
    }

    fn prepare(&self, _tape: &mut Tape<'_>, states: &[Var]) -> Result<Vec<Var>, TapeError> {
        Ok(states.to_vec())
    }

    fn scores(
        &self,
        tape: &mut Tape<'_>,
        keys: &[Var],
        state: Var,
        node: NodeId,
    ) -> Result<Vec<Var>, TapeError> {
        let row0 = node.index() * self.d_a;
        let ws = tape.matvec_rows(self.w_s, row0, self.d_a, state)?;
        let b = tape.param_row(self.b, node.index())?;
        let query = tape.add(ws, b)?;
        let u = tape.param_row(self.u, node.index())?;
        keys.iter()
            .map(|&h| {
                let wh = tape.matvec_rows(self.w_h, row0, self.d_a, h)?;
                let pre = tape.add(wh, query)?;
                let act = tape.tanh(pre);
                tape.dot(u, act)
            })
            .collect()
    }
}
