//! Which scored children incur loss.
//!
//! The stochastic variant includes child `v` with probability `p_v` from the
//! [`FrequencyTable`]; the deterministic variant includes every child.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ontology::{FrequencyTable, NodeId};

/// Per-child loss inclusion decision, consulted once per scored child.
pub trait LossMask {
    fn include(&mut self, v: NodeId) -> bool;

    /// True when the decision for a node never changes between calls.
    fn is_frozen(&self) -> bool;
}

/// A registered training variant that produces loss masks.
pub trait LossVariant: Sync {
    fn name(&self) -> &'static str;
    fn mask(&self, freq: &FrequencyTable, seed: u64) -> Box<dyn LossMask + Send>;
}

pub const DEFAULT_VARIANT: &str = "stochastic";

static REGISTRY: [&dyn LossVariant; 2] = [&Stochastic, &Deterministic];

pub fn registry() -> &'static [&'static dyn LossVariant] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Option<&'static dyn LossVariant> {
    REGISTRY.iter().copied().find(|v| v.name() == name)
}

pub struct Stochastic;

impl LossVariant for Stochastic {
    fn name(&self) -> &'static str {
        "stochastic"
    }

    fn mask(&self, freq: &FrequencyTable, seed: u64) -> Box<dyn LossMask + Send> {
        Box::new(BernoulliMask::new(freq.clone(), seed))
    }
}

pub struct Deterministic;

impl LossVariant for Deterministic {
    fn name(&self) -> &'static str {
        "deterministic"
    }

    fn mask(&self, _freq: &FrequencyTable, _seed: u64) -> Box<dyn LossMask + Send> {
        Box::new(IncludeAll)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IncludeAll;

impl LossMask for IncludeAll {
    fn include(&mut self, _v: NodeId) -> bool {
        true
    }

    fn is_frozen(&self) -> bool {
        true
    }
}

impl<M: LossMask + ?Sized> LossMask for Box<M> {
    fn include(&mut self, v: NodeId) -> bool {
        (**self).include(v)
    }

    fn is_frozen(&self) -> bool {
        (**self).is_frozen()
    }
}

/// Draws `B_v ~ Bernoulli(p_v)` from a seeded stream.
#[derive(Debug, Clone)]
pub struct BernoulliMask {
    freq: FrequencyTable,
    rng: ChaCha8Rng,
}

impl BernoulliMask {
    pub fn new(freq: FrequencyTable, seed: u64) -> Self {
        BernoulliMask {
            freq,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl LossMask for BernoulliMask {
    fn include(&mut self, v: NodeId) -> bool {
        let p = self.freq.probability(v);
        self.rng.gen::<f64>() < p
    }

    fn is_frozen(&self) -> bool {
        false
    }
}

/// Wraps a mask and remembers which nodes it included.
pub struct Recording<M> {
    inner: M,
    included: BTreeSet<NodeId>,
}

impl<M: LossMask> Recording<M> {
    pub fn new(inner: M) -> Self {
        Recording {
            inner,
            included: BTreeSet::new(),
        }
    }

    pub fn freeze(self) -> FrozenMask {
        FrozenMask {
            included: self.included,
        }
    }
}

impl<M: LossMask> LossMask for Recording<M> {
    fn include(&mut self, v: NodeId) -> bool {
        let keep = self.inner.include(v);
        if keep {
            self.included.insert(v);
        }
        keep
    }

    fn is_frozen(&self) -> bool {
        self.inner.is_frozen()
    }
}

/// Replays a fixed set of decisions. Within one teacher-forced traversal each
/// node is scored at most once, so decisions keyed by node are exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrozenMask {
    included: BTreeSet<NodeId>,
}

impl FrozenMask {
    pub fn new(included: BTreeSet<NodeId>) -> Self {
        FrozenMask { included }
    }

    pub fn included(&self) -> &BTreeSet<NodeId> {
        &self.included
    }
}

impl LossMask for FrozenMask {
    fn include(&mut self, v: NodeId) -> bool {
        self.included.contains(&v)
    }

    fn is_frozen(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_rate_matches_probability() {
        // m = 2, f = 8 → p = 0.75
        let freq = FrequencyTable::from_counts(vec![0, 8, 2]);
        let v = NodeId(1);
        assert_eq!(freq.probability(v), 0.75);
        let mut mask = BernoulliMask::new(freq, 3);
        let hits = (0..10_000).filter(|_| mask.include(v)).count();
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.75).abs() < 0.02, "rate {rate}");
        assert!((0..100).all(|_| mask.include(NodeId(2))));
    }

    #[test]
    fn same_seed_same_draws() {
        let freq = FrequencyTable::from_counts(vec![0, 9, 3, 40]);
        let draw = |seed| {
            let mut m = BernoulliMask::new(freq.clone(), seed);
            (0..200).map(|i| m.include(NodeId(1 + i % 3))).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn recording_freezes_decisions() {
        let freq = FrequencyTable::from_counts(vec![0, 100, 1, 50]);
        let mut rec = Recording::new(BernoulliMask::new(freq, 1));
        let first: Vec<bool> = (1..4).map(|i| rec.include(NodeId(i))).collect();
        assert!(!rec.is_frozen());
        let mut frozen = rec.freeze();
        assert!(frozen.is_frozen());
        let replay: Vec<bool> = (1..4).map(|i| frozen.include(NodeId(i))).collect();
        assert_eq!(first, replay);
    }

    #[test]
    fn registry_names() {
        assert!(lookup("stochastic").is_some());
        assert!(lookup("deterministic").is_some());
        assert!(lookup("other").is_none());
        assert_eq!(registry().len(), 2);
    }

    #[test]
    fn deterministic_variant_includes_every_child() {
        let freq = FrequencyTable::from_counts(vec![0, 1000, 1, 5]);
        let mut m = lookup("deterministic").unwrap().mask(&freq, 9);
        assert!(m.is_frozen());
        assert!((0..1000).all(|i| m.include(NodeId(1 + i % 3))));
    }
}
