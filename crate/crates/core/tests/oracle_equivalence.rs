mod support {
    pub mod oracles;
}

use std::collections::BTreeSet;

use ntd_core::metrics::semantic_distance;
use ntd_core::model::{ModelDims, NtdConfig, NtdModel};
use ntd_core::ontology::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::oracles::{all_pairs, brute_sd, decode_oracle, random_tree};

const DIMS: ModelDims = ModelDims {
    d_w: 6,
    d_h: 7,
    d_s: 8,
    d_n: 4,
    d_a: 5,
};

fn random_subset(rng: &mut ChaCha8Rng, n: usize, p: f64) -> BTreeSet<NodeId> {
    (1..=n as u32).filter(|_| rng.gen_bool(p)).map(NodeId).collect()
}

#[test]
fn recursive_decode_matches_stack_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut expanded = 0;
    for case in 0..40 {
        let n = rng.gen_range(1..=25);
        let tree = random_tree(&mut rng, n);
        let vocab = 12;
        let tokens: Vec<u32> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..vocab)).collect();
        let mut config = NtdConfig::new(DIMS, vocab as usize, tree.len());
        if case % 2 == 1 {
            config.attention = "per-node-mlp".into();
        }
        let mut model = NtdModel::new(config, case).unwrap();
        let (_, params) = model.parts_mut();
        let out_b = params.id("out.b").unwrap();
        for b in params.get_mut(out_b).data_mut() {
            *b = rng.gen_range(-2.0..2.0);
        }
        for tau in [0.3, 0.5, 0.7] {
            let got = model.decode(&tree, &tokens, tau, usize::MAX).unwrap();
            let (applied, scores) = decode_oracle(model.params(), &tree, &tokens, tau);
            assert_eq!(got.applied, applied, "case {case} tau {tau}");
            expanded += usize::from(!applied.is_empty());
            assert_eq!(got.scores.keys().collect::<Vec<_>>(), scores.keys().collect::<Vec<_>>());
            for (v, s) in &scores {
                assert!((got.scores[v] - s).abs() <= 1e-12, "case {case} node {v:?}");
            }
        }
    }
    assert!(expanded > 10 && expanded < 110, "{expanded} of 120 decodes expanded");
}

#[test]
fn tree_distance_matches_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(1..=60);
        let tree = random_tree(&mut rng, n);
        let dist = all_pairs(&tree);
        for u in tree.node_ids() {
            for v in tree.node_ids() {
                assert_eq!(tree.distance(u, v).unwrap(), dist[u.index()][v.index()]);
            }
        }
    }
}

#[test]
fn semantic_distance_matches_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..60 {
        let n = rng.gen_range(1..=120);
        let tree = random_tree(&mut rng, n);
        let dist = all_pairs(&tree);
        let gold = random_subset(&mut rng, n, 0.1);
        let pred = match case % 3 {
            0 => BTreeSet::new(),
            1 => gold.union(&random_subset(&mut rng, n, 0.05)).copied().collect(),
            _ => random_subset(&mut rng, n, 0.1),
        };
        let sd = semantic_distance(&gold, &pred, &tree).unwrap();
        assert_eq!(sd, brute_sd(&dist, &gold, &pred), "case {case}");
        if case % 3 == 1 {
            assert_eq!(sd, 0.0);
        }
    }
}
