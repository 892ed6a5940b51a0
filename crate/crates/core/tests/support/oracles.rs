//! Independent reference implementations shared by integration and
//! acceptance tests. Nothing here calls into the tape or the ontology's
//! LCA machinery.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ntd_core::diffcore::{Array, ParamStore};
use ntd_core::ontology::{EdgeRecord, NodeId, OntologyTree};
use rand::Rng;

/// Random rooted tree with `n` labelled nodes; node `i` hangs under a
/// uniformly chosen earlier node (or the root).
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> OntologyTree {
    let recs = (1..=n).map(|i| {
        let p = rng.gen_range(0..i);
        EdgeRecord {
            child: format!("n{i}"),
            parent: (p != 0).then(|| format!("n{p}")),
        }
    });
    OntologyTree::from_records(recs).expect("random tree is valid")
}

/// Undirected adjacency lists including the root.
pub fn adjacency(tree: &OntologyTree) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); tree.len()];
    for v in tree.node_ids() {
        if let Some(p) = tree.parent(v).unwrap() {
            adj[v.index()].push(p.index());
            adj[p.index()].push(v.index());
        }
    }
    adj
}

/// Hop counts from `src` to every node.
pub fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adj.len()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if dist[w] == u32::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn all_pairs(tree: &OntologyTree) -> Vec<Vec<u32>> {
    let adj = adjacency(tree);
    (0..adj.len()).map(|s| bfs(&adj, s)).collect()
}

/// Mean over gold labels of the hop count to the nearest node of
/// `pred ∪ {ROOT}`; zero for an empty gold set.
pub fn brute_sd(dist: &[Vec<u32>], gold: &BTreeSet<NodeId>, pred: &BTreeSet<NodeId>) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let targets: Vec<usize> = std::iter::once(0).chain(pred.iter().map(|v| v.index())).collect();
    let total: u32 = gold
        .iter()
        .map(|y| targets.iter().map(|&t| dist[y.index()][t]).min().unwrap())
        .sum();
    total as f64 / gold.len() as f64
}

// ------------------------------------------------------------------ decoder

fn param<'a>(p: &'a ParamStore, name: &str) -> &'a Array {
    p.by_name(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `M[row0..row0+n] · x`
fn mv(m: &Array, row0: usize, n: usize, x: &[f64]) -> Vec<f64> {
    (row0..row0 + n)
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn gru(p: &ParamStore, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let g = |name: &str| param(p, &format!("{prefix}.{name}"));
    let d = h.len();
    let gate = |w: &str, u: &str, b: &str, hh: &[f64]| -> Vec<f64> {
        let wx = mv(g(w), 0, d, x);
        let uh = mv(g(u), 0, d, hh);
        (0..d).map(|i| wx[i] + uh[i] + g(b).get(0, i)).collect()
    };
    let z: Vec<f64> = gate("w_z", "u_z", "b_z", h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate("w_r", "u_r", "b_r", h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate("w_h", "u_h", "b_h", &rh).into_iter().map(f64::tanh).collect();
    (0..d).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

fn attention_scores(p: &ParamStore, states: &[Vec<f64>], s: &[f64], node: usize) -> Vec<f64> {
    let u = param(p, "attn_node.u").row(node).to_vec();
    let d_a = u.len();
    let (pre_s, w_h, row0): (Vec<f64>, &Array, usize) = if let Some(ws) = p.by_name("attn_shared.w_s") {
        let b = param(p, "attn_shared.b").row(0);
        let q = mv(ws, 0, d_a, s).iter().zip(b).map(|(a, b)| a + b).collect();
        (q, param(p, "attn_shared.w_h"), 0)
    } else {
        let row0 = node * d_a;
        let b = param(p, "attn_node.b").row(node);
        let q = mv(param(p, "attn_node.w_s"), row0, d_a, s)
            .iter()
            .zip(b)
            .map(|(a, b)| a + b)
            .collect();
        (q, param(p, "attn_node.w_h"), row0)
    };
    states
        .iter()
        .map(|h| {
            let wh = mv(w_h, row0, d_a, h);
            (0..d_a).map(|i| u[i] * (wh[i] + pre_s[i]).tanh()).sum()
        })
        .collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Depth-first decoding with an explicit stack. Children are pushed in
/// reverse so they pop in tree order, matching recursive expansion.
pub fn decode_oracle(
    p: &ParamStore,
    tree: &OntologyTree,
    tokens: &[u32],
    tau: f64,
) -> (BTreeSet<NodeId>, BTreeMap<NodeId, f64>) {
    let d_h = param(p, "enc_gru.b_z").cols();
    let d_s = param(p, "dec_gru.b_z").cols();
    let emb = param(p, "word_emb");
    let mut h = vec![0.0; d_h];
    let mut states = Vec::with_capacity(tokens.len());
    for &t in tokens {
        h = gru(p, "enc_gru", emb.row(t as usize), &h);
        states.push(h.clone());
    }

    let out_w = param(p, "out.w");
    let out_b = param(p, "out.b");
    let node_emb = param(p, "node_emb");
    let mut applied = BTreeSet::new();
    let mut scores = BTreeMap::new();
    let mut stack: Vec<(NodeId, Vec<f64>)> = vec![(NodeId::ROOT, vec![0.0; d_s])];
    while let Some((node, s_in)) = stack.pop() {
        let alpha = softmax(&attention_scores(p, &states, &s_in, node.index()));
        let mut c = vec![0.0; d_h];
        for (a, hs) in alpha.iter().zip(&states) {
            for (ci, hi) in c.iter_mut().zip(hs) {
                *ci += a * hi;
            }
        }
        let mut x = node_emb.row(node.index()).to_vec();
        x.extend_from_slice(&c);
        let s = gru(p, "dec_gru", &x, &s_in);
        let mut feat = s.clone();
        feat.extend_from_slice(&c);
        let mut expand = Vec::new();
        for &v in tree.children(node).unwrap() {
            let logit: f64 = out_w.row(v.index()).iter().zip(&feat).map(|(a, b)| a * b).sum();
            let y = sigmoid(logit + out_b.get(v.index(), 0));
            scores.insert(v, y);
            if y > tau {
                applied.insert(v);
                expand.push(v);
            }
        }
        for v in expand.into_iter().rev() {
            stack.push((v, s.clone()));
        }
    }
    (applied, scores)
}
