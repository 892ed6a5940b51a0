use super::{Gradients, ParamId, ParamStore, TapeError};

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Handle to a vector recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    ParamRow { param: ParamId, row: usize },
    /// Rows `row0..row0 + len` of a parameter matrix times `x`.
    MatVec { param: ParamId, row0: usize, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Dot(Var, Var),
    /// Inputs stored in `links[start..start + n]`.
    Concat { start: usize, n: usize },
    Sum { start: usize, n: usize },
    WeightedSum { weights: Var, start: usize, n: usize },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Bce { p: Var, target: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    off: usize,
    len: usize,
    op: Op,
}

/// Records vector operations for one forward pass over borrowed parameters.
///
/// Values of every node live in one arena; backward walks nodes in exact
/// reverse order and accumulates adjoints additively, so fan-out is handled
/// without special casing.
pub struct Tape<'p> {
    params: &'p ParamStore,
    vals: Vec<f64>,
    nodes: Vec<Node>,
    links: Vec<Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            vals: Vec::with_capacity(4096),
            nodes: Vec::with_capacity(512),
            links: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.idx()];
        &self.vals[n.off..n.off + n.len]
    }

    /// First component of `v`; meant for length-1 values.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.idx()].len
    }

    fn push(&mut self, op: Op, len: usize) -> (Var, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        self.nodes.push(Node { off, len, op });
        (Var(self.nodes.len() as u32 - 1), off)
    }

    fn range(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.idx()];
        (n.off, n.len)
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize, TapeError> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(TapeError::Shape {
                op,
                expected: la,
                found: lb,
            });
        }
        Ok(la)
    }

    /// A constant vector; no gradient flows into it.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        let (v, off) = self.push(Op::Leaf, values.len());
        self.vals[off..off + values.len()].copy_from_slice(values);
        v
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Leaf, len).0
    }

    /// Row `row` of a parameter matrix (embedding lookup, bias vectors).
    pub fn param_row(&mut self, param: ParamId, row: usize) -> Result<Var, TapeError> {
        let a = self.params.get(param);
        if row >= a.rows() {
            return Err(TapeError::RowOutOfRange {
                op: "param_row",
                start: row,
                end: row + 1,
                rows: a.rows(),
            });
        }
        let cols = a.cols();
        let (v, off) = self.push(Op::ParamRow { param, row }, cols);
        let src = self.params.get(param).row(row);
        self.vals[off..off + cols].copy_from_slice(src);
        Ok(v)
    }

    /// Full parameter matrix times `x`.
    pub fn matvec(&mut self, param: ParamId, x: Var) -> Result<Var, TapeError> {
        let rows = self.params.get(param).rows();
        self.matvec_rows(param, 0, rows, x)
    }

    /// Rows `row0..row0 + rows` of a parameter matrix times `x`.
    pub fn matvec_rows(
        &mut self,
        param: ParamId,
        row0: usize,
        rows: usize,
        x: Var,
    ) -> Result<Var, TapeError> {
        let w = self.params.get(param);
        if row0 + rows > w.rows() {
            return Err(TapeError::RowOutOfRange {
                op: "matvec",
                start: row0,
                end: row0 + rows,
                rows: w.rows(),
            });
        }
        let cols = w.cols();
        if self.dim(x) != cols {
            return Err(TapeError::Shape {
                op: "matvec",
                expected: cols,
                found: self.dim(x),
            });
        }
        let (xo, _) = self.range(x);
        let (v, off) = self.push(Op::MatVec { param, row0, x }, rows);
        let wdata = &w.data()[row0 * cols..(row0 + rows) * cols];
        let (head, out) = self.vals.split_at_mut(off);
        let xs = &head[xo..xo + cols];
        for (o, wr) in out.iter_mut().zip(wdata.chunks_exact(cols.max(1))) {
            *o = wr.iter().zip(xs).map(|(a, b)| a * b).sum();
        }
        Ok(v)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TapeError> {
        let len = self.same_len(name, a, b)?;
        let (ao, _) = self.range(a);
        let (bo, _) = self.range(b);
        let (v, off) = self.push(op, len);
        for i in 0..len {
            self.vals[off + i] = f(self.vals[ao + i], self.vals[bo + i]);
        }
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("hadamard", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Inner product; the result has length 1.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let len = self.same_len("dot", a, b)?;
        let (ao, bo) = (self.range(a).0, self.range(b).0);
        let value = (0..len).map(|i| self.vals[ao + i] * self.vals[bo + i]).sum();
        let (v, off) = self.push(Op::Dot(a, b), 1);
        self.vals[off] = value;
        Ok(v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::NoInputs { op: "concat" });
        }
        let len = parts.iter().map(|&p| self.dim(p)).sum();
        let start = self.links.len();
        self.links.extend_from_slice(parts);
        let (v, off) = self.push(Op::Concat { start, n: parts.len() }, len);
        let mut at = off;
        for &p in parts {
            let (po, pl) = self.range(p);
            self.vals.copy_within(po..po + pl, at);
            at += pl;
        }
        Ok(v)
    }

    /// Elementwise sum of equally sized vectors.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        let first = *parts.first().ok_or(TapeError::NoInputs { op: "sum" })?;
        let len = self.dim(first);
        for &p in parts {
            self.same_len("sum", first, p)?;
        }
        let start = self.links.len();
        self.links.extend_from_slice(parts);
        let (v, off) = self.push(Op::Sum { start, n: parts.len() }, len);
        for &p in parts {
            let (po, _) = self.range(p);
            for i in 0..len {
                self.vals[off + i] += self.vals[po + i];
            }
        }
        Ok(v)
    }

    /// `Σ_j weights[j] · items[j]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, TapeError> {
        let first = *items.first().ok_or(TapeError::NoInputs { op: "weighted_sum" })?;
        if self.dim(weights) != items.len() {
            return Err(TapeError::Shape {
                op: "weighted_sum",
                expected: items.len(),
                found: self.dim(weights),
            });
        }
        let len = self.dim(first);
        for &p in items {
            self.same_len("weighted_sum", first, p)?;
        }
        let start = self.links.len();
        self.links.extend_from_slice(items);
        let (wo, _) = self.range(weights);
        let (v, off) = self.push(
            Op::WeightedSum {
                weights,
                start,
                n: items.len(),
            },
            len,
        );
        for (j, &p) in items.iter().enumerate() {
            let w = self.vals[wo + j];
            let (po, _) = self.range(p);
            for i in 0..len {
                self.vals[off + i] += w * self.vals[po + i];
            }
        }
        Ok(v)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (xo, len) = self.range(x);
        let (v, off) = self.push(op, len);
        for i in 0..len {
            self.vals[off + i] = f(self.vals[xo + i]);
        }
        v
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TapeError> {
        let (xo, len) = self.range(x);
        if len == 0 {
            return Err(TapeError::NoInputs { op: "softmax" });
        }
        let (v, off) = self.push(Op::Softmax(x), len);
        let (head, out) = self.vals.split_at_mut(off);
        softmax_into(&head[xo..xo + len], &mut out[..len]);
        Ok(v)
    }

    /// Binary cross-entropy of a length-1 probability against a 0/1 target,
    /// with the probability clamped to `[ε, 1 − ε]`.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var, TapeError> {
        if target != 0.0 && target != 1.0 {
            return Err(TapeError::InvalidTarget(target));
        }
        if self.dim(p) != 1 {
            return Err(TapeError::Shape {
                op: "bce",
                expected: 1,
                found: self.dim(p),
            });
        }
        let prob = self.scalar(p);
        let (v, off) = self.push(Op::Bce { p, target }, 1);
        self.vals[off] = bce(prob, target);
        Ok(v)
    }

    /// Reverse pass from a scalar output, adding parameter gradients into `grads`.
    pub fn backward(&self, output: Var, grads: &mut Gradients) -> Result<(), TapeError> {
        let (oo, ol) = self.range(output);
        if ol != 1 {
            return Err(TapeError::NotScalar(ol));
        }
        let mut adj = vec![0.0; self.vals.len()];
        adj[oo] = 1.0;
        for node in self.nodes[..=output.idx()].iter().rev() {
            let (lo, hi) = adj.split_at_mut(node.off);
            let g = &hi[..node.len];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let out = &self.vals[node.off..node.off + node.len];
            match node.op {
                Op::Leaf => {}
                Op::ParamRow { param, row } => {
                    let dst = grads.get_mut(param).row_mut(row);
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                Op::MatVec { param, row0, x } => {
                    let w = self.params.get(param);
                    let cols = w.cols();
                    let (xo, _) = self.range(x);
                    let xs = &self.vals[xo..xo + cols];
                    let gw = grads.get_mut(param);
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        let r = row0 + i;
                        for (d, xv) in gw.row_mut(r).iter_mut().zip(xs) {
                            *d += gi * xv;
                        }
                        let gx = &mut lo[xo..xo + cols];
                        for (d, wv) in gx.iter_mut().zip(w.row(r)) {
                            *d += gi * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(lo, self.range(a).0, g, |gi, _| gi);
                    accumulate(lo, self.range(b).0, g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    accumulate(lo, self.range(a).0, g, |gi, _| gi);
                    accumulate(lo, self.range(b).0, g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (ao, bo) = (self.range(a).0, self.range(b).0);
                    for (i, &gi) in g.iter().enumerate() {
                        let (av, bv) = (self.vals[ao + i], self.vals[bo + i]);
                        lo[ao + i] += gi * bv;
                        lo[bo + i] += gi * av;
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, bo) = (self.range(a).0, self.range(b).0);
                    for i in 0..self.dim(a) {
                        let (av, bv) = (self.vals[ao + i], self.vals[bo + i]);
                        lo[ao + i] += g[0] * bv;
                        lo[bo + i] += g[0] * av;
                    }
                }
                Op::Concat { start, n } => {
                    let mut at = 0;
                    for &p in &self.links[start..start + n] {
                        let (po, pl) = self.range(p);
                        for i in 0..pl {
                            lo[po + i] += g[at + i];
                        }
                        at += pl;
                    }
                }
                Op::Sum { start, n } => {
                    for &p in &self.links[start..start + n] {
                        accumulate(lo, self.range(p).0, g, |gi, _| gi);
                    }
                }
                Op::WeightedSum { weights, start, n } => {
                    let wo = self.range(weights).0;
                    for (j, &p) in self.links[start..start + n].iter().enumerate() {
                        let po = self.range(p).0;
                        let w = self.vals[wo + j];
                        let mut dw = 0.0;
                        for (i, &gi) in g.iter().enumerate() {
                            dw += gi * self.vals[po + i];
                            lo[po + i] += gi * w;
                        }
                        lo[wo + j] += dw;
                    }
                }
                Op::Tanh(x) => {
                    accumulate(lo, self.range(x).0, g, |gi, i| gi * (1.0 - out[i] * out[i]));
                }
                Op::Sigmoid(x) => {
                    accumulate(lo, self.range(x).0, g, |gi, i| gi * out[i] * (1.0 - out[i]));
                }
                Op::Softmax(x) => {
                    let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                    accumulate(lo, self.range(x).0, g, |gi, i| out[i] * (gi - dot));
                }
                Op::Bce { p, target } => {
                    let po = self.range(p).0;
                    let prob = self.vals[po];
                    // Clamped region is flat.
                    if (BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&prob) {
                        lo[po] += g[0] * (-target / prob + (1.0 - target) / (1.0 - prob));
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(lo: &mut [f64], at: usize, g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (i, &gi) in g.iter().enumerate() {
        lo[at + i] += f(gi, i);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn bce(prob: f64, target: f64) -> f64 {
    let p = prob.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Array;
    use proptest::prelude::*;

    fn store_with(name: &str, a: Array) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, a).unwrap();
        (s, id)
    }

    #[test]
    fn forward_ops() {
        let (s, eye) = store_with("eye", Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let mut t = Tape::new(&s);
        let x = t.constant(&[3.0, 4.0]);
        let y = t.matvec(eye, x).unwrap();
        assert_eq!(t.value(y), &[3.0, 4.0]);

        let a = t.constant(&[1.0]);
        let b = t.constant(&[2.0, 3.0]);
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c), &[1.0, 2.0, 3.0]);

        let p = t.constant(&[2.0, 3.0]);
        let q = t.constant(&[4.0, 5.0]);
        let h = t.hadamard(p, q).unwrap();
        assert_eq!(t.value(h), &[8.0, 15.0]);
        assert!(matches!(t.add(a, b), Err(TapeError::Shape { .. })));
        assert!(matches!(t.matvec(eye, c), Err(TapeError::Shape { .. })));
    }

    #[test]
    fn activations() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let z = t.constant(&[0.0]);
        let sz = t.sigmoid(z);
        assert_eq!(t.scalar(sz), 0.5);

        let zeros = t.constant(&[0.0, 0.0, 0.0]);
        let u = t.softmax(zeros).unwrap();
        for &x in t.value(u) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let l2 = t.constant(&[2f64.ln(), 0.0]);
        let sm = t.softmax(l2).unwrap();
        assert!((t.value(sm)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.value(sm)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(1.0 - BCE_EPSILON, 1.0) <= 1e-6);
        assert_eq!(bce(0.5, 0.0), bce(0.5, 1.0));
        assert!(bce(0.0, 1.0).is_finite());
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let p = t.constant(&[0.3]);
        assert_eq!(t.bce(p, 0.5), Err(TapeError::InvalidTarget(0.5)));
    }

    #[test]
    fn matvec_gradients_are_outer_products() {
        let (s, w) = store_with("w", Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let mut t = Tape::new(&s);
        let x = t.constant(&[0.5, -1.0, 2.0]);
        let y = t.matvec(w, x).unwrap();
        let c = t.constant(&[1.0, 2.0]);
        let loss = t.dot(y, c).unwrap();
        assert_eq!(t.scalar(loss), 4.5 + 2.0 * 9.0);
        let mut g = Gradients::zeros_like(&s);
        t.backward(loss, &mut g).unwrap();
        assert_eq!(g.get(w).row(0), &[0.5, -1.0, 2.0]);
        assert_eq!(g.get(w).row(1), &[1.0, -2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_vectors() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let v = t.constant(&[1.0, 2.0]);
        let mut g = Gradients::zeros_like(&s);
        assert_eq!(t.backward(v, &mut g), Err(TapeError::NotScalar(2)));
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            xs in prop::collection::vec(-15.0f64..15.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let s = ParamStore::new();
            let mut t = Tape::new(&s);
            let x = t.constant(&xs);
            let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
            let xc = t.constant(&shifted);
            let p = t.softmax(x).unwrap();
            let q = t.softmax(xc).unwrap();
            let total: f64 = t.value(p).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for (a, b) in t.value(p).iter().zip(t.value(q)) {
                prop_assert!(*a > 0.0 && *a < 1.0 || xs.len() == 1);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
