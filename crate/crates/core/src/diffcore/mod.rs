//! A small reverse-mode differentiation core.
//!
//! Parameters live in a [`ParamStore`] of named 2-D [`Array`]s. A [`Tape`]
//! records forward operations over vectors for one example; calling
//! [`Tape::backward`] accumulates parameter gradients into a [`Gradients`]
//! buffer shaped like the store. All arithmetic is `f64`.

mod gradcheck;
mod tape;

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{
    grad_check, loss_and_grad, GradCheckConfig, GradCheckError, GradCheckReport, GroupReport,
    Objective,
};
pub use tape::{Tape, Var, BCE_EPSILON};

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: row range {start}..{end} outside parameter with {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        rows: usize,
    },
    #[error("{op}: needs at least one input")]
    NoInputs { op: &'static str },
    #[error("backward requires a scalar output, got length {0}")]
    NotScalar(usize),
    #[error("binary cross-entropy target must be 0 or 1, got {0}")]
    InvalidTarget(f64),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// Dense row-major matrix. Vectors are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Array {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TapeError> {
        if data.len() != rows * cols {
            return Err(TapeError::Shape {
                op: "array",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Array { rows, cols, data })
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TapeError::Shape {
                    op: "array",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Array {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter array is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zero,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
}

impl Init {
    pub fn bound(&self) -> f64 {
        match *self {
            Init::Zero => 0.0,
            Init::Xavier { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            rows,
            cols,
            init,
        }
    }
}

/// Group of a parameter: the part of its name before the first `.`.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Named parameter arrays in declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
    index: BTreeMap<String, ParamId>,
    seed: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every spec in order from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self, TapeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore {
            seed,
            ..Self::default()
        };
        for spec in specs {
            let mut a = Array::zeros(spec.rows, spec.cols);
            if let Init::Xavier { .. } = spec.init {
                let bound = spec.init.bound();
                let dist = Uniform::new_inclusive(-bound, bound);
                for x in a.data_mut() {
                    *x = dist.sample(&mut rng);
                }
            }
            store.insert(spec.name.clone(), a)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, array: Array) -> Result<ParamId, TapeError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TapeError::DuplicateParam(name));
        }
        let id = ParamId(self.arrays.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.arrays.push(array);
        Ok(id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TapeError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TapeError::UnknownParam(name.to_owned()))
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.arrays[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.index.get(name).map(|id| &self.arrays[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.arrays)
            .enumerate()
            .map(|(i, (n, a))| (ParamId(i), n.as_str(), a))
    }

    /// Distinct parameter groups in declaration order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in &self.names {
            let g = param_group(n);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_owned());
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    /// Errors naming the first array holding NaN or ±∞.
    pub fn check_finite(&self) -> Result<(), TapeError> {
        match self.iter().find(|(_, _, a)| !a.is_finite()) {
            Some((_, name, _)) => Err(TapeError::NonFinite(name.to_owned())),
            None => Ok(()),
        }
    }

    /// `θ ← θ − lr·∇θ`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (a, g) in self.arrays.iter_mut().zip(&grads.arrays) {
            for (x, d) in a.data.iter_mut().zip(&g.data) {
                *x -= lr * d;
            }
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    arrays: Vec<Array>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            arrays: store
                .arrays
                .iter()
                .map(|a| Array::zeros(a.rows, a.cols))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.arrays[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.arrays[id.0]
    }

    pub fn zero(&mut self) {
        for a in &mut self.arrays {
            a.data.fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.arrays {
            for x in &mut a.data {
                *x *= factor;
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }
}
