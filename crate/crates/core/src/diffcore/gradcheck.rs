use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{param_group, Gradients, ParamStore, Tape, TapeError, Var};

/// A scalar loss that can be rebuilt on a fresh tape any number of times.
pub trait Objective {
    /// Whether repeated evaluation at identical parameters yields the same
    /// loss. Finite differences are meaningless otherwise.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn build(&mut self, tape: &mut Tape<'_>) -> Result<Var, TapeError>;
}

impl<F> Objective for F
where
    F: FnMut(&mut Tape<'_>) -> Result<Var, TapeError>,
{
    fn build(&mut self, tape: &mut Tape<'_>) -> Result<Var, TapeError> {
        self(tape)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("objective is not deterministic (freeze stochastic masks before checking)")]
    NonDeterministic,
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per parameter array; arrays at or below this size
    /// are checked exhaustively.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-3,
            max_coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Evaluates the objective and its parameter gradients.
pub fn loss_and_grad<O: Objective + ?Sized>(
    objective: &mut O,
    params: &ParamStore,
) -> Result<(f64, Gradients), TapeError> {
    let mut tape = Tape::new(params);
    let loss = objective.build(&mut tape)?;
    let mut grads = Gradients::zeros_like(params);
    tape.backward(loss, &mut grads)?;
    Ok((tape.scalar(loss), grads))
}

fn loss_only<O: Objective + ?Sized>(objective: &mut O, params: &ParamStore) -> Result<f64, GradCheckError> {
    let mut tape = Tape::new(params);
    let loss = objective.build(&mut tape)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(GradCheckError::NonFiniteLoss(value));
    }
    Ok(value)
}

/// Compares analytic gradients with central finite differences.
///
/// Per coordinate the error is `|a − fd| / max(1, |a|, |fd|)`; the report
/// holds the maximum per parameter group. `params` is restored on return.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &mut O,
    params: &mut ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, GradCheckError> {
    if !objective.is_deterministic() {
        return Err(GradCheckError::NonDeterministic);
    }
    let (loss, grads) = loss_and_grad(objective, params)?;
    if !loss.is_finite() {
        return Err(GradCheckError::NonFiniteLoss(loss));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut groups: Vec<GroupReport> = Vec::new();
    let ids: Vec<_> = params.iter().map(|(id, name, a)| (id, name.to_owned(), a.len())).collect();

    for (id, name, len) in ids {
        let coords: Vec<usize> = if len <= config.max_coords_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, config.max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + config.step;
            let plus = loss_only(objective, params);
            params.get_mut(id).data_mut()[i] = original - config.step;
            let minus = loss_only(objective, params);
            params.get_mut(id).data_mut()[i] = original;
            let fd = (plus? - minus?) / (2.0 * config.step);
            let analytic = grads.get(id).data()[i];
            let err = (analytic - fd).abs() / 1f64.max(analytic.abs()).max(fd.abs());
            worst = worst.max(err);
        }
        let group = param_group(&name).to_owned();
        match groups.iter_mut().find(|g| g.group == group) {
            Some(g) => {
                g.coords_checked += coords.len();
                g.max_rel_err = g.max_rel_err.max(worst);
            }
            None => groups.push(GroupReport {
                group,
                coords_checked: coords.len(),
                max_rel_err: worst,
                passed: true,
            }),
        }
    }
    for g in &mut groups {
        g.passed = g.max_rel_err < config.tolerance;
    }
    Ok(GradCheckReport {
        loss,
        tolerance: config.tolerance,
        groups,
    })
}
