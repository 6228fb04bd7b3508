//! Sampling loops over descending time grids.
//!
//! Three deterministic samplers integrate the probability-flow ODE from
//! `t = 1` to `t = 0`: the exponential-integrator multistep method (order-`r`
//! extrapolation of the reparameterised score), plain Euler on the ODE, and
//! the deterministic DDIM update. Grids always end at exactly `t = 0`; no
//! score is evaluated there, so the step into 0 stays finite.
//!
//! Within a trajectory the steps are sequential. Across the batch the score
//! evaluations run in parallel with indexed writes, so results are
//! bit-identical however many threads execute them.

use crate::coeffs::{k_value, CoefficientTable, Reparameterisation};
use crate::error::{Error, Result};
use crate::oracle::ScoreFunction;
use crate::schedule::NoiseSchedule;
use rayon::prelude::*;
use std::collections::VecDeque;

/// Construction rule of a sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// `t_i = (i/N)^2`: concentrates steps near `t = 0`.
    TrailingQuadratic,
    /// `t_i = i/N`.
    TrailingLinear,
    /// Alias of trailing-linear; the conventional name for profile
    /// collection runs.
    Uniform,
}

impl GridKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridKind::TrailingQuadratic => "quadratic",
            GridKind::TrailingLinear => "linear",
            GridKind::Uniform => "uniform",
        }
    }
}

/// Descending sampling times `t_N = 1 > ... > t_1 > t_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    kind: GridKind,
}

impl TimeGrid {
    /// `times[k]` is the k-th visited time; `times[0] = 1`, `times[n] = 0`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Builds a grid of `n_steps` steps (`n_steps + 1` times, endpoints exact).
pub fn make_time_grid(kind: GridKind, n_steps: usize) -> Result<TimeGrid> {
    if n_steps < 1 {
        return Err(Error::InvalidParameter(
            "time grid needs at least one step".into(),
        ));
    }
    let n = n_steps as f64;
    let times = (0..=n_steps)
        .map(|k| {
            let x = (n_steps - k) as f64 / n;
            match kind {
                GridKind::TrailingQuadratic => x * x,
                GridKind::TrailingLinear | GridKind::Uniform => x,
            }
        })
        .collect();
    Ok(TimeGrid { times, kind })
}

/// Result of one sampling run.
#[derive(Debug, Clone)]
pub struct SamplerRun {
    /// Batch at `t = 0`, one vector per trajectory.
    pub terminal: Vec<Vec<f64>>,
    /// Number of score-function evaluations; equals the grid step count.
    pub nfe: usize,
    /// `(t, mean |score|)` per visited time, in visit order (descending t).
    /// The mean runs over the batch and all coordinates, before any
    /// reparameterisation.
    pub score_magnitudes: Vec<(f64, f64)>,
    /// States after each step (plus the initial batch) when requested.
    pub trajectory: Option<Vec<Vec<Vec<f64>>>>,
}

fn validate_batch(x1: &[Vec<f64>], dim: usize) -> Result<()> {
    if x1.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for x in x1 {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
    }
    Ok(())
}

fn eval_scores(score: &dyn ScoreFunction, state: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    state
        .par_iter()
        .with_min_len(16)
        .map(|x| score.evaluate(x, t))
        .collect()
}

fn mean_abs(values: &[Vec<f64>]) -> f64 {
    let total: f64 = values
        .iter()
        .map(|v| v.iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    let count = values.len() * values.first().map_or(0, Vec::len);
    total / count as f64
}

fn check_finite(state: &[Vec<f64>], step: usize, time: f64) -> Result<()> {
    for x in state {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step, time });
        }
    }
    Ok(())
}

/// Multistep exponential-integrator sampler of polynomial order `order`.
///
/// Each step applies `x <- psi(t_next, t) x + sum_j C_kj h_j` where `h_j` is
/// the cached reparameterised score `-K(t_j) s(x_{t_j}, t_j)` at the current
/// and previous grid times. Exactly one score evaluation per step; early
/// steps use as much history as exists.
#[allow(clippy::too_many_arguments)]
pub fn deis_sample(
    x1: &[Vec<f64>],
    grid: &TimeGrid,
    order: usize,
    score: &dyn ScoreFunction,
    rep: &Reparameterisation,
    sched: &NoiseSchedule,
    table: &CoefficientTable,
    record_trajectory: bool,
) -> Result<SamplerRun> {
    let dim = score.dim();
    validate_batch(x1, dim)?;
    if table.grid.times() != grid.times() {
        return Err(Error::TableMismatch(
            "coefficient table was computed for a different grid".into(),
        ));
    }
    if table.order != order {
        return Err(Error::TableMismatch(format!(
            "table order {} != requested order {order}",
            table.order
        )));
    }
    if table.reparam_kind != rep.kind {
        return Err(Error::TableMismatch(format!(
            "table reparameterisation {} != requested {}",
            table.reparam_kind.as_str(),
            rep.kind.as_str()
        )));
    }

    let times = grid.times();
    let mut state = x1.to_vec();
    let mut history: VecDeque<Vec<Vec<f64>>> = VecDeque::with_capacity(order + 1);
    let mut magnitudes = Vec::with_capacity(grid.n_steps());
    let mut trajectory = record_trajectory.then(|| vec![state.clone()]);
    let mut nfe = 0usize;

    for k in 0..grid.n_steps() {
        let t = times[k];
        let t_next = times[k + 1];
        let scores = eval_scores(score, &state, t);
        nfe += 1;
        magnitudes.push((t, mean_abs(&scores)));

        let k_t = k_value(rep, sched, t)?;
        let mut cached = scores;
        cached.par_iter_mut().with_min_len(16).for_each(|row| {
            for v in row.iter_mut() {
                *v *= -k_t;
            }
        });
        history.push_front(cached);
        history.truncate(order + 1);

        let psi = sched.psi(t_next, t)?;
        let row = &table.rows[k];
        if row.len() != history.len() {
            return Err(Error::TableMismatch(format!(
                "step {k}: table row has {} coefficients, history has {}",
                row.len(),
                history.len()
            )));
        }
        let history_ref = &history;
        state
            .par_iter_mut()
            .with_min_len(16)
            .enumerate()
            .for_each(|(b, x)| {
                for (d, value) in x.iter_mut().enumerate() {
                    let mut acc = psi * *value;
                    for (j, c) in row.iter().enumerate() {
                        acc += c * history_ref[j][b][d];
                    }
                    *value = acc;
                }
            });
        check_finite(&state, k, t_next)?;
        if let Some(t) = trajectory.as_mut() {
            t.push(state.clone());
        }
    }

    debug_assert_eq!(nfe, grid.n_steps());
    Ok(SamplerRun {
        terminal: state,
        nfe,
        score_magnitudes: magnitudes,
        trajectory,
    })
}

/// Euler integration of the probability-flow ODE:
/// `x <- x + (t_next - t) (f_t x - 1/2 g_t^2 s(x, t))`.
pub fn euler_sample(
    x1: &[Vec<f64>],
    grid: &TimeGrid,
    score: &dyn ScoreFunction,
    sched: &NoiseSchedule,
    record_trajectory: bool,
) -> Result<SamplerRun> {
    validate_batch(x1, score.dim())?;
    let times = grid.times();
    let mut state = x1.to_vec();
    let mut magnitudes = Vec::with_capacity(grid.n_steps());
    let mut trajectory = record_trajectory.then(|| vec![state.clone()]);
    let mut nfe = 0usize;

    for k in 0..grid.n_steps() {
        let t = times[k];
        let t_next = times[k + 1];
        let scores = eval_scores(score, &state, t);
        nfe += 1;
        magnitudes.push((t, mean_abs(&scores)));

        let (f, g2) = sched.drift_diffusion(t)?;
        let dt = t_next - t;
        state
            .par_iter_mut()
            .with_min_len(16)
            .enumerate()
            .for_each(|(b, x)| {
                for (d, value) in x.iter_mut().enumerate() {
                    *value += dt * (f * *value - 0.5 * g2 * scores[b][d]);
                }
            });
        check_finite(&state, k, t_next)?;
        if let Some(t) = trajectory.as_mut() {
            t.push(state.clone());
        }
    }

    debug_assert_eq!(nfe, grid.n_steps());
    Ok(SamplerRun {
        terminal: state,
        nfe,
        score_magnitudes: magnitudes,
        trajectory,
    })
}

/// Deterministic DDIM update with the predicted noise
/// `eps = -sigma_t s(x, t)`:
/// `x <- a_next (x - sigma_t eps) / a_t + sigma_next eps`.
pub fn ddim_sample(
    x1: &[Vec<f64>],
    grid: &TimeGrid,
    score: &dyn ScoreFunction,
    sched: &NoiseSchedule,
    record_trajectory: bool,
) -> Result<SamplerRun> {
    validate_batch(x1, score.dim())?;
    let times = grid.times();
    let mut state = x1.to_vec();
    let mut magnitudes = Vec::with_capacity(grid.n_steps());
    let mut trajectory = record_trajectory.then(|| vec![state.clone()]);
    let mut nfe = 0usize;

    for k in 0..grid.n_steps() {
        let t = times[k];
        let t_next = times[k + 1];
        let scores = eval_scores(score, &state, t);
        nfe += 1;
        magnitudes.push((t, mean_abs(&scores)));

        let (a, sigma) = sched.alpha_sigma(t)?;
        let (a_next, sigma_next) = sched.alpha_sigma(t_next)?;
        state
            .par_iter_mut()
            .with_min_len(16)
            .enumerate()
            .for_each(|(b, x)| {
                for (d, value) in x.iter_mut().enumerate() {
                    let eps = -sigma * scores[b][d];
                    *value = a_next * (*value - sigma * eps) / a + sigma_next * eps;
                }
            });
        check_finite(&state, k, t_next)?;
        if let Some(t) = trajectory.as_mut() {
            t.push(state.clone());
        }
    }

    debug_assert_eq!(nfe, grid.n_steps());
    Ok(SamplerRun {
        terminal: state,
        nfe,
        score_magnitudes: magnitudes,
        trajectory,
    })
}
