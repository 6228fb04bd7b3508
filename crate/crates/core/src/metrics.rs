//! Error metrics and the error-vs-NFE sweep harness.
//!
//! FID-style scores need trained image models; at desk scale the samplers
//! are judged against analytic references instead: trajectory-matched RMSE
//! where an exact flow map exists (single Gaussian), sliced Wasserstein
//! distance against direct draws where it does not (mixtures).

use crate::coeffs::{compute_coefficients, Reparameterisation};
use crate::error::{Error, Result};
use crate::oracle::{sample_mixture, GaussianMixture, GmmOracle};
use crate::profile::ScoreMagnitudeProfile;
use crate::rng::{standard_normal_batch, stream, StreamPurpose};
use crate::sampler::{ddim_sample, deis_sample, euler_sample, make_time_grid, GridKind};
use crate::schedule::NoiseSchedule;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Root mean square of per-coordinate differences over a whole batch.
pub fn terminal_rmse(samples: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if samples.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes {} vs {}",
            samples.len(),
            reference.len()
        )));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (a, b) in samples.iter().zip(reference) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "vector lengths {} vs {}",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(b) {
            sq += (x - y) * (x - y);
            count += 1;
        }
    }
    Ok((sq / count as f64).sqrt())
}

/// Sliced 2-Wasserstein distance between equal-size empirical distributions:
/// the average over random unit projections of the sorted-sample 1-D W2.
/// Unequal batch sizes are rejected rather than interpolated.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if n_projections < 1 {
        return Err(Error::InvalidParameter(
            "need at least one projection".into(),
        ));
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != dim) {
        return Err(Error::ShapeMismatch("ragged batch".into()));
    }
    let mut total = 0.0;
    for p in 0..n_projections {
        let mut rng = stream(seed, p as u64, StreamPurpose::Projection);
        let mut direction: Vec<f64>;
        loop {
            direction = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for d in &mut direction {
                    *d /= norm;
                }
                break;
            }
        }
        let project = |batch: &[Vec<f64>]| -> Vec<f64> {
            let mut v: Vec<f64> = batch
                .iter()
                .map(|x| x.iter().zip(&direction).map(|(a, b)| a * b).sum())
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let pa = project(a);
        let pb = project(b);
        let mse: f64 = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / pa.len() as f64;
        total += mse.sqrt();
    }
    Ok(total / n_projections as f64)
}

/// One row of the diagnostic score-magnitude curves.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub s_bar: f64,
    pub sigma: f64,
    pub product: f64,
}

/// `(t, s_bar(t), sigma_t, s_bar(t) * sigma_t)` over the profile knots.
/// The product column is the elementwise product of the other two.
pub fn score_curves(
    sched: &NoiseSchedule,
    profile: &ScoreMagnitudeProfile,
) -> Result<Vec<CurvePoint>> {
    profile
        .knots()
        .iter()
        .map(|&t| {
            let s_bar = profile.lookup(t)?;
            let (_, sigma) = sched.alpha_sigma(t)?;
            Ok(CurvePoint {
                t,
                s_bar,
                sigma,
                product: s_bar * sigma,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`; `None` for fewer than two
/// points or non-positive values.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| *x <= 0.0 || *y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Which sampling loop a sweep cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Deis,
    Euler,
    Ddim,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Deis => "deis",
            SamplerKind::Euler => "euler",
            SamplerKind::Ddim => "ddim",
        }
    }
}

/// One sampler configuration of a sweep.
#[derive(Debug, Clone)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Polynomial order; only meaningful for the exponential integrator.
    pub order: usize,
    pub reparam: Reparameterisation,
    pub grid: GridKind,
}

impl SamplerSpec {
    pub fn label(&self) -> String {
        match self.kind {
            SamplerKind::Deis => format!("deis-tab{}", self.order),
            other => other.as_str().to_string(),
        }
    }
}

/// Sweep parameters shared by every cell.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub nfe_list: Vec<usize>,
    pub batch: usize,
    pub seed: u64,
    pub n_projections: usize,
    pub quadrature_subdivisions: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorPoint {
    pub nfe: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub nfe: usize,
    pub message: String,
}

/// Error-vs-NFE series for one sampler configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSeries {
    pub sampler: String,
    pub reparam: String,
    pub points: Vec<ErrorPoint>,
    /// Fitted log-log slope of error against NFE; absent for degenerate fits.
    pub slope: Option<f64>,
    pub failures: Vec<CellFailure>,
}

/// Full sweep result.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub oracle: String,
    pub seed: u64,
    pub series: Vec<ConvergenceSeries>,
}

/// Runs every `(sampler, nfe)` cell with shared seeds and a shared initial
/// batch. Single-component oracles are scored by trajectory-matched RMSE
/// against the exact flow map; mixtures by sliced Wasserstein distance
/// against direct draws. Failing cells are recorded, not fatal.
pub fn convergence_study(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    samplers: &[SamplerSpec],
    cfg: &StudyConfig,
) -> Result<ConvergenceReport> {
    if cfg.nfe_list.is_empty() {
        return Err(Error::InvalidParameter("empty NFE list".into()));
    }
    if cfg.nfe_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "NFE list must be strictly increasing".into(),
        ));
    }
    if cfg.batch < 1 {
        return Err(Error::InvalidParameter("batch must be >= 1".into()));
    }
    let oracle = GmmOracle::new(mix.clone(), sched.clone());
    let x1 = standard_normal_batch(cfg.batch, mix.dim(), cfg.seed);
    let single = mix.components().len() == 1;
    let (metric_name, reference) = if single {
        ("terminal_rmse", mix.exact_flow_batch(sched, &x1, 1.0, 0.0)?)
    } else {
        (
            "sliced_wasserstein",
            sample_mixture(mix, cfg.batch, cfg.seed),
        )
    };

    let mut series = Vec::with_capacity(samplers.len());
    for spec in samplers {
        let mut points = Vec::new();
        let mut failures = Vec::new();
        for &nfe in &cfg.nfe_list {
            let cell = run_cell(spec, nfe, &x1, &oracle, sched, cfg).and_then(|terminal| {
                if single {
                    terminal_rmse(&terminal, &reference)
                } else {
                    sliced_wasserstein(&terminal, &reference, cfg.n_projections, cfg.seed)
                }
            });
            match cell {
                Ok(value) => points.push(ErrorPoint {
                    nfe,
                    metric: metric_name.to_string(),
                    value,
                }),
                Err(e) => failures.push(CellFailure {
                    nfe,
                    message: e.to_string(),
                }),
            }
        }
        let fit: Vec<(f64, f64)> = points.iter().map(|p| (p.nfe as f64, p.value)).collect();
        series.push(ConvergenceSeries {
            sampler: spec.label(),
            reparam: spec.reparam.kind.as_str().to_string(),
            points,
            slope: log_log_slope(&fit),
            failures,
        });
    }

    Ok(ConvergenceReport {
        oracle: describe_mixture(mix),
        seed: cfg.seed,
        series,
    })
}

fn run_cell(
    spec: &SamplerSpec,
    nfe: usize,
    x1: &[Vec<f64>],
    oracle: &GmmOracle,
    sched: &NoiseSchedule,
    cfg: &StudyConfig,
) -> Result<Vec<Vec<f64>>> {
    let grid = make_time_grid(spec.grid, nfe)?;
    let run = match spec.kind {
        SamplerKind::Deis => {
            let table = compute_coefficients(
                &grid,
                spec.order,
                &spec.reparam,
                sched,
                cfg.quadrature_subdivisions,
            )?;
            deis_sample(
                x1,
                &grid,
                spec.order,
                oracle,
                &spec.reparam,
                sched,
                &table,
                false,
            )?
        }
        SamplerKind::Euler => euler_sample(x1, &grid, oracle, sched, false)?,
        SamplerKind::Ddim => ddim_sample(x1, &grid, oracle, sched, false)?,
    };
    Ok(run.terminal)
}

fn describe_mixture(mix: &GaussianMixture) -> String {
    format!(
        "gmm(dim={}, components={})",
        mix.dim(),
        mix.components().len()
    )
}
