//! Analytic score oracles.
//!
//! Gaussian mixtures are closed under the forward noising kernel, so their
//! noised marginals, scores and (for a single component) the probability-flow
//! map are all available in closed form. They stand in for a trained score
//! network when validating samplers: the score is exact, and the flow map
//! gives a per-trajectory ground truth no numerical reference solver could.

use crate::error::{Error, Result};
use crate::rng::{stream, StreamPurpose};
use crate::schedule::NoiseSchedule;
use rand_distr::{Distribution, StandardNormal};

/// One isotropic mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Isotropic Gaussian mixture over `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

/// Mixture component of the noised marginal `p(x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComponent {
    pub weight: f64,
    /// `a_t * mean`
    pub mean: Vec<f64>,
    /// `a_t^2 c^2 + sigma_t^2`
    pub variance: f64,
}

impl GaussianMixture {
    pub fn new(dim: usize, components: Vec<MixtureComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        for (k, c) in components.iter().enumerate() {
            if c.weight <= 0.0 || !c.weight.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: weight must be > 0"
                )));
            }
            if c.std <= 0.0 || !c.std.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: std must be positive and finite"
                )));
            }
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: mean must be finite"
                )));
            }
        }
        Ok(Self { dim, components })
    }

    /// Single standard-ish Gaussian `N(mean, std^2 I)`.
    pub fn single(dim: usize, mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(
            dim,
            vec![MixtureComponent {
                weight: 1.0,
                mean,
                std,
            }],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Exact parameters of the noised marginal `p(x_t)`: component `k`
    /// becomes `N(a_t mu_k, (a_t^2 c_k^2 + sigma_t^2) I)` with unchanged
    /// weight.
    pub fn marginal(&self, sched: &NoiseSchedule, t: f64) -> Result<Vec<MarginalComponent>> {
        let (a, sigma) = sched.alpha_sigma(t)?;
        Ok(self
            .components
            .iter()
            .map(|c| MarginalComponent {
                weight: c.weight,
                mean: c.mean.iter().map(|m| a * m).collect(),
                variance: a * a * c.std * c.std + sigma * sigma,
            })
            .collect())
    }

    /// Exact score `grad_x log p(x_t)`.
    ///
    /// Posterior responsibilities are formed in log space; widely separated
    /// components underflow a naive density evaluation.
    pub fn score(&self, sched: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let marginal = self.marginal(sched, t)?;
        let mut log_post = Vec::with_capacity(marginal.len());
        for m in &marginal {
            if m.variance <= 0.0 {
                return Err(Error::DegenerateDensity(t));
            }
            let sq: f64 = x
                .iter()
                .zip(&m.mean)
                .map(|(xi, mi)| (xi - mi) * (xi - mi))
                .sum();
            log_post.push(
                m.weight.ln()
                    - 0.5 * self.dim as f64 * (std::f64::consts::TAU * m.variance).ln()
                    - 0.5 * sq / m.variance,
            );
        }
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut gamma: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
        let norm: f64 = gamma.iter().sum();
        for g in &mut gamma {
            *g /= norm;
        }
        let mut score = vec![0.0; self.dim];
        for (m, g) in marginal.iter().zip(&gamma) {
            for d in 0..self.dim {
                score[d] += g * (m.mean[d] - x[d]) / m.variance;
            }
        }
        Ok(score)
    }

    /// Marginal variance `v(t) = a_t^2 c^2 + sigma_t^2` of a single-component
    /// mixture.
    pub fn flow_variance(&self, sched: &NoiseSchedule, t: f64) -> Result<f64> {
        if self.components.len() != 1 {
            return Err(Error::NotSingleGaussian(self.components.len()));
        }
        let (a, sigma) = sched.alpha_sigma(t)?;
        let c = self.components[0].std;
        Ok(a * a * c * c + sigma * sigma)
    }

    /// Exact probability-flow map for a single Gaussian.
    ///
    /// `z = (x_t - a_t mu) / sqrt(v(t))` is conserved along the flow because
    /// `v' = 2 f v + g^2`, giving
    /// `x(t_to) = a_to mu + sqrt(v(t_to)/v(t_from)) (x - a_from mu)`.
    pub fn exact_flow(
        &self,
        sched: &NoiseSchedule,
        x: &[f64],
        t_from: f64,
        t_to: f64,
    ) -> Result<Vec<f64>> {
        if self.components.len() != 1 {
            return Err(Error::NotSingleGaussian(self.components.len()));
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mu = &self.components[0].mean;
        let (a_from, _) = sched.alpha_sigma(t_from)?;
        let (a_to, _) = sched.alpha_sigma(t_to)?;
        let scale = (self.flow_variance(sched, t_to)? / self.flow_variance(sched, t_from)?).sqrt();
        Ok(x.iter()
            .zip(mu)
            .map(|(xi, mi)| a_to * mi + scale * (xi - a_from * mi))
            .collect())
    }

    /// Batched [`exact_flow`].
    ///
    /// [`exact_flow`]: GaussianMixture::exact_flow
    pub fn exact_flow_batch(
        &self,
        sched: &NoiseSchedule,
        batch: &[Vec<f64>],
        t_from: f64,
        t_to: f64,
    ) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|x| self.exact_flow(sched, x, t_from, t_to))
            .collect()
    }
}

/// Exact draws from the data mixture; draw `i` uses stream `(seed, i, DataDraw)`.
pub fn sample_mixture(mix: &GaussianMixture, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64, StreamPurpose::DataDraw);
            let u: f64 = rand::Rng::gen(&mut rng);
            let mut acc = 0.0;
            let mut comp = &mix.components[mix.components.len() - 1];
            for c in &mix.components {
                acc += c.weight;
                if u < acc {
                    comp = c;
                    break;
                }
            }
            comp.mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + comp.std * z
                })
                .collect()
        })
        .collect()
}

/// Score-function contract used by the samplers. Implementations must be
/// pure: the same `(x, t)` yields bit-identical output.
pub trait ScoreFunction: Sync {
    fn dim(&self) -> usize;

    /// Score at `(x, t)`, `t` in `[0, 1]`. `x.len()` must equal `dim()`;
    /// samplers validate this before stepping.
    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64>;
}

/// A mixture plus schedule presented as a [`ScoreFunction`].
#[derive(Debug, Clone)]
pub struct GmmOracle {
    mixture: GaussianMixture,
    schedule: NoiseSchedule,
}

impl GmmOracle {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl ScoreFunction for GmmOracle {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64> {
        // infallible for a validated mixture: v(t) > 0 whenever std > 0
        self.mixture
            .score(&self.schedule, x, t)
            .expect("score evaluation on validated mixture")
    }
}

/// Target of a score-parameterisation conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionTarget {
    /// `eps = -sigma_t * score`
    Noise,
    /// `x0 = (x + sigma_t^2 * score) / a_t`
    Sample,
}

/// Converts an exact or estimated score into the noise- or sample-prediction
/// parameterisation at time `t`.
pub fn convert_parameterisation(
    score: &[f64],
    x: &[f64],
    t: f64,
    sched: &NoiseSchedule,
    target: PredictionTarget,
) -> Result<Vec<f64>> {
    if score.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: score.len(),
        });
    }
    let (a, sigma) = sched.alpha_sigma(t)?;
    if sigma == 0.0 {
        return Err(Error::DivisionByZero {
            t,
            reason: "sigma_t = 0",
        });
    }
    match target {
        PredictionTarget::Noise => Ok(score.iter().map(|s| -sigma * s).collect()),
        PredictionTarget::Sample => {
            if a == 0.0 {
                return Err(Error::DivisionByZero {
                    t,
                    reason: "a_t = 0",
                });
            }
            Ok(score
                .iter()
                .zip(x)
                .map(|(s, xi)| (xi + sigma * sigma * s) / a)
                .collect())
        }
    }
}
