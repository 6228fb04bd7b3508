//! Experiment configuration: a sectioned TOML file mapped onto the library
//! types, with validation that reports the offending key path.

use crate::CliError;
use deis_core::{
    GaussianMixture, GridKind, MixtureComponent, NoiseSchedule, ReparamKind, Reparameterisation,
    SamplerKind, SamplerSpec, ScoreMagnitudeProfile,
};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub oracle: OracleSection,
    pub profile: ProfileSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub samplers: Vec<SamplerSection>,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_n_discrete")]
    pub n_discrete: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
            n_discrete: default_n_discrete(),
        }
    }
}

fn default_beta_min() -> f64 {
    1e-4
}

fn default_beta_max() -> f64 {
    2e-2
}

fn default_n_discrete() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub dim: usize,
    pub components: Vec<ComponentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default = "default_profile_nfe")]
    pub nfe: usize,
    #[serde(default = "default_profile_batch")]
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_truncation_threshold")]
    pub truncation_threshold: f64,
}

fn default_profile_nfe() -> usize {
    1000
}

fn default_profile_batch() -> usize {
    256
}

fn default_truncation_threshold() -> f64 {
    deis_core::DEFAULT_TRUNCATION_THRESHOLD
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "default_sampling_batch")]
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_nfe_list")]
    pub nfe_list: Vec<usize>,
    #[serde(default = "default_n_projections")]
    pub n_projections: usize,
    #[serde(default = "default_subdivisions")]
    pub quadrature_subdivisions: usize,
}

fn default_sampling_batch() -> usize {
    256
}

fn default_nfe_list() -> Vec<usize> {
    vec![5, 8, 10, 15, 20, 50]
}

fn default_n_projections() -> usize {
    64
}

fn default_subdivisions() -> usize {
    deis_core::DEFAULT_SUBDIVISIONS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: String,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_reparam")]
    pub reparam: String,
    /// Defaults per sampler: quadratic for the exponential integrator,
    /// linear for Euler and DDIM.
    pub grid: Option<String>,
}

fn default_order() -> usize {
    3
}

fn default_reparam() -> String {
    "sigma".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

pub fn parse_sampler_kind(s: &str) -> Result<SamplerKind, CliError> {
    match s {
        "deis" => Ok(SamplerKind::Deis),
        "euler" => Ok(SamplerKind::Euler),
        "ddim" => Ok(SamplerKind::Ddim),
        other => Err(CliError::Config(format!(
            "samplers.kind: unknown sampler '{other}' (expected deis|euler|ddim)"
        ))),
    }
}

pub fn parse_grid_kind(s: &str) -> Result<GridKind, CliError> {
    match s {
        "quadratic" => Ok(GridKind::TrailingQuadratic),
        "linear" => Ok(GridKind::TrailingLinear),
        "uniform" => Ok(GridKind::Uniform),
        other => Err(CliError::Config(format!(
            "grid: unknown kind '{other}' (expected quadratic|linear)"
        ))),
    }
}

pub fn parse_reparam_kind(s: &str) -> Result<ReparamKind, CliError> {
    match s {
        "identity" => Ok(ReparamKind::Identity),
        "sigma" => Ok(ReparamKind::Sigma),
        "score-norm" => Ok(ReparamKind::ScoreNorm),
        other => Err(CliError::Config(format!(
            "reparam: unknown kind '{other}' (expected identity|sigma|score-norm)"
        ))),
    }
}

pub fn default_grid_for(kind: SamplerKind) -> GridKind {
    match kind {
        SamplerKind::Deis => GridKind::TrailingQuadratic,
        SamplerKind::Euler | SamplerKind::Ddim => GridKind::TrailingLinear,
    }
}

impl ExperimentConfig {
    /// Schema-level validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        self.schedule()?;
        self.mixture()?;
        if self.profile.nfe < 2 {
            return Err(CliError::Config("profile.nfe: must be >= 2".into()));
        }
        if self.profile.batch < 1 {
            return Err(CliError::Config("profile.batch: must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.profile.truncation_threshold) {
            return Err(CliError::Config(
                "profile.truncation_threshold: must lie in [0, 1]".into(),
            ));
        }
        if self.profile.seed == self.sampling.seed {
            return Err(CliError::Config(
                "profile.seed: must differ from sampling.seed (profile and evaluation \
                 runs need independent randomness)"
                    .into(),
            ));
        }
        if self.sampling.batch < 1 {
            return Err(CliError::Config("sampling.batch: must be >= 1".into()));
        }
        if self.sampling.nfe_list.is_empty() {
            return Err(CliError::Config(
                "sampling.nfe_list: must not be empty".into(),
            ));
        }
        if self.sampling.nfe_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(
                "sampling.nfe_list: must be strictly increasing".into(),
            ));
        }
        if self.sampling.nfe_list.iter().any(|&n| n < 1) {
            return Err(CliError::Config(
                "sampling.nfe_list: entries must be >= 1".into(),
            ));
        }
        if self.sampling.n_projections < 1 {
            return Err(CliError::Config(
                "sampling.n_projections: must be >= 1".into(),
            ));
        }
        if self.sampling.quadrature_subdivisions < 1 {
            return Err(CliError::Config(
                "sampling.quadrature_subdivisions: must be >= 1".into(),
            ));
        }
        for (i, s) in self.samplers.iter().enumerate() {
            parse_sampler_kind(&s.kind)
                .map_err(|e| CliError::Config(format!("samplers[{i}].{e}")))?;
            parse_reparam_kind(&s.reparam)
                .map_err(|e| CliError::Config(format!("samplers[{i}].{e}")))?;
            if let Some(g) = &s.grid {
                parse_grid_kind(g).map_err(|e| CliError::Config(format!("samplers[{i}].{e}")))?;
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        NoiseSchedule::vp_linear(
            self.schedule.beta_min,
            self.schedule.beta_max,
            self.schedule.n_discrete,
        )
        .map_err(|e| CliError::Config(format!("schedule: {e}")))
    }

    pub fn mixture(&self) -> Result<GaussianMixture, CliError> {
        let components = self
            .oracle
            .components
            .iter()
            .map(|c| MixtureComponent {
                weight: c.weight,
                mean: c.mean.clone(),
                std: c.std,
            })
            .collect();
        GaussianMixture::new(self.oracle.dim, components)
            .map_err(|e| CliError::Config(format!("oracle: {e}")))
    }

    /// Does any configured sampler need a score-magnitude profile?
    pub fn needs_profile(&self) -> bool {
        self.samplers.iter().any(|s| s.reparam == "score-norm")
    }

    /// Materialises the sampler list; `profile` backs score-norm entries.
    pub fn sampler_specs(
        &self,
        profile: Option<&ScoreMagnitudeProfile>,
    ) -> Result<Vec<SamplerSpec>, CliError> {
        self.samplers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let kind = parse_sampler_kind(&s.kind)?;
                let reparam = match parse_reparam_kind(&s.reparam)? {
                    ReparamKind::Identity => Reparameterisation::identity(),
                    ReparamKind::Sigma => Reparameterisation::sigma(),
                    ReparamKind::ScoreNorm => {
                        let p = profile.ok_or_else(|| {
                            CliError::Config(format!(
                                "samplers[{i}]: score-norm requires a profile \
                                 (run `profile` or pass --profile)"
                            ))
                        })?;
                        Reparameterisation::score_norm(p.clone())
                    }
                };
                let grid = match &s.grid {
                    Some(g) => parse_grid_kind(g)?,
                    None => default_grid_for(kind),
                };
                Ok(SamplerSpec {
                    kind,
                    order: s.order,
                    reparam,
                    grid,
                })
            })
            .collect()
    }
}
