//! Empirical score-magnitude profiles.
//!
//! The score-normalised reparameterisation divides the score by the mean
//! absolute per-coordinate score magnitude `s_bar(t)` observed in offline
//! high-NFE runs. This module collects that profile (with the plain
//! `K = sigma` sampler, since score normalisation cannot exist before its
//! own profile does), interpolates it over continuous time, and truncates
//! the lookup below a small threshold where `s_bar` grows too fast to be
//! numerically useful.

use crate::coeffs::{compute_coefficients, Reparameterisation, DEFAULT_SUBDIVISIONS};
use crate::error::{Error, Result};
use crate::oracle::ScoreFunction;
use crate::rng::standard_normal_batch;
use crate::sampler::{deis_sample, make_time_grid, GridKind};
use crate::schedule::NoiseSchedule;
use std::fmt::Write as _;

/// Default lookup truncation: `s_bar(t) = s_bar(0.005)` for `t < 0.005`.
pub const DEFAULT_TRUNCATION_THRESHOLD: f64 = 0.005;

/// Piecewise-linear `s_bar(t)` with truncated lookup near `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMagnitudeProfile {
    knots: Vec<f64>,
    values: Vec<f64>,
    truncation_threshold: f64,
    batch_size: usize,
    nfe_used: usize,
    seed: u64,
}

impl ScoreMagnitudeProfile {
    /// `knots` strictly ascending in `[0, 1]`, `values` positive, one per knot.
    pub fn new(
        knots: Vec<f64>,
        values: Vec<f64>,
        truncation_threshold: f64,
        batch_size: usize,
        nfe_used: usize,
        seed: u64,
    ) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "profile needs matching non-empty knots/values, got {}/{}",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "profile knots must be strictly ascending".into(),
            ));
        }
        if knots[0] < 0.0 || *knots.last().unwrap() > 1.0 {
            return Err(Error::InvalidParameter(
                "profile knots must lie in [0, 1]".into(),
            ));
        }
        if values.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "profile values must be positive and finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&truncation_threshold) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold must lie in [0, 1], got {truncation_threshold}"
            )));
        }
        Ok(Self {
            knots,
            values,
            truncation_threshold,
            batch_size,
            nfe_used,
            seed,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn truncation_threshold(&self) -> f64 {
        self.truncation_threshold
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn nfe_used(&self) -> usize {
        self.nfe_used
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same profile with a different truncation threshold.
    pub fn with_truncation_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold must lie in [0, 1], got {threshold}"
            )));
        }
        self.truncation_threshold = threshold;
        Ok(self)
    }

    /// `s_bar(t)`: linear interpolation between knots, constant below the
    /// truncation threshold, clamped beyond the first/last knot.
    pub fn lookup(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        let t = t.max(self.truncation_threshold);
        let idx = self.knots.partition_point(|&k| k < t);
        if idx < self.knots.len() && self.knots[idx] == t {
            return Ok(self.values[idx]);
        }
        if idx == 0 {
            return Ok(self.values[0]);
        }
        if idx == self.knots.len() {
            return Ok(*self.values.last().unwrap());
        }
        let (t0, t1) = (self.knots[idx - 1], self.knots[idx]);
        let u = (t - t0) / (t1 - t0);
        Ok(self.values[idx - 1] * (1.0 - u) + self.values[idx] * u)
    }

    /// CSV body: metadata comment, `t,s_bar` header, rows ascending in `t`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# batch={} nfe={} seed={} truncation_threshold={}",
            self.batch_size, self.nfe_used, self.seed, self.truncation_threshold
        );
        out.push_str("t,s_bar\n");
        for (t, v) in self.knots.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }

    /// Parses the CSV format written by [`to_csv_string`]. Unknown comment
    /// lines are ignored; metadata defaults apply when absent.
    ///
    /// [`to_csv_string`]: ScoreMagnitudeProfile::to_csv_string
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut batch_size = 0usize;
        let mut nfe_used = 0usize;
        let mut seed = 0u64;
        let mut threshold = DEFAULT_TRUNCATION_THRESHOLD;
        let mut knots = Vec::new();
        let mut values = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for pair in comment.split_whitespace() {
                    if let Some((key, value)) = pair.split_once('=') {
                        match key {
                            "batch" => batch_size = value.parse().unwrap_or(batch_size),
                            "nfe" => nfe_used = value.parse().unwrap_or(nfe_used),
                            "seed" => seed = value.parse().unwrap_or(seed),
                            "truncation_threshold" => {
                                threshold = value.parse().unwrap_or(threshold)
                            }
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "t,s_bar" {
                    return Err(Error::ProfileFormat(format!(
                        "line {}: expected header 't,s_bar', got '{line}'",
                        lineno + 1
                    )));
                }
                saw_header = true;
                continue;
            }
            let (t_str, v_str) = line.split_once(',').ok_or_else(|| {
                Error::ProfileFormat(format!("line {}: expected 't,s_bar' row", lineno + 1))
            })?;
            let t: f64 = t_str
                .trim()
                .parse()
                .map_err(|e| Error::ProfileFormat(format!("line {}: {e}", lineno + 1)))?;
            let v: f64 = v_str
                .trim()
                .parse()
                .map_err(|e| Error::ProfileFormat(format!("line {}: {e}", lineno + 1)))?;
            knots.push(t);
            values.push(v);
        }
        if !saw_header {
            return Err(Error::ProfileFormat("missing 't,s_bar' header".into()));
        }
        Self::new(knots, values, threshold, batch_size, nfe_used, seed)
    }
}

/// Collects `s_bar(t)` by running the order-3 `K = sigma` sampler on a
/// uniform `nfe`-step grid over a batch of trajectories initialised from
/// `N(0, I)` with the given seed, recording at every visited `t` the mean
/// absolute per-coordinate score. Use a seed distinct from evaluation runs.
pub fn collect_profile(
    score: &dyn ScoreFunction,
    sched: &NoiseSchedule,
    nfe: usize,
    batch: usize,
    seed: u64,
) -> Result<ScoreMagnitudeProfile> {
    if nfe < 2 {
        return Err(Error::InvalidParameter(format!(
            "profile collection needs nfe >= 2, got {nfe}"
        )));
    }
    if batch < 1 {
        return Err(Error::InvalidParameter("batch must be >= 1".into()));
    }
    let grid = make_time_grid(GridKind::Uniform, nfe)?;
    let rep = Reparameterisation::sigma();
    let table = compute_coefficients(&grid, 3, &rep, sched, DEFAULT_SUBDIVISIONS)?;
    let x1 = standard_normal_batch(batch, score.dim(), seed);
    let run = deis_sample(&x1, &grid, 3, score, &rep, sched, &table, false)?;

    // visited times descend from t = 1; knots ascend
    let mut knots = Vec::with_capacity(run.score_magnitudes.len());
    let mut values = Vec::with_capacity(run.score_magnitudes.len());
    for &(t, mean_abs) in run.score_magnitudes.iter().rev() {
        knots.push(t);
        values.push(mean_abs);
    }
    ScoreMagnitudeProfile::new(
        knots,
        values,
        DEFAULT_TRUNCATION_THRESHOLD,
        batch,
        nfe,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GaussianMixture, GmmOracle};
    use approx::assert_relative_eq;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::vp_linear(1e-4, 2e-2, 1000).unwrap()
    }

    fn profile_from(knots: &[f64], values: &[f64]) -> ScoreMagnitudeProfile {
        ScoreMagnitudeProfile::new(knots.to_vec(), values.to_vec(), 0.005, 0, 0, 0).unwrap()
    }

    #[test]
    fn lookup_truncates_below_threshold() {
        let p = profile_from(&[0.001, 0.005, 0.01, 1.0], &[10.0, 4.0, 2.0, 1.0]);
        let at_threshold = p.lookup(0.005).unwrap();
        assert_eq!(p.lookup(0.0).unwrap(), at_threshold);
        assert_eq!(p.lookup(0.001).unwrap(), at_threshold);
        assert_eq!(p.lookup(0.0049).unwrap(), at_threshold);
        assert_eq!(at_threshold, 4.0);
    }

    #[test]
    fn lookup_interpolates_and_clamps() {
        let p = profile_from(&[0.1, 0.2], &[2.0, 4.0]);
        assert_eq!(p.lookup(0.1).unwrap(), 2.0);
        assert_eq!(p.lookup(0.15).unwrap(), 3.0);
        assert_eq!(p.lookup(0.9).unwrap(), 4.0);
        assert_eq!(p.lookup(0.05).unwrap(), 2.0);
        assert!(p.lookup(1.5).is_err());
    }

    #[test]
    fn validates_profile() {
        assert!(ScoreMagnitudeProfile::new(vec![], vec![], 0.005, 0, 0, 0).is_err());
        assert!(
            ScoreMagnitudeProfile::new(vec![0.2, 0.1], vec![1.0, 1.0], 0.005, 0, 0, 0).is_err()
        );
        assert!(
            ScoreMagnitudeProfile::new(vec![0.1, 0.2], vec![1.0, 0.0], 0.005, 0, 0, 0).is_err()
        );
        assert!(ScoreMagnitudeProfile::new(vec![0.1], vec![1.0], 2.0, 0, 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = ScoreMagnitudeProfile::new(
            vec![0.001, 0.25, 1.0],
            vec![3.5182710131857077, 0.8122, 0.7978845608028654],
            0.005,
            256,
            1000,
            777,
        )
        .unwrap();
        let text = p.to_csv_string();
        let back = ScoreMagnitudeProfile::from_csv_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(ScoreMagnitudeProfile::from_csv_str("nonsense\n").is_err());
        assert!(ScoreMagnitudeProfile::from_csv_str("t,s_bar\n0.1;2\n").is_err());
        assert!(ScoreMagnitudeProfile::from_csv_str("").is_err());
    }

    struct ConstantScore {
        dim: usize,
        value: f64,
    }

    impl ScoreFunction for ConstantScore {
        fn dim(&self) -> usize {
            self.dim
        }
        fn evaluate(&self, _x: &[f64], _t: f64) -> Vec<f64> {
            vec![self.value; self.dim]
        }
    }

    #[test]
    fn single_trajectory_records_exact_magnitude() {
        let s = sched();
        let score = ConstantScore {
            dim: 1,
            value: -0.5,
        };
        let p = collect_profile(&score, &s, 10, 1, 3).unwrap();
        assert_eq!(p.knots().len(), 10);
        for v in p.values() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let s = sched();
        let mix = GaussianMixture::single(2, vec![0.0, 0.0], 1.0).unwrap();
        let oracle = GmmOracle::new(mix, s.clone());
        let a = collect_profile(&oracle, &s, 50, 8, 21).unwrap();
        let b = collect_profile(&oracle, &s, 50, 8, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_profile_matches_half_normal_magnitude() {
        // x_t ~ N(0, v(t)) along the flow, so the mean absolute score is
        // sqrt(2 / (pi v(t))); batch 256 x dim 8 keeps sampling noise ~ 2%.
        let s = sched();
        let mix = GaussianMixture::single(8, vec![0.0; 8], 1.0).unwrap();
        let oracle = GmmOracle::new(mix.clone(), s.clone());
        let p = collect_profile(&oracle, &s, 1000, 256, 777).unwrap();
        for (t, v) in p.knots().iter().zip(p.values()) {
            let (a, sigma) = s.alpha_sigma(*t).unwrap();
            let var = a * a + sigma * sigma;
            let expected = (2.0 / (std::f64::consts::PI * var)).sqrt();
            assert!(
                (v - expected).abs() / expected <= 0.05,
                "t={t}: collected {v}, half-normal {expected}"
            );
        }
        // at t = 1 the marginal is ~ N(0, 1): s_bar ~ sqrt(2/pi)
        let last = *p.values().last().unwrap();
        assert_relative_eq!(last, 0.7978845608028654, max_relative = 0.05);
    }

    #[test]
    fn profile_increases_towards_zero_for_contracting_oracle() {
        // c < 1 makes v(t) shrink as t -> 0, so s_bar strictly rises
        let s = sched();
        let mix = GaussianMixture::single(8, vec![0.0; 8], 0.5).unwrap();
        let oracle = GmmOracle::new(mix, s.clone());
        let p = collect_profile(&oracle, &s, 200, 64, 11).unwrap();
        for w in p.values().windows(2) {
            assert!(w[0] > w[1], "profile not strictly decreasing in t: {w:?}");
        }
    }
}
