//! Variance-preserving noise schedules.
//!
//! A schedule fixes the forward-process coefficients `a_t` and
//! `sigma_t = sqrt(1 - a_t^2)` for `t` in `[0, 1]`, the SDE drift/diffusion
//! pair `(f_t, g_t^2)`, and the linear transition factor
//! `psi(t, s) = a_t / a_s` used by exponential integrators.
//!
//! The standard linear-beta schedule is tabulated as a discrete product
//! `a_{i/N}^2 = prod_{i'=1..i} (1 - beta(i'/N))` with
//! `beta(t) = beta_min + (beta_max - beta_min) t`, and extended to continuous
//! time by linear interpolation of `a`. `sigma` is always derived from the
//! interpolated `a`, never interpolated on its own, so `a^2 + sigma^2 = 1`
//! holds exactly everywhere.

use crate::error::{Error, Result};

/// Tabulated variance-preserving schedule with linear-in-`a` interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    n_discrete: usize,
    /// `alpha_table[i]` is `a` at `t = i / n_discrete`; strictly decreasing,
    /// starts at exactly 1.
    alpha_table: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the linear-beta variance-preserving schedule.
    ///
    /// `beta_min` and `beta_max` are the endpoint noise rates, `n_discrete`
    /// the table resolution (1000 in the standard setup).
    pub fn vp_linear(beta_min: f64, beta_max: f64, n_discrete: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "require 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        if n_discrete < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_discrete must be >= 2, got {n_discrete}"
            )));
        }
        let n = n_discrete as f64;
        let mut alpha_table = Vec::with_capacity(n_discrete + 1);
        alpha_table.push(1.0); // empty product
        let mut a2 = 1.0;
        for i in 1..=n_discrete {
            let beta = beta_min + (beta_max - beta_min) * (i as f64 / n);
            a2 *= 1.0 - beta;
            alpha_table.push(a2.sqrt());
        }
        Ok(Self {
            beta_min,
            beta_max,
            n_discrete,
            alpha_table,
        })
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn n_discrete(&self) -> usize {
        self.n_discrete
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange(t))
        }
    }

    /// Interpolated `a_t`. Private: callers go through [`alpha_sigma`].
    ///
    /// [`alpha_sigma`]: NoiseSchedule::alpha_sigma
    fn alpha(&self, t: f64) -> f64 {
        let x = t * self.n_discrete as f64;
        let i = (x.floor() as usize).min(self.n_discrete - 1);
        let u = x - i as f64;
        self.alpha_table[i] * (1.0 - u) + self.alpha_table[i + 1] * u
    }

    /// `(a_t, sigma_t)` with `sigma_t = sqrt(1 - a_t^2)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        let a = self.alpha(t);
        Ok((a, (1.0 - a * a).sqrt()))
    }

    /// Drift `f_t = a_t' / a_t` and squared diffusion
    /// `g_t^2 = d(sigma_t^2)/dt - 2 f_t sigma_t^2`.
    ///
    /// `da/dt` is a central finite difference on the interpolated table with
    /// step `h = 1/(2N)`, one-sided at the boundaries. `d(sigma^2)/dt` is
    /// taken through `sigma^2 = 1 - a^2`, which keeps the variance-preserving
    /// identity `g^2 = -2 f` exact instead of finite-difference-accurate.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        let h = 1.0 / (2.0 * self.n_discrete as f64);
        let lo = (t - h).max(0.0);
        let hi = (t + h).min(1.0);
        let da = (self.alpha(hi) - self.alpha(lo)) / (hi - lo);
        let a = self.alpha(t);
        let f = da / a;
        let dsigma2 = -2.0 * a * da;
        let g2 = dsigma2 - 2.0 * f * (1.0 - a * a);
        Ok((f, g2))
    }

    /// Transition factor `psi(t, u) = a_t / a_u` of the linear part.
    pub fn psi(&self, t: f64, u: f64) -> Result<f64> {
        self.check_time(t)?;
        self.check_time(u)?;
        Ok(self.alpha(t) / self.alpha(u))
    }

    /// Noise-to-signal ratio `sigma_t / a_t`; strictly increasing in `t`.
    pub fn noise_to_signal(&self, t: f64) -> Result<f64> {
        let (a, sigma) = self.alpha_sigma(t)?;
        Ok(sigma / a)
    }

    /// Exact inverse of [`noise_to_signal`] on the tabulated schedule.
    ///
    /// The ratio determines `a = 1/sqrt(1 + nsr^2)`, which is inverted
    /// per table cell (where `a` is linear in `t`). Values outside the
    /// schedule's range clamp to 0 or 1.
    ///
    /// [`noise_to_signal`]: NoiseSchedule::noise_to_signal
    pub fn time_of_noise_to_signal(&self, nsr: f64) -> Result<f64> {
        if !nsr.is_finite() || nsr < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise-to-signal ratio must be finite and >= 0, got {nsr}"
            )));
        }
        let a_target = 1.0 / (1.0 + nsr * nsr).sqrt();
        let table = &self.alpha_table;
        if a_target >= table[0] {
            return Ok(0.0);
        }
        if a_target <= table[self.n_discrete] {
            return Ok(1.0);
        }
        // Largest k with table[k] >= a_target (table strictly decreasing).
        let k = table.partition_point(|&a| a >= a_target) - 1;
        let n = self.n_discrete as f64;
        let slope = (table[k + 1] - table[k]) * n;
        Ok(k as f64 / n + (a_target - table[k]) / slope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn standard() -> NoiseSchedule {
        NoiseSchedule::vp_linear(1e-4, 2e-2, 1000).unwrap()
    }

    /// Independent oracle: direct product of the 1000 factors.
    fn direct_product_alpha(i: usize) -> f64 {
        let mut a2 = 1.0f64;
        for j in 1..=i {
            a2 *= 1.0 - (1e-4 + (2e-2 - 1e-4) * j as f64 / 1000.0);
        }
        a2.sqrt()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(NoiseSchedule::vp_linear(0.0, 2e-2, 1000).is_err());
        assert!(NoiseSchedule::vp_linear(2e-2, 1e-4, 1000).is_err());
        assert!(NoiseSchedule::vp_linear(1e-4, 1.0, 1000).is_err());
        assert!(NoiseSchedule::vp_linear(1e-4, 2e-2, 1).is_err());
    }

    #[test]
    fn endpoints_match_direct_product() {
        let s = standard();
        let (a0, sigma0) = s.alpha_sigma(0.0).unwrap();
        assert_eq!(a0, 1.0);
        assert_eq!(sigma0, 0.0);

        let (a1, sigma1) = s.alpha_sigma(1.0).unwrap();
        assert_relative_eq!(a1, direct_product_alpha(1000), max_relative = 1e-14);
        // frozen from the product oracle
        assert_relative_eq!(a1, 6.321077413042069e-3, max_relative = 1e-12);
        assert_relative_eq!(sigma1, 0.9999800217906047, max_relative = 1e-12);
    }

    #[test]
    fn interpolation_is_linear_between_knots() {
        let s = standard();
        let (a_lo, _) = s.alpha_sigma(0.0).unwrap();
        let (a_hi, _) = s.alpha_sigma(0.001).unwrap();
        let (a_mid, _) = s.alpha_sigma(0.0005).unwrap();
        assert_relative_eq!(a_mid, 0.5 * (a_lo + a_hi), max_relative = 1e-15);
    }

    #[test]
    fn rejects_out_of_range_times() {
        let s = standard();
        assert!(matches!(s.alpha_sigma(-0.1), Err(Error::TimeOutOfRange(_))));
        assert!(s.alpha_sigma(1.0 + 1e-12).is_err());
        assert!(s.drift_diffusion(1.5).is_err());
        assert!(s.psi(0.5, -1.0).is_err());
    }

    #[test]
    fn alpha_sigma_is_pure() {
        let s = standard();
        let a = s.alpha_sigma(0.37).unwrap();
        let b = s.alpha_sigma(0.37).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn vp_identity_on_random_times() {
        let s = standard();
        let mut rng = crate::rng::stream(17, 0, crate::rng::StreamPurpose::Init);
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(1e-3..1.0);
            let (f, g2) = s.drift_diffusion(t).unwrap();
            assert!(
                (g2 + 2.0 * f).abs() <= 1e-6 * g2.abs(),
                "vp identity violated at t={t}: f={f}, g2={g2}"
            );
        }
    }

    #[test]
    fn drift_is_negative_inside_interval() {
        let s = standard();
        for k in 1..100 {
            let t = k as f64 / 100.0;
            let (f, _) = s.drift_diffusion(t).unwrap();
            assert!(f < 0.0, "f({t}) = {f} not negative");
        }
    }

    #[test]
    fn drift_matches_continuous_limit_at_half() {
        // continuous limit of the discrete product: f = -N beta(t) / 2
        let s = standard();
        let (f, _) = s.drift_diffusion(0.5).unwrap();
        let analytic = -0.5 * 1000.0 * (1e-4 + (2e-2 - 1e-4) * 0.5);
        assert_relative_eq!(f, analytic, max_relative = 1e-2);
    }

    #[test]
    fn sde_consistency_at_cell_midpoints() {
        // d(sigma^2)/dt by finite difference equals g^2 + 2 f sigma^2. The
        // stencil ends on table knots at cell midpoints, which is the only
        // place a piecewise-linear table supports the comparison at 1e-6.
        let s = standard();
        let h = 1.0 / 2000.0;
        for k in 1..999 {
            let t = (k as f64 + 0.5) / 1000.0;
            let (_, sig_hi) = s.alpha_sigma(t + h).unwrap();
            let (_, sig_lo) = s.alpha_sigma(t - h).unwrap();
            let fd = (sig_hi * sig_hi - sig_lo * sig_lo) / (2.0 * h);
            let (f, g2) = s.drift_diffusion(t).unwrap();
            let (_, sigma) = s.alpha_sigma(t).unwrap();
            let rhs = g2 + 2.0 * f * sigma * sigma;
            assert_relative_eq!(fd, rhs, max_relative = 1e-6);
        }
    }

    #[test]
    fn sigma_is_derived_from_alpha() {
        let s = standard();
        for k in 0..=50 {
            let (a, sigma) = s.alpha_sigma(k as f64 / 50.0).unwrap();
            assert!((a * a + sigma * sigma - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_identity_and_reciprocal() {
        let s = standard();
        assert_eq!(s.psi(0.42, 0.42).unwrap(), 1.0);
        // 1 / a_1, frozen from the product oracle
        assert_relative_eq!(
            s.psi(0.0, 1.0).unwrap(),
            158.2008785300957,
            max_relative = 1e-12
        );
    }

    #[test]
    fn noise_to_signal_inverts_exactly() {
        let s = standard();
        for &t in &[0.0, 1e-4, 0.0377, 0.25, 0.5, 0.93, 1.0] {
            let nsr = s.noise_to_signal(t).unwrap();
            let back = s.time_of_noise_to_signal(nsr).unwrap();
            assert_relative_eq!(back, t, epsilon = 1e-12);
        }
        assert_eq!(s.time_of_noise_to_signal(0.0).unwrap(), 0.0);
        assert!(s.time_of_noise_to_signal(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn psi_semigroup(t in 0.0f64..1.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let s = standard();
            let lhs = s.psi(t, u).unwrap() * s.psi(u, v).unwrap();
            let rhs = s.psi(t, v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }
}
