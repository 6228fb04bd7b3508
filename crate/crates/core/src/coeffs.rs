//! Extrapolation coefficients for the exponential-integrator samplers.
//!
//! Each step from `t_i` down to `t_{i-1}` weights the cached reparameterised
//! score history with
//!
//! ```text
//! C_ij = int_{t_i}^{t_{i-1}} 1/2 psi(t_{i-1}, tau) g_tau^2 K_tau^{-1}
//!        prod_{k != j} (tau - t_{i+k}) / (t_{i+j} - t_{i+k}) dtau .
//! ```
//!
//! The integral is evaluated by composite 4-point Gauss-Legendre quadrature
//! in the noise-to-signal variable `lambda = sigma/a` rather than in `t`:
//! `1/2 psi g^2 K^{-1} dtau = a_{t_{i-1}} (sigma/K) dlambda` on a
//! variance-preserving schedule, which removes the `1/sigma` endpoint
//! singularity of the default `K = sigma` reparameterisation at `t = 0`
//! (for `K = sigma` the lambda-integrand is exactly the Lagrange basis).
//! Subintervals are aligned to the schedule-table cells, where the
//! interpolated `a` is linear and the integrand analytic.

use crate::error::{Error, Result};
use crate::profile::ScoreMagnitudeProfile;
use crate::sampler::TimeGrid;
use crate::schedule::NoiseSchedule;

/// Default number of Gauss-Legendre subintervals per smooth piece.
pub const DEFAULT_SUBDIVISIONS: usize = 32;

// 4-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL_WEIGHTS: [f64; 4] = [
    0.34785484513745385,
    0.6521451548625461,
    0.6521451548625461,
    0.34785484513745385,
];

/// Which reparameterisation factor `K_t` multiplies the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReparamKind {
    /// `K = 1` (raw score extrapolation).
    Identity,
    /// `K = sigma_t` (noise-prediction default).
    Sigma,
    /// `K = 1 / s_bar(t)` (score normalisation).
    ScoreNorm,
}

impl ReparamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReparamKind::Identity => "identity",
            ReparamKind::Sigma => "sigma",
            ReparamKind::ScoreNorm => "score-norm",
        }
    }
}

/// Reparameterisation choice; score normalisation carries its profile.
#[derive(Debug, Clone)]
pub struct Reparameterisation {
    pub kind: ReparamKind,
    pub profile: Option<ScoreMagnitudeProfile>,
}

impl Reparameterisation {
    pub fn identity() -> Self {
        Self {
            kind: ReparamKind::Identity,
            profile: None,
        }
    }

    pub fn sigma() -> Self {
        Self {
            kind: ReparamKind::Sigma,
            profile: None,
        }
    }

    pub fn score_norm(profile: ScoreMagnitudeProfile) -> Self {
        Self {
            kind: ReparamKind::ScoreNorm,
            profile: Some(profile),
        }
    }
}

/// `K(t)` for the given reparameterisation; positive on its domain.
pub fn k_value(rep: &Reparameterisation, sched: &NoiseSchedule, t: f64) -> Result<f64> {
    let k = match rep.kind {
        ReparamKind::Identity => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::TimeOutOfRange(t));
            }
            1.0
        }
        ReparamKind::Sigma => sched.alpha_sigma(t)?.1,
        ReparamKind::ScoreNorm => {
            let profile = rep.profile.as_ref().ok_or(Error::MissingProfile)?;
            1.0 / profile.lookup(t)?
        }
    };
    if k <= 0.0 || !k.is_finite() {
        return Err(Error::SingularReparameterisation(t));
    }
    Ok(k)
}

/// Value at `tau` of the `j`-th Lagrange basis polynomial over `nodes`.
pub fn lagrange_weight(j: usize, tau: f64, nodes: &[f64]) -> Result<f64> {
    if j >= nodes.len() {
        return Err(Error::InvalidParameter(format!(
            "lagrange index {j} out of range for {} nodes",
            nodes.len()
        )));
    }
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            if nodes[a] == nodes[b] {
                return Err(Error::DuplicateNodes);
            }
        }
    }
    let mut w = 1.0;
    for (k, &node) in nodes.iter().enumerate() {
        if k != j {
            w *= (tau - node) / (nodes[j] - node);
        }
    }
    Ok(w)
}

/// Per-step coefficient table for a grid, order and reparameterisation.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub grid: TimeGrid,
    pub order: usize,
    pub reparam_kind: ReparamKind,
    /// `rows[k][j]` weights the score evaluated at `times[k - j]` in the step
    /// from `times[k]` to `times[k + 1]`. Row `k` has `min(order, k) + 1`
    /// entries: early steps use the largest feasible order.
    pub rows: Vec<Vec<f64>>,
    pub quadrature_subdivisions: usize,
}

/// Quadrature abscissae (in `lambda`, mapped back to `t`) for one step.
/// Weights carry the `dlambda` scaling; `tau` values are strictly inside
/// the step, so `sigma > 0` at every abscissa even when the step ends at 0.
struct StepQuadrature {
    taus: Vec<f64>,
    weights: Vec<f64>,
}

fn step_quadrature(
    sched: &NoiseSchedule,
    t_lo: f64,
    t_hi: f64,
    subdivisions: usize,
) -> Result<StepQuadrature> {
    let mut q = StepQuadrature {
        taus: Vec::new(),
        weights: Vec::new(),
    };
    if t_hi <= t_lo {
        return Ok(q); // degenerate step integrates to zero
    }
    let n = sched.n_discrete() as f64;
    // piece boundaries: step endpoints plus table knots strictly inside;
    // knots within a sliver of an endpoint (grid times can sit one ulp off
    // a knot) are merged away so abscissae stay strictly interior
    let sliver = (t_hi - t_lo) * 1e-12 + 1e-15;
    let mut cuts = vec![t_lo];
    let first = (t_lo * n).floor() as usize + 1;
    let mut k = first;
    while (k as f64) / n < t_hi {
        let knot = k as f64 / n;
        if knot - cuts.last().unwrap() > sliver && t_hi - knot > sliver {
            cuts.push(knot);
        }
        k += 1;
    }
    cuts.push(t_hi);
    for piece in cuts.windows(2) {
        let lam_lo = sched.noise_to_signal(piece[0])?;
        let lam_hi = sched.noise_to_signal(piece[1])?;
        if lam_hi <= lam_lo {
            continue;
        }
        let width = (lam_hi - lam_lo) / subdivisions as f64;
        for s in 0..subdivisions {
            let a = lam_lo + s as f64 * width;
            let centre = a + 0.5 * width;
            let half = 0.5 * width;
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let lam = centre + half * node;
                q.taus.push(sched.time_of_noise_to_signal(lam)?);
                q.weights.push(weight * half);
            }
        }
    }
    Ok(q)
}

/// Coefficients for a single step from `t_hi` down to `t_lo` with history
/// nodes `nodes[j] = t_{i+j}` (descending from `t_hi = nodes[0]`).
pub fn step_coefficients(
    sched: &NoiseSchedule,
    rep: &Reparameterisation,
    t_hi: f64,
    t_lo: f64,
    nodes: &[f64],
    subdivisions: usize,
) -> Result<Vec<f64>> {
    if subdivisions < 1 {
        return Err(Error::InvalidParameter(
            "quadrature subdivisions must be >= 1".into(),
        ));
    }
    let quad = step_quadrature(sched, t_lo, t_hi, subdivisions)?;
    let (a_lo, _) = sched.alpha_sigma(t_lo)?;
    let mut coeffs = vec![0.0; nodes.len()];
    for (&tau, &w) in quad.taus.iter().zip(&quad.weights) {
        let (_, sigma) = sched.alpha_sigma(tau)?;
        let k = k_value(rep, sched, tau)?;
        let factor = sigma / k * w;
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c += factor * lagrange_weight(j, tau, nodes)?;
        }
    }
    // the step integral runs from t_hi down to t_lo while lambda ascends
    for c in &mut coeffs {
        *c *= -a_lo;
    }
    Ok(coeffs)
}

/// Coefficient table for every step of `grid` at polynomial order `order`.
pub fn compute_coefficients(
    grid: &TimeGrid,
    order: usize,
    rep: &Reparameterisation,
    sched: &NoiseSchedule,
    subdivisions: usize,
) -> Result<CoefficientTable> {
    let times = grid.times();
    let mut rows = Vec::with_capacity(grid.n_steps());
    for k in 0..grid.n_steps() {
        let feasible = order.min(k);
        let nodes: Vec<f64> = (0..=feasible).map(|j| times[k - j]).collect();
        rows.push(step_coefficients(
            sched,
            rep,
            times[k],
            times[k + 1],
            &nodes,
            subdivisions,
        )?);
    }
    Ok(CoefficientTable {
        grid: grid.clone(),
        order,
        reparam_kind: rep.kind,
        rows,
        quadrature_subdivisions: subdivisions,
    })
}

/// All integrand evaluation times of [`compute_coefficients`] on `grid`,
/// ascending. Useful for inspecting where `K` is sampled; the score-norm
/// control experiments build profiles knotted exactly at these times.
pub fn quadrature_nodes(
    grid: &TimeGrid,
    sched: &NoiseSchedule,
    subdivisions: usize,
) -> Result<Vec<f64>> {
    let times = grid.times();
    let mut all = Vec::new();
    for k in 0..grid.n_steps() {
        let quad = step_quadrature(sched, times[k + 1], times[k], subdivisions)?;
        all.extend(quad.taus);
    }
    all.sort_by(f64::total_cmp);
    all.dedup();
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{make_time_grid, GridKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::vp_linear(1e-4, 2e-2, 1000).unwrap()
    }

    fn flat_profile(value: f64) -> ScoreMagnitudeProfile {
        ScoreMagnitudeProfile::new(vec![0.0, 1.0], vec![value, value], 0.0, 0, 0, 0).unwrap()
    }

    #[test]
    fn k_value_by_kind() {
        let s = sched();
        assert_eq!(
            k_value(&Reparameterisation::identity(), &s, 0.3).unwrap(),
            1.0
        );
        let sigma = s.alpha_sigma(0.3).unwrap().1;
        assert_eq!(
            k_value(&Reparameterisation::sigma(), &s, 0.3).unwrap(),
            sigma
        );
        let rep = Reparameterisation::score_norm(flat_profile(2.0));
        assert_eq!(k_value(&rep, &s, 0.3).unwrap(), 0.5);
    }

    #[test]
    fn k_value_score_norm_from_collected_profile() {
        // unit-variance oracle: s_bar(1) ~ sqrt(2/pi), so K(1) ~ 1.253
        let s = sched();
        let mix = crate::oracle::GaussianMixture::single(4, vec![0.0; 4], 1.0).unwrap();
        let oracle = crate::oracle::GmmOracle::new(mix, s.clone());
        let profile = crate::profile::collect_profile(&oracle, &s, 50, 64, 9).unwrap();
        let rep = Reparameterisation::score_norm(profile);
        let k = k_value(&rep, &s, 1.0).unwrap();
        assert_relative_eq!(k, 1.2533141373155003, max_relative = 0.05);
    }

    #[test]
    fn k_value_errors() {
        let s = sched();
        let rep = Reparameterisation {
            kind: ReparamKind::ScoreNorm,
            profile: None,
        };
        assert!(matches!(k_value(&rep, &s, 0.5), Err(Error::MissingProfile)));
        // sigma vanishes at exactly t = 0
        assert!(matches!(
            k_value(&Reparameterisation::sigma(), &s, 0.0),
            Err(Error::SingularReparameterisation(_))
        ));
        assert!(k_value(&Reparameterisation::identity(), &s, 1.5).is_err());
    }

    #[test]
    fn lagrange_cardinality() {
        let nodes = [0.9, 0.7, 0.4, 0.1];
        for j in 0..4 {
            for k in 0..4 {
                let w = lagrange_weight(j, nodes[k], &nodes).unwrap();
                if j == k {
                    assert_eq!(w, 1.0);
                } else {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn lagrange_errors() {
        assert!(matches!(
            lagrange_weight(0, 0.5, &[0.3, 0.3]),
            Err(Error::DuplicateNodes)
        ));
        assert!(lagrange_weight(2, 0.5, &[0.3, 0.4]).is_err());
    }

    proptest! {
        #[test]
        fn lagrange_partition_of_unity(
            tau in 0.0f64..1.0,
            base in prop::collection::vec(0.0f64..1.0, 2..5),
        ) {
            let mut nodes = base.clone();
            nodes.sort_by(f64::total_cmp);
            nodes.dedup();
            prop_assume!(nodes.len() >= 2);
            prop_assume!(nodes.windows(2).all(|w| w[1] - w[0] > 1e-3));
            let total: f64 = (0..nodes.len())
                .map(|j| lagrange_weight(j, tau, &nodes).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_for_sigma_order_zero() {
        // For K = sigma and r = 0 the step coefficient has the antiderivative
        // sigma_lo - psi(lo, hi) sigma_hi; the lambda-space integrand is the
        // constant 1, so quadrature reproduces it to rounding.
        let s = sched();
        for n in [10usize, 20] {
            let grid = make_time_grid(GridKind::TrailingQuadratic, n).unwrap();
            let table =
                compute_coefficients(&grid, 0, &Reparameterisation::sigma(), &s, 32).unwrap();
            for k in 0..grid.n_steps() {
                let t_hi = grid.times()[k];
                let t_lo = grid.times()[k + 1];
                let sigma_hi = s.alpha_sigma(t_hi).unwrap().1;
                let sigma_lo = s.alpha_sigma(t_lo).unwrap().1;
                let closed = sigma_lo - s.psi(t_lo, t_hi).unwrap() * sigma_hi;
                assert!(
                    (table.rows[k][0] - closed).abs() <= 1e-8,
                    "step {k}: {} vs closed form {closed}",
                    table.rows[k][0]
                );
            }
        }
    }

    #[test]
    fn degenerate_step_is_zero() {
        let s = sched();
        let c =
            step_coefficients(&s, &Reparameterisation::sigma(), 0.5, 0.5, &[0.5, 0.7], 8).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn warm_up_uses_largest_feasible_order() {
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 6).unwrap();
        let table = compute_coefficients(&grid, 3, &Reparameterisation::sigma(), &s, 8).unwrap();
        let lens: Vec<usize> = table.rows.iter().map(|r| r.len()).collect();
        assert_eq!(lens, vec![1, 2, 3, 4, 4, 4]);
    }

    fn flatten(table: &CoefficientTable) -> Vec<f64> {
        table.rows.iter().flatten().cloned().collect()
    }

    #[test]
    fn refinement_converges() {
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 10).unwrap();
        let rep = Reparameterisation::identity();
        let tables: Vec<Vec<f64>> = [1usize, 2, 4, 8]
            .iter()
            .map(|&m| flatten(&compute_coefficients(&grid, 3, &rep, &s, m).unwrap()))
            .collect();
        let mut diffs = Vec::new();
        for pair in tables.windows(2) {
            let d = pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
                .fold(0.0f64, f64::max);
            diffs.push(d);
        }
        // cell-aligned pieces converge essentially at m = 1; the sequence
        // decreases up to the rounding floor
        for pair in diffs.windows(2) {
            assert!(
                pair[1] <= pair[0].max(2e-12),
                "refinement not monotone: {diffs:?}"
            );
        }
        for d in &diffs {
            assert!(*d <= 1e-10, "refinement diff too large: {diffs:?}");
        }
    }

    #[test]
    fn doubling_default_subdivisions_is_stable() {
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 10).unwrap();
        for rep in [Reparameterisation::sigma(), Reparameterisation::identity()] {
            let a = flatten(&compute_coefficients(&grid, 3, &rep, &s, 32).unwrap());
            let b = flatten(&compute_coefficients(&grid, 3, &rep, &s, 64).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!(
                    (x - y).abs() <= 1e-8 * x.abs().max(1e-12),
                    "{x} vs {y} under doubling"
                );
            }
        }
    }

    #[test]
    fn constant_reparameterisation_scales_inversely() {
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 8).unwrap();
        let identity = flatten(
            &compute_coefficients(&grid, 2, &Reparameterisation::identity(), &s, 16).unwrap(),
        );
        let kappa = 2.5;
        let rep = Reparameterisation::score_norm(flat_profile(1.0 / kappa));
        let scaled = flatten(&compute_coefficients(&grid, 2, &rep, &s, 16).unwrap());
        for (a, b) in identity.iter().zip(&scaled) {
            assert_relative_eq!(a / kappa, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn row_sums_equal_order_zero_coefficient() {
        // Lagrange bases sum to 1, so each row sums to the r = 0 coefficient.
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 10).unwrap();
        for rep in [Reparameterisation::sigma(), Reparameterisation::identity()] {
            let high = compute_coefficients(&grid, 3, &rep, &s, 32).unwrap();
            let zero = compute_coefficients(&grid, 0, &rep, &s, 32).unwrap();
            for k in 0..grid.n_steps() {
                let sum: f64 = high.rows[k].iter().sum();
                assert_relative_eq!(sum, zero.rows[k][0], max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn quadrature_abscissae_are_interior_and_sorted() {
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingQuadratic, 5).unwrap();
        let nodes = quadrature_nodes(&grid, &s, 4).unwrap();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        // never evaluated at the singular endpoint t = 0, nor outside [0, 1]
        assert!(nodes[0] > 0.0 && *nodes.last().unwrap() < 1.0);
        // at least one piece of 4 GL-4 subintervals per table cell covered
        assert!(nodes.len() >= 1000 * 16);
    }

    #[test]
    fn extrapolation_of_polynomial_score_is_exact() {
        // If the reparameterised score is a polynomial of degree <= r in t,
        // the weighted history reproduces the exact integral contribution.
        // Oracle: Gauss-Legendre in t over each table cell with the
        // interpolated schedule's own g^2 = -2 a'/a (a' the cell slope built
        // from knot evaluations of alpha_sigma).
        let s = sched();
        let grid = make_time_grid(GridKind::TrailingLinear, 10).unwrap();
        let times = grid.times();
        let rep = Reparameterisation::identity();
        let table = compute_coefficients(&grid, 3, &rep, &s, 32).unwrap();
        let poly = |t: f64| 0.4 - 1.3 * t + 2.0 * t * t - 0.7 * t * t * t;
        let k = 5; // step 0.5 -> 0.4 with full history
        let t_hi = times[k];
        let t_lo = times[k + 1];
        // the weighted history must equal the step integral of the
        // interpolated integrand: sum_j C_kj p(t_j) = -int_{lo}^{hi} 1/2 psi g^2 p
        let mut weighted = 0.0;
        for (j, c) in table.rows[k].iter().enumerate() {
            weighted += c * poly(times[k - j]);
        }
        let mut reference = 0.0;
        let n = 1000usize;
        let cell_lo = (t_lo * n as f64).round() as usize;
        let cell_hi = (t_hi * n as f64).round() as usize;
        for cell in cell_lo..cell_hi {
            let k0 = cell as f64 / n as f64;
            let k1 = (cell + 1) as f64 / n as f64;
            let a0 = s.alpha_sigma(k0).unwrap().0;
            let a1 = s.alpha_sigma(k1).unwrap().0;
            let slope = (a1 - a0) * n as f64;
            let m = 8usize;
            let width = (k1 - k0) / m as f64;
            for i in 0..m {
                let left = k0 + i as f64 * width;
                for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                    let tau = left + 0.5 * width * (1.0 + node);
                    let a = s.alpha_sigma(tau).unwrap().0;
                    let g2 = -2.0 * slope / a;
                    let psi = s.psi(t_lo, tau).unwrap();
                    reference -= 0.5 * psi * g2 * poly(tau) * w * 0.5 * width;
                }
            }
        }
        assert!(
            (weighted - reference).abs() <= 1e-8,
            "weighted {weighted} vs integral {reference}"
        );
    }
}
