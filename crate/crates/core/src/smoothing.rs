//! Trend-cycle decomposition of a factor with a local-linear-trend state
//! space model:
//!
//! ```text
//! f_t       = μ_t + c_t,          c_t ~ N(0, σ²_cycle)
//! μ_t       = μ_{t−1} + β_t
//! β_t       = β_{t−1} + ω_t,      ω_t ~ N(0, σ²_ω)
//! ```
//!
//! With `σ²_cycle = 1` and `σ²_ω = 1/1600` the smoothed trend coincides with
//! the Hodrick-Prescott trend at λ = 1600. The unconstrained fit keeps
//! `σ²_cycle = 1` and maximizes the likelihood over `σ²_ω`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{FavarError, Result};

pub const HP_QUARTERLY_LAMBDA: f64 = 1600.0;
/// Prior variance on both initial states.
pub const DIFFUSE_VARIANCE: f64 = 1e7;
/// Leading prediction errors left out of the likelihood.
pub const DIFFUSE_BURN_IN: usize = 2;
/// Degrees of freedom used by [`lr_test`].
pub const LR_DOF: usize = 2;

/// Search interval for ln σ²_ω in the unconstrained fit.
pub const LN_SLOPE_VAR_BOUNDS: (f64, f64) = (-23.0, 14.0);
const GRID_POINTS: usize = 75;
const GOLDEN_TOL: f64 = 1e-9;
const GOLDEN_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LltParams {
    pub cycle_var: f64,
    pub slope_var: f64,
}

impl LltParams {
    /// The Hodrick-Prescott restriction for smoothing parameter `lambda`.
    pub fn hp(lambda: f64) -> Self {
        Self {
            cycle_var: 1.0,
            slope_var: 1.0 / lambda,
        }
    }

    /// Signal-to-noise ratio σ²_cycle / σ²_ω.
    pub fn q(&self) -> f64 {
        self.cycle_var / self.slope_var
    }
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub trend: Vec<f64>,
    pub slope: Vec<f64>,
    pub filtered_trend: Vec<f64>,
    /// Average log likelihood over the non-burn-in prediction errors.
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct TrendCycleDecomposition {
    pub trend: Vec<f64>,
    pub cycle: Vec<f64>,
    pub slope: Vec<f64>,
    pub params: LltParams,
    pub q: f64,
    pub loglik: f64,
    pub constrained: bool,
    /// Likelihood evaluations spent by the optimizer (0 when constrained).
    pub iterations: usize,
    /// Standard error of σ_ω from the observed information of the profile
    /// likelihood (delta method); `None` when constrained or when the
    /// curvature is not negative.
    pub slope_sd_se: Option<f64>,
}

/// Kalman filter plus fixed-interval (RTS) smoother.
pub fn kalman_smooth(series: &[f64], params: LltParams) -> SmootherOutput {
    let n = series.len();
    let tm = Matrix2::new(1.0, 1.0, 0.0, 1.0);
    let q = Matrix2::new(1.0, 1.0, 1.0, 1.0) * params.slope_var;
    let h = params.cycle_var;

    let mut a = Vector2::zeros();
    let mut p = Matrix2::identity() * DIFFUSE_VARIANCE;
    let mut a_pred = Vec::with_capacity(n);
    let mut p_pred = Vec::with_capacity(n);
    let mut a_filt = Vec::with_capacity(n);
    let mut p_filt = Vec::with_capacity(n);
    let mut ll = 0.0;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    for (t, &y) in series.iter().enumerate() {
        let ap = tm * a;
        let mut pp = tm * p * tm.transpose() + q;
        pp = (pp + pp.transpose()) * 0.5;
        let v = y - ap[0];
        let f = pp[(0, 0)] + h;
        let k = pp.column(0) / f;
        a = ap + k * v;
        p = pp - k * k.transpose() * f;
        p = (p + p.transpose()) * 0.5;
        if t >= DIFFUSE_BURN_IN {
            ll += -0.5 * (ln2pi + f.ln() + v * v / f);
        }
        a_pred.push(ap);
        p_pred.push(pp);
        a_filt.push(a);
        p_filt.push(p);
    }

    let mut smoothed = a_filt.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let inv = p_pred[t + 1]
            .try_inverse()
            .expect("predicted state covariance is positive definite");
        let j = p_filt[t] * tm.transpose() * inv;
        smoothed[t] = a_filt[t] + j * (smoothed[t + 1] - a_pred[t + 1]);
    }

    let used = n.saturating_sub(DIFFUSE_BURN_IN).max(1) as f64;
    SmootherOutput {
        trend: smoothed.iter().map(|s| s[0]).collect(),
        slope: smoothed.iter().map(|s| s[1]).collect(),
        filtered_trend: a_filt.iter().map(|s| s[0]).collect(),
        loglik: ll / used,
    }
}

/// Average log likelihood at `ln σ²_ω = theta` with σ²_cycle fixed at 1.
fn profile_loglik(series: &[f64], theta: f64) -> f64 {
    let out = kalman_smooth(
        series,
        LltParams {
            cycle_var: 1.0,
            slope_var: theta.exp(),
        },
    );
    out.loglik
}

struct Maximum {
    theta: f64,
    value: f64,
    evaluations: usize,
}

/// Grid scan over the bounded interval followed by golden-section
/// refinement around the best grid point. The HP point is always on the
/// grid so the result is never worse than the constrained model.
fn maximize_profile(series: &[f64]) -> Result<Maximum> {
    let (lo, hi) = LN_SLOPE_VAR_BOUNDS;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    grid.push(-(HP_QUARTERLY_LAMBDA.ln()));

    let mut evaluations = 0;
    let mut best = Maximum {
        theta: f64::NAN,
        value: f64::NEG_INFINITY,
        evaluations: 0,
    };
    for &theta in &grid {
        let v = profile_loglik(series, theta);
        evaluations += 1;
        if v.is_finite() && v > best.value {
            best.theta = theta;
            best.value = v;
        }
    }
    if !best.value.is_finite() {
        return Err(FavarError::OptimizerFailure {
            iterations: evaluations,
            gradient_norm: f64::NAN,
        });
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = (best.theta - step).max(lo);
    let mut b = (best.theta + step).min(hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = profile_loglik(series, c);
    let mut fd = profile_loglik(series, d);
    evaluations += 2;
    let mut iter = 0;
    while (b - a) > GOLDEN_TOL {
        iter += 1;
        if iter > GOLDEN_MAX_ITER {
            let g = gradient(series, best.theta);
            return Err(FavarError::OptimizerFailure {
                iterations: evaluations,
                gradient_norm: g.abs(),
            });
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = profile_loglik(series, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = profile_loglik(series, d);
        }
        evaluations += 1;
        for (theta, v) in [(c, fc), (d, fd)] {
            if v.is_finite() && v > best.value {
                best.theta = theta;
                best.value = v;
            }
        }
    }
    best.evaluations = evaluations;
    Ok(best)
}

fn gradient(series: &[f64], theta: f64) -> f64 {
    let h = 1e-5;
    (profile_loglik(series, theta + h) - profile_loglik(series, theta - h)) / (2.0 * h)
}

/// Fits the local-linear-trend model to one factor.
///
/// `constrained = true` imposes the HP quarterly restriction
/// (σ²_cycle = 1, σ²_ω = 1/1600); otherwise σ²_ω is estimated by maximum
/// likelihood with σ²_cycle = 1.
pub fn fit_local_linear_trend(factor: &[f64], constrained: bool) -> Result<TrendCycleDecomposition> {
    if factor.len() < 10 {
        return Err(FavarError::InsufficientObservations(format!(
            "trend-cycle fit needs at least 10 observations, got {}",
            factor.len()
        )));
    }
    if let Some(pos) = factor.iter().position(|v| !v.is_finite()) {
        return Err(FavarError::NonFinite(pos));
    }
    let (params, iterations) = if constrained {
        (LltParams::hp(HP_QUARTERLY_LAMBDA), 0)
    } else {
        let best = maximize_profile(factor)?;
        (
            LltParams {
                cycle_var: 1.0,
                slope_var: best.theta.exp(),
            },
            best.evaluations,
        )
    };
    let slope_sd_se = if constrained {
        None
    } else {
        slope_sd_std_error(factor, params.slope_var.ln())
    };
    let out = kalman_smooth(factor, params);
    let cycle = factor.iter().zip(&out.trend).map(|(f, t)| f - t).collect();
    Ok(TrendCycleDecomposition {
        trend: out.trend,
        cycle,
        slope: out.slope,
        q: params.q(),
        params,
        loglik: out.loglik,
        constrained,
        iterations,
        slope_sd_se,
    })
}

fn slope_sd_std_error(series: &[f64], theta: f64) -> Option<f64> {
    let h = 1e-3;
    let m = (series.len() - DIFFUSE_BURN_IN) as f64;
    let curvature = m
        * (profile_loglik(series, theta + h) - 2.0 * profile_loglik(series, theta) + profile_loglik(series, theta - h))
        / (h * h);
    if !(curvature < 0.0) || !curvature.is_finite() {
        return None;
    }
    let se_theta = (-1.0 / curvature).sqrt();
    Some(0.5 * (0.5 * theta).exp() * se_theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTestResult {
    pub stat: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of the HP restriction from per-observation average
/// log likelihoods: `LR = −2 T (ℓ_R − ℓ_UR)`.
pub fn lr_test(loglik_unconstrained: f64, loglik_constrained: f64, t: usize) -> Result<LrTestResult> {
    let stat = -2.0 * t as f64 * (loglik_constrained - loglik_unconstrained);
    if loglik_unconstrained < loglik_constrained - 1e-8 {
        return Err(FavarError::NegativeLrStatistic(stat));
    }
    let stat = stat.max(0.0);
    let chi = ChiSquared::new(LR_DOF as f64).expect("positive dof");
    let p_value = if stat == 0.0 { 1.0 } else { chi.sf(stat).clamp(0.0, 1.0) };
    Ok(LrTestResult {
        stat,
        dof: LR_DOF,
        p_value,
    })
}

/// Hodrick-Prescott trend by a direct banded solve of
/// `(I + λ D'D) τ = y`, D the second-difference operator.
pub fn hp_filter_oracle(series: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(FavarError::InvalidArgument(format!(
            "HP lambda must be positive, got {lambda}"
        )));
    }
    let n = series.len();
    if n < 4 {
        return Err(FavarError::InsufficientObservations(format!(
            "HP filter needs at least 4 observations, got {n}"
        )));
    }
    // Bands of the symmetric pentadiagonal system.
    let mut d0 = vec![1.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let stencil = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for a in 0..3 {
            d0[k + a] += lambda * stencil[a] * stencil[a];
            for b in a + 1..3 {
                let v = lambda * stencil[a] * stencil[b];
                if b - a == 1 {
                    d1[k + a] += v;
                } else {
                    d2[k + a] += v;
                }
            }
        }
    }
    // Banded Cholesky: L has diagonal l0, first subdiagonal l1, second l2.
    let mut l0 = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    for i in 0..n {
        if i >= 2 {
            l2[i] = d2[i - 2] / l0[i - 2];
        }
        if i >= 1 {
            let prev = if i >= 2 { l2[i] * l1[i - 1] } else { 0.0 };
            l1[i] = (d1[i - 1] - prev) / l0[i - 1];
        }
        let diag = d0[i] - l1[i] * l1[i] - l2[i] * l2[i];
        l0[i] = diag.sqrt();
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = series[i];
        if i >= 1 {
            s -= l1[i] * z[i - 1];
        }
        if i >= 2 {
            s -= l2[i] * z[i - 2];
        }
        z[i] = s / l0[i];
    }
    let mut tau = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        if i + 1 < n {
            s -= l1[i + 1] * tau[i + 1];
        }
        if i + 2 < n {
            s -= l2[i + 2] * tau[i + 2];
        }
        tau[i] = s / l0[i];
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_walk(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x += e;
                x
            })
            .collect()
    }

    fn rel_max_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn lr_reference_value() {
        let r = lr_test(-0.687, -1.351, 240).unwrap();
        assert!((r.stat - 318.72).abs() < 1e-10);
        assert_eq!(r.dof, 2);
        assert!(r.p_value < 1e-60);
    }

    #[test]
    fn lr_equal_and_arithmetic() {
        let r = lr_test(-1.2, -1.2, 100).unwrap();
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = lr_test(-1.0, -1.5, 100).unwrap();
        assert!((r.stat - 100.0).abs() < 1e-10);
    }

    #[test]
    fn lr_swapped_arguments() {
        assert!(matches!(
            lr_test(-1.5, -1.0, 100),
            Err(FavarError::NegativeLrStatistic(_))
        ));
    }

    #[test]
    fn hp_limits() {
        let y = random_walk(3, 50);
        let t = hp_filter_oracle(&y, 1e-12).unwrap();
        assert!(rel_max_err(&t, &y) < 1e-9);
        let line: Vec<f64> = (0..60).map(|i| 2.0 - 0.3 * i as f64).collect();
        let t = hp_filter_oracle(&line, 1600.0).unwrap();
        assert!(t.iter().zip(&line).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(hp_filter_oracle(&line, 0.0).is_err());
        assert!(hp_filter_oracle(&line[..3], 1600.0).is_err());
    }

    #[test]
    fn hp_matches_dense_normal_equations() {
        let y = random_walk(9, 30);
        let n = y.len();
        let mut d = nalgebra::DMatrix::zeros(n - 2, n);
        for k in 0..n - 2 {
            d[(k, k)] = 1.0;
            d[(k, k + 1)] = -2.0;
            d[(k, k + 2)] = 1.0;
        }
        let a = nalgebra::DMatrix::identity(n, n) + d.transpose() * &d * 1600.0;
        let dense = a.lu().solve(&nalgebra::DVector::from_vec(y.clone())).unwrap();
        let banded = hp_filter_oracle(&y, 1600.0).unwrap();
        assert!(rel_max_err(&banded, dense.as_slice()) < 1e-10);
    }

    #[test]
    fn constrained_smoother_equals_hp() {
        for seed in 0..5 {
            let y = random_walk(seed, 240);
            let fit = fit_local_linear_trend(&y, true).unwrap();
            let hp = hp_filter_oracle(&y, HP_QUARTERLY_LAMBDA).unwrap();
            let err = rel_max_err(&fit.trend, &hp);
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn ramp_has_no_cycle() {
        let ramp: Vec<f64> = (0..80).map(|t| 1.5 + 0.25 * t as f64).collect();
        for constrained in [true, false] {
            let fit = fit_local_linear_trend(&ramp, constrained).unwrap();
            let worst = fit.cycle[DIFFUSE_BURN_IN..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!(worst < 1e-4, "constrained={constrained}: {worst}");
        }
    }

    #[test]
    fn decomposition_reconstructs_input() {
        let y = random_walk(11, 120);
        let fit = fit_local_linear_trend(&y, false).unwrap();
        for ((t, c), f) in fit.trend.iter().zip(&fit.cycle).zip(&y) {
            assert!((t + c - f).abs() < 1e-8);
        }
        assert!(fit.params.slope_var >= 0.0);
    }

    #[test]
    fn unconstrained_dominates_constrained() {
        for seed in 20..26 {
            let y = random_walk(seed, 150);
            let u = fit_local_linear_trend(&y, false).unwrap();
            let c = fit_local_linear_trend(&y, true).unwrap();
            assert!(u.loglik >= c.loglik - 1e-12);
        }
    }

    #[test]
    fn mle_is_local_max() {
        let y = random_walk(5, 200);
        let fit = fit_local_linear_trend(&y, false).unwrap();
        let at = |q: f64| {
            kalman_smooth(
                &y,
                LltParams {
                    cycle_var: 1.0,
                    slope_var: 1.0 / q,
                },
            )
            .loglik
        };
        let best = at(fit.q);
        assert!(at(fit.q * 1.1) < best);
        assert!(at(fit.q * 0.9) < best);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            fit_local_linear_trend(&[1.0; 5], true),
            Err(FavarError::InsufficientObservations(_))
        ));
        let mut y = vec![0.0; 20];
        y[4] = f64::NAN;
        assert!(matches!(
            fit_local_linear_trend(&y, false),
            Err(FavarError::NonFinite(4))
        ));
    }
}
