//! Principal-component factor estimation, information-criterion selection of
//! the factor count, and the factor VAR(1) transition.
//!
//! Loadings are normalized so that `Λ'Λ / N = I_r`; the factor scores are then
//! `F = X Λ / N`, which makes `F Λ'` the rank-r least-squares approximation
//! of the panel. Eigenvalues are reported on the sample-covariance scale
//! (`X'X / (T−1)`), which for a standardized panel is the correlation matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::{ols, sorted_symmetric_eigen};
use crate::panel::TimeSeriesPanel;

/// Residual sums of squares below this fraction of the total sum of squares
/// are treated as an exact fit.
const EXACT_FIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FactorModel {
    /// N×r loading matrix.
    pub loadings: DMatrix<f64>,
    /// T×r factor scores.
    pub factors: DMatrix<f64>,
    /// Leading r eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance per component.
    pub explained: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Sum of squared reconstruction residuals.
    pub ssr: f64,
}

impl FactorModel {
    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    /// The common component `F Λ'` (T×N).
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }
}

/// Eigen summary of a standardized panel, shared by estimation and
/// selection.
#[derive(Debug, Clone)]
struct PanelSpectrum {
    /// All nonzero-capable eigenvalues of X'X (not scaled), descending.
    gram_eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors of X'X (N×k).
    directions: DMatrix<f64>,
    total_ss: f64,
}

fn require_standardized(panel: &TimeSeriesPanel) -> Result<()> {
    if !panel.is_standardized() {
        return Err(FavarError::InvalidArgument(
            "factor estimation needs a standardized, balanced panel".into(),
        ));
    }
    Ok(())
}

/// Eigendecomposes the smaller of X'X and XX'.
fn spectrum(x: &DMatrix<f64>, k: usize) -> PanelSpectrum {
    let (t, n) = x.shape();
    let total_ss = x.norm_squared();
    if n <= t {
        let (vals, vecs) = sorted_symmetric_eigen(&(x.transpose() * x));
        PanelSpectrum {
            gram_eigenvalues: vals.iter().map(|v| v.max(0.0)).collect(),
            directions: vecs.columns(0, k.min(n)).into_owned(),
            total_ss,
        }
    } else {
        let (vals, u) = sorted_symmetric_eigen(&(x * x.transpose()));
        let k = k.min(t);
        // v = X'u / sqrt(mu); zero-eigenvalue directions stay zero here and
        // are rejected by the caller.
        let xt_u = x.transpose() * u.columns(0, k);
        let mut dirs = DMatrix::zeros(n, k);
        for c in 0..k {
            let norm = xt_u.column(c).norm();
            if norm > 0.0 {
                dirs.set_column(c, &(xt_u.column(c) / norm));
            }
        }
        PanelSpectrum {
            gram_eigenvalues: vals.iter().map(|v| v.max(0.0)).collect(),
            directions: dirs,
            total_ss,
        }
    }
}

/// Principal-component estimates of `r` factors and their loadings.
pub fn estimate_factors(panel: &TimeSeriesPanel, r: usize) -> Result<FactorModel> {
    require_standardized(panel)?;
    let x = panel.values();
    let (t, n) = x.shape();
    if r == 0 || r > n.min(t) {
        return Err(FavarError::InvalidArgument(format!(
            "factor count {r} must lie in 1..={}",
            n.min(t)
        )));
    }
    let spec = spectrum(x, r);
    let mu = &spec.gram_eigenvalues;
    if !(mu[r - 1] > EXACT_FIT_TOLERANCE * mu[0]) {
        return Err(FavarError::Singular(format!(
            "eigenvalue {r} is numerically zero ({:e} vs leading {:e}); factor {r} is not identified",
            mu[r - 1],
            mu[0]
        )));
    }

    let scale = (n as f64).sqrt();
    let mut loadings = spec.directions.columns(0, r) * scale;
    for mut col in loadings.column_iter_mut() {
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let factors = x * &loadings / n as f64;
    let resid = x - &factors * loadings.transpose();
    let ssr = resid.norm_squared();

    let denom = (t as f64 - 1.0).max(1.0);
    let eigenvalues: Vec<f64> = mu[..r].iter().map(|m| m / denom).collect();
    let explained: Vec<f64> = mu[..r].iter().map(|m| m / spec.total_ss).collect();
    let cumulative = explained
        .iter()
        .scan(0.0, |acc, e| {
            *acc += e;
            Some(f64::min(*acc, 1.0))
        })
        .collect();
    Ok(FactorModel {
        loadings,
        factors,
        eigenvalues,
        explained,
        cumulative,
        ssr,
    })
}

/// Per-component importance table: eigenvalue, share and cumulative share of
/// the first `k` principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentImportance {
    pub eigenvalues: Vec<f64>,
    pub proportion: Vec<f64>,
    pub cumulative: Vec<f64>,
}

pub fn component_importance(panel: &TimeSeriesPanel, k: usize) -> Result<ComponentImportance> {
    require_standardized(panel)?;
    let x = panel.values();
    let k = k.min(x.nrows()).min(x.ncols());
    let spec = spectrum(x, k);
    let denom = (x.nrows() as f64 - 1.0).max(1.0);
    let proportion: Vec<f64> = spec.gram_eigenvalues[..k].iter().map(|m| m / spec.total_ss).collect();
    let mut acc = 0.0;
    let cumulative = proportion
        .iter()
        .map(|p| {
            acc += p;
            acc.min(1.0)
        })
        .collect();
    Ok(ComponentImportance {
        eigenvalues: spec.gram_eigenvalues[..k].iter().map(|m| m / denom).collect(),
        proportion,
        cumulative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcResult {
    pub r_max: usize,
    /// `ssr[r-1]` is SSR(r).
    pub ssr: Vec<f64>,
    pub icr1: Vec<f64>,
    pub icr2: Vec<f64>,
    pub r_hat_icr1: usize,
    pub r_hat_icr2: usize,
}

fn argmin_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}

/// Evaluates both information criteria for r = 1..=r_max using
/// `ln(SSR(r) / NT)` plus the respective penalty; ties go to the smaller r.
pub fn select_num_factors(panel: &TimeSeriesPanel, r_max: usize) -> Result<IcResult> {
    require_standardized(panel)?;
    let x = panel.values();
    let (t, n) = x.shape();
    if r_max == 0 || r_max > n.min(t) {
        return Err(FavarError::InvalidArgument(format!(
            "r_max {r_max} must lie in 1..={}",
            n.min(t)
        )));
    }
    let spec = spectrum(x, 0);
    let (nf, tf) = (n as f64, t as f64);
    let nt = nf * tf;
    let g = (nf + tf) / nt;
    let pen1 = g * (nt / (nf + tf)).ln();
    let pen2 = g * nf.min(tf).ln();

    let mut ssr = Vec::with_capacity(r_max);
    let mut icr1 = Vec::with_capacity(r_max);
    let mut icr2 = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        let tail: f64 = spec.gram_eigenvalues[r.min(spec.gram_eigenvalues.len())..].iter().sum();
        let s = if tail <= EXACT_FIT_TOLERANCE * spec.total_ss {
            0.0
        } else {
            tail
        };
        let base = (s / nt).ln();
        ssr.push(s);
        icr1.push(base + r as f64 * pen1);
        icr2.push(base + r as f64 * pen2);
    }
    Ok(IcResult {
        r_max,
        r_hat_icr1: argmin_first(&icr1) + 1,
        r_hat_icr2: argmin_first(&icr2) + 1,
        ssr,
        icr1,
        icr2,
    })
}

/// Diagonal of the idiosyncratic covariance `(1/T) Σ_t e_t e_t'` with
/// `e_t = X_t − Λ f_t`.
pub fn idiosyncratic_cov(panel: &TimeSeriesPanel, model: &FactorModel) -> Result<Vec<f64>> {
    if model.r() == 0 {
        return Err(FavarError::InvalidArgument("a factor model needs r >= 1".into()));
    }
    let x = panel.values();
    if x.ncols() != model.loadings.nrows() || x.nrows() != model.factors.nrows() {
        return Err(FavarError::DimensionMismatch(format!(
            "panel is {}x{}, model expects {}x{}",
            x.nrows(),
            x.ncols(),
            model.factors.nrows(),
            model.loadings.nrows()
        )));
    }
    let resid = x - model.fitted();
    let t = x.nrows() as f64;
    Ok(resid.column_iter().map(|c| c.norm_squared() / t).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionForm {
    /// Full r×r coefficient matrix.
    #[default]
    Unrestricted,
    /// Independent AR(1) per factor.
    Diagonal,
}

#[derive(Debug, Clone)]
pub struct FactorTransition {
    pub phi: DMatrix<f64>,
    pub std_errors: DMatrix<f64>,
    pub resid_cov: DMatrix<f64>,
    pub form: TransitionForm,
}

/// OLS of `F_t` on `F_{t−1}` (no intercept: principal-component scores of a
/// standardized panel have mean zero).
pub fn fit_factor_transition(model: &FactorModel, form: TransitionForm) -> Result<FactorTransition> {
    let f = &model.factors;
    let (t, r) = f.shape();
    if t < r + 2 {
        return Err(FavarError::RankDeficient {
            context: format!("factor transition with T={t}, r={r} (needs T >= r + 2)"),
            rank: t.saturating_sub(1),
            cols: r,
        });
    }
    let y = f.rows(1, t - 1).into_owned();
    let x = f.rows(0, t - 1).into_owned();
    let m = (t - 1) as f64;
    let mut phi = DMatrix::zeros(r, r);
    let mut se = DMatrix::zeros(r, r);
    let resid = match form {
        TransitionForm::Unrestricted => {
            let fit = ols(&x, &y, "factor transition")?;
            let dof = (m - r as f64).max(1.0);
            for i in 0..r {
                let s2 = fit.ssr(i) / dof;
                for j in 0..r {
                    phi[(i, j)] = fit.coef[(j, i)];
                    se[(i, j)] = (s2 * fit.xtx_inv[(j, j)]).sqrt();
                }
            }
            fit.resid
        }
        TransitionForm::Diagonal => {
            let mut resid = DMatrix::zeros(t - 1, r);
            for i in 0..r {
                let xi = x.columns(i, 1).into_owned();
                let yi = y.columns(i, 1).into_owned();
                let fit = ols(&xi, &yi, "factor transition")?;
                phi[(i, i)] = fit.coef[(0, 0)];
                se[(i, i)] = (fit.ssr(0) / (m - 1.0).max(1.0) * fit.xtx_inv[(0, 0)]).sqrt();
                resid.set_column(i, &fit.resid.column(0));
            }
            resid
        }
    };
    let resid_cov = resid.transpose() * &resid / m;
    Ok(FactorTransition {
        phi,
        std_errors: se,
        resid_cov,
        form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{standardize_and_balance, BalancePolicy, Quarter, SeriesMeta, TransformCode};

    fn panel_from(values: DMatrix<f64>) -> TimeSeriesPanel {
        let dates = (0..values.nrows())
            .map(|i| Quarter::new(1960, 1).unwrap().offset(i as i64))
            .collect();
        let metas = (0..values.ncols())
            .map(|j| SeriesMeta {
                id: format!("S{j}"),
                group: None,
                transform: TransformCode::Level,
            })
            .collect();
        let raw = TimeSeriesPanel::new(dates, values, metas).unwrap();
        standardize_and_balance(&raw, BalancePolicy::DropSeries).unwrap().0
    }

    fn rank_one(t: usize, n: usize) -> TimeSeriesPanel {
        let f: Vec<f64> = (0..t).map(|i| ((i as f64) * 0.7).sin() + 0.1 * i as f64).collect();
        let l: Vec<f64> = (0..n).map(|j| 1.0 + j as f64 * 0.5).collect();
        panel_from(DMatrix::from_fn(t, n, |i, j| f[i] * l[j]))
    }

    #[test]
    fn rank_one_panel_is_fit_exactly() {
        let p = rank_one(30, 5);
        let m = estimate_factors(&p, 1).unwrap();
        assert!(m.ssr < 1e-18);
        assert!((m.explained[0] - 1.0).abs() < 1e-12);
        let xi = idiosyncratic_cov(&p, &m).unwrap();
        assert!(xi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_one_selects_one() {
        let ic = select_num_factors(&rank_one(40, 6), 4).unwrap();
        assert_eq!(ic.r_hat_icr1, 1);
        assert_eq!(ic.r_hat_icr2, 1);
        assert!(ic.ssr.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn rank_one_overfit_is_singular() {
        assert!(matches!(
            estimate_factors(&rank_one(30, 5), 2),
            Err(FavarError::Singular(_))
        ));
    }

    #[test]
    fn r_out_of_range() {
        let p = rank_one(30, 5);
        assert!(estimate_factors(&p, 0).is_err());
        assert!(estimate_factors(&p, 6).is_err());
        assert!(select_num_factors(&p, 0).is_err());
    }

    #[test]
    fn unstandardized_panel_is_rejected() {
        let dates = vec![Quarter::new(1960, 1).unwrap(), Quarter::new(1960, 2).unwrap()];
        let raw = TimeSeriesPanel::new(
            dates,
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            vec![SeriesMeta {
                id: "a".into(),
                group: None,
                transform: TransformCode::Level,
            }],
        )
        .unwrap();
        assert!(matches!(estimate_factors(&raw, 1), Err(FavarError::InvalidArgument(_))));
    }

    #[test]
    fn wide_panel_uses_time_gram() {
        // N > T path must agree with the N <= T path on the transpose-symmetric quantities.
        let vals = DMatrix::from_fn(8, 12, |i, j| ((i * 7 + j * 3) as f64).sin() + (i * j) as f64 * 0.01);
        let p = panel_from(vals);
        let m = estimate_factors(&p, 3).unwrap();
        let gram = m.loadings.transpose() * &m.loadings / 12.0;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-8);
        let ic = select_num_factors(&p, 3).unwrap();
        assert!((ic.ssr[2] - m.ssr).abs() < 1e-8 * (1.0 + m.ssr));
    }

    #[test]
    fn transition_needs_enough_rows() {
        let p = panel_from(DMatrix::from_fn(3, 4, |i, j| {
            ((i + 1) * (j + 2)) as f64 + (i * j) as f64 * 0.3 + if i == 1 { 0.5 } else { 0.0 }
        }));
        let m = estimate_factors(&p, 2).unwrap();
        // T = 3 = r + 1
        assert!(matches!(
            fit_factor_transition(&m, TransitionForm::Unrestricted),
            Err(FavarError::RankDeficient { .. })
        ));
    }

    #[test]
    fn idiosyncratic_dimension_mismatch() {
        let p = rank_one(30, 5);
        let m = estimate_factors(&p, 1).unwrap();
        let other = rank_one(30, 4);
        assert!(matches!(
            idiosyncratic_cov(&other, &m),
            Err(FavarError::DimensionMismatch(_))
        ));
    }
}
