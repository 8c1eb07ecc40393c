//! Structural impulse responses, bootstrap bands, cumulative responses,
//! variance decompositions, loading-based responses for observables outside
//! the VAR, Median-Target selection, and fit diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::identify::{draw_rng, identify_tax_shock, DrawSet, IdentMode, IdentifyOptions, SignRestrictionSpec};
use crate::linalg::{correlation, lstsq, median, quantile_sorted, sample_sd};
use crate::var::{apply_ma, fit_var, reduced_form_irf, VarModel};

pub const DEFAULT_HORIZON: usize = 20;
pub const DEFAULT_LEVEL: f64 = 0.90;

/// Responses Ψ_h·alpha for h = 0..=horizon, as a (horizon+1)×n matrix.
pub fn structural_irf(model: &VarModel, alpha: &DVector<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    if alpha.len() != model.n() {
        return Err(FavarError::DimensionMismatch(format!(
            "impulse vector of length {} for a {}-variable VAR",
            alpha.len(),
            model.n()
        )));
    }
    Ok(apply_ma(&reduced_form_irf(model, horizon), alpha))
}

/// A cloud of response paths with pointwise median and percentile bands.
#[derive(Debug, Clone, PartialEq)]
pub struct IrfSet {
    pub draws: Vec<DMatrix<f64>>,
    pub median: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
}

impl IrfSet {
    pub fn from_draws(draws: Vec<DMatrix<f64>>, level: f64) -> Result<Self> {
        if draws.is_empty() {
            return Err(FavarError::InvalidArgument("no response draws".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(FavarError::InvalidArgument(format!(
                "band level must lie in (0, 1), got {level}"
            )));
        }
        let shape = draws[0].shape();
        if draws.iter().any(|d| d.shape() != shape) {
            return Err(FavarError::DimensionMismatch("response draws differ in shape".into()));
        }
        let lo = (1.0 - level) / 2.0;
        let mut median = DMatrix::zeros(shape.0, shape.1);
        let mut lower = median.clone();
        let mut upper = median.clone();
        let mut cell = Vec::with_capacity(draws.len());
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                cell.clear();
                cell.extend(draws.iter().map(|d| d[(i, j)]));
                cell.sort_by(f64::total_cmp);
                median[(i, j)] = quantile_sorted(&cell, 0.5);
                lower[(i, j)] = quantile_sorted(&cell, lo);
                upper[(i, j)] = quantile_sorted(&cell, 1.0 - lo);
            }
        }
        Ok(Self {
            draws,
            median,
            lower,
            upper,
            level,
        })
    }

    pub fn horizon(&self) -> usize {
        self.median.nrows() - 1
    }
}

/// Sums of `irf` rows over 1..=h (or 0..=h with `include_impact`) for each
/// requested h; returns len(horizons)×n.
pub fn cumulative_irf(irf: &DMatrix<f64>, horizons: &[usize], include_impact: bool) -> Result<DMatrix<f64>> {
    let n = irf.ncols();
    let mut out = DMatrix::zeros(horizons.len(), n);
    let first = usize::from(!include_impact);
    for (k, &h) in horizons.iter().enumerate() {
        if h >= irf.nrows() {
            return Err(FavarError::InvalidArgument(format!(
                "cumulative horizon {h} beyond response length {}",
                irf.nrows()
            )));
        }
        for s in first..=h {
            for j in 0..n {
                out[(k, j)] += irf[(s, j)];
            }
        }
    }
    Ok(out)
}

/// Percent of each variable's h-step forecast error variance due to one
/// shock. `shares[(k, j)]` refers to `horizons[k]` and variable j.
#[derive(Debug, Clone, PartialEq)]
pub struct FevdTable {
    pub var_ids: Vec<String>,
    pub horizons: Vec<usize>,
    pub shares: DMatrix<f64>,
}

/// Variance share of the shock with impact `alpha`, cumulative through each
/// horizon h (steps s = 0..h−1).
pub fn fevd(model: &VarModel, alpha: &DVector<f64>, horizons: &[usize]) -> Result<FevdTable> {
    let n = model.n();
    fevd_combinations(model, alpha, &DMatrix::identity(n, n), model.var_ids.clone(), horizons)
}

/// Variance shares for linear combinations `w_i' y_t` of the VAR variables
/// (rows of `weights`), such as a panel series projected on the VAR. Only
/// the variance carried by the VAR innovations enters the denominator.
pub fn fevd_combinations(
    model: &VarModel,
    alpha: &DVector<f64>,
    weights: &DMatrix<f64>,
    ids: Vec<String>,
    horizons: &[usize],
) -> Result<FevdTable> {
    let n = model.n();
    if alpha.len() != n {
        return Err(FavarError::DimensionMismatch(format!(
            "impulse vector of length {} for a {n}-variable VAR",
            alpha.len()
        )));
    }
    if weights.ncols() != n || ids.len() != weights.nrows() {
        return Err(FavarError::DimensionMismatch(format!(
            "weights are {}x{} with {} ids for a {n}-variable VAR",
            weights.nrows(),
            weights.ncols(),
            ids.len()
        )));
    }
    if horizons.contains(&0) {
        return Err(FavarError::InvalidArgument(
            "variance decomposition horizons start at 1".into(),
        ));
    }
    let m = weights.nrows();
    let h_max = horizons.iter().copied().max().unwrap_or(1);
    let psi = reduced_form_irf(model, h_max);
    let mut num = DMatrix::<f64>::zeros(h_max + 1, m);
    let mut den = DMatrix::<f64>::zeros(h_max + 1, m);
    for s in 0..h_max {
        let wp = weights * &psi[s];
        let r = &wp * alpha;
        let v = &wp * &model.sigma_u * wp.transpose();
        for j in 0..m {
            num[(s + 1, j)] = num[(s, j)] + r[j] * r[j];
            den[(s + 1, j)] = den[(s, j)] + v[(j, j)];
        }
    }
    let mut shares = DMatrix::zeros(horizons.len(), m);
    for (k, &h) in horizons.iter().enumerate() {
        for j in 0..m {
            if !(den[(h, j)] > 0.0) {
                return Err(FavarError::ZeroForecastVariance(j));
            }
            shares[(k, j)] = (100.0 * num[(h, j)] / den[(h, j)]).clamp(0.0, 100.0);
        }
    }
    Ok(FevdTable {
        var_ids: ids,
        horizons: horizons.to_vec(),
        shares,
    })
}

/// Loadings of each panel series on the VAR variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableLoadings {
    pub series_ids: Vec<String>,
    pub regressor_ids: Vec<String>,
    pub intercept: DVector<f64>,
    /// series × regressors.
    pub loadings: DMatrix<f64>,
    /// Residual sum of squares per series.
    pub ssr: DVector<f64>,
    /// Total sum of squares (about the mean) per series.
    pub tss: DVector<f64>,
    nobs: usize,
}

impl ObservableLoadings {
    pub fn row(&self, series: usize) -> DVector<f64> {
        self.loadings.row(series).transpose()
    }

    /// Root mean squared residual over all series and periods.
    pub fn rmse(&self) -> f64 {
        let cells = self.ssr.len() as f64 * self.nobs as f64;
        (self.ssr.sum() / cells).sqrt()
    }

    /// 100·(1 − SSR/TSS) pooled over all series.
    pub fn explained_percent(&self) -> f64 {
        100.0 * (1.0 - self.ssr.sum() / self.tss.sum())
    }
}

/// OLS (with intercept) of each column of `series` on the columns of
/// `regressors`. Rank-deficient regressor sets are handled by least norm.
pub fn observable_loadings(
    series: &DMatrix<f64>,
    series_ids: Vec<String>,
    regressors: &DMatrix<f64>,
    regressor_ids: Vec<String>,
) -> Result<ObservableLoadings> {
    let (t, m) = series.shape();
    let k = regressors.ncols();
    if regressors.nrows() != t || series_ids.len() != m || regressor_ids.len() != k {
        return Err(FavarError::DimensionMismatch(format!(
            "{t}x{m} series, {}x{k} regressors, {} / {} names",
            regressors.nrows(),
            series_ids.len(),
            regressor_ids.len()
        )));
    }
    if t <= k + 1 {
        return Err(FavarError::InsufficientObservations(format!(
            "{t} observations for {k} regressors plus intercept"
        )));
    }
    if let Some(pos) = series.iter().chain(regressors.iter()).position(|v| !v.is_finite()) {
        return Err(FavarError::NonFinite(pos));
    }
    let mut x = DMatrix::from_element(t, k + 1, 1.0);
    x.columns_mut(1, k).copy_from(regressors);
    let fit = lstsq(&x, series)?;
    let intercept = DVector::from_fn(m, |i, _| fit.coef[(0, i)]);
    let loadings = DMatrix::from_fn(m, k, |i, j| fit.coef[(j + 1, i)]);
    let ssr = DVector::from_fn(m, |i, _| fit.ssr(i));
    let tss = DVector::from_fn(m, |i, _| {
        let col = series.column(i);
        let mean = col.mean();
        col.iter().map(|v| (v - mean).powi(2)).sum()
    });
    Ok(ObservableLoadings {
        series_ids,
        regressor_ids,
        intercept,
        loadings,
        ssr,
        tss,
        nobs: t,
    })
}

/// Response path of an observable: `regressor_irf · loadings_row`.
pub fn observable_irf(loadings_row: &DVector<f64>, regressor_irf: &DMatrix<f64>) -> Result<DVector<f64>> {
    if loadings_row.len() != regressor_irf.ncols() {
        return Err(FavarError::DimensionMismatch(format!(
            "{} loadings for {} response columns",
            loadings_row.len(),
            regressor_irf.ncols()
        )));
    }
    Ok(regressor_irf * loadings_row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtResult {
    pub selected_draw: usize,
    pub gap: f64,
    pub gaps: Vec<f64>,
    /// Cells with zero spread across draws, left out of every gap.
    pub excluded_cells: usize,
}

/// Picks the draw closest to the pointwise median in standardized squared
/// distance.
pub fn median_target_select(irfs: &[DMatrix<f64>]) -> Result<MtResult> {
    if irfs.len() < 2 {
        return Err(FavarError::InsufficientObservations(format!(
            "median-target selection needs at least 2 draws, got {}",
            irfs.len()
        )));
    }
    let shape = irfs[0].shape();
    if irfs.iter().any(|d| d.shape() != shape) {
        return Err(FavarError::DimensionMismatch("response draws differ in shape".into()));
    }
    let mut gaps = vec![0.0; irfs.len()];
    let mut excluded = 0;
    let mut cell = Vec::with_capacity(irfs.len());
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            cell.clear();
            cell.extend(irfs.iter().map(|d| d[(i, j)]));
            let sd = sample_sd(&cell);
            if !(sd > 0.0) {
                excluded += 1;
                continue;
            }
            let med = median(&cell);
            for (g, v) in gaps.iter_mut().zip(&cell) {
                *g += ((v - med) / sd).powi(2);
            }
        }
    }
    let (selected_draw, gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least two draws");
    Ok(MtResult {
        selected_draw,
        gap,
        gaps,
        excluded_cells: excluded,
    })
}

/// Index into `draws.accepted` of the benchmark draw: the Median-Target
/// choice in rejection mode, the minimizer in penalty mode.
pub fn benchmark_draw(draws: &DrawSet) -> Result<usize> {
    match (draws.mode, draws.minimizer) {
        (IdentMode::Penalty, Some(i)) => Ok(i),
        _ if draws.accepted.len() == 1 => Ok(0),
        _ => Ok(median_target_select(&draws.irfs())?.selected_draw),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reidentify {
    /// Apply the benchmark rotation q to each replication's Cholesky factor.
    #[default]
    ReuseQ,
    /// Rerun the sign-restriction search on each replication.
    FullSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
    pub horizon: usize,
    pub reidentify: Reidentify,
    /// Largest tolerated share of failed replications.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replications: 500,
            level: DEFAULT_LEVEL,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            reidentify: Reidentify::ReuseQ,
            max_failure_rate: 0.2,
        }
    }
}

pub const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub bands: IrfSet,
    pub failed: usize,
    pub replications: usize,
}

/// Recursive-design residual bootstrap of the structural responses.
///
/// Pseudo-samples keep the first p rows of `data`, then iterate the fitted
/// VAR with residuals drawn with replacement from the centered OLS
/// residuals. Each pseudo-sample is refit and the shock re-identified per
/// `opts.reidentify`. Replication b uses its own generator stream, so the
/// result does not depend on the number of worker threads.
pub fn bootstrap_bands(
    data: &DMatrix<f64>,
    model: &VarModel,
    q: &DVector<f64>,
    spec: &SignRestrictionSpec,
    ident: &IdentifyOptions,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if opts.replications < MIN_REPLICATIONS {
        return Err(FavarError::InvalidArgument(format!(
            "bootstrap needs at least {MIN_REPLICATIONS} replications, got {}",
            opts.replications
        )));
    }
    let (t, n) = data.shape();
    if n != model.n() || q.len() != n || t != model.nobs() + model.p {
        return Err(FavarError::DimensionMismatch(format!(
            "data {t}x{n} does not match the fitted VAR ({} obs, {} lags, {} vars)",
            model.nobs(),
            model.p,
            model.n()
        )));
    }
    if !model.exog_ids.is_empty() {
        return Err(FavarError::InvalidArgument(
            "bootstrap supports VARs without exogenous regressors".into(),
        ));
    }
    let resid = centered(&model.residuals);
    let results: Vec<Option<DMatrix<f64>>> = (0..opts.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = draw_rng(opts.seed ^ 0x9e37_79b9_7f4a_7c15, b as u64);
            let pseudo = pseudo_sample(data, model, &resid, &mut rng);
            replicate(&pseudo, model, q, spec, ident, opts, b).ok()
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    let limit = (opts.max_failure_rate * opts.replications as f64).floor() as usize;
    if failed > limit || failed == opts.replications {
        return Err(FavarError::BootstrapFailure {
            failed,
            replications: opts.replications,
            limit: opts.max_failure_rate,
        });
    }
    let draws: Vec<DMatrix<f64>> = results.into_iter().flatten().collect();
    Ok(BootstrapResult {
        bands: IrfSet::from_draws(draws, opts.level)?,
        failed,
        replications: opts.replications,
    })
}

fn centered(resid: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = resid.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn pseudo_sample<R: Rng>(data: &DMatrix<f64>, model: &VarModel, resid: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let (t, n) = data.shape();
    let p = model.p;
    let mut y = DMatrix::zeros(t, n);
    y.rows_mut(0, p).copy_from(&data.rows(0, p));
    for tt in p..t {
        let draw = rng.random_range(0..resid.nrows());
        let mut row = model.intercept.clone() + resid.row(draw).transpose();
        for (j, a) in model.coeffs.iter().enumerate() {
            row += a * y.row(tt - j - 1).transpose();
        }
        y.set_row(tt, &row.transpose());
    }
    y
}

fn replicate(
    pseudo: &DMatrix<f64>,
    model: &VarModel,
    q: &DVector<f64>,
    spec: &SignRestrictionSpec,
    ident: &IdentifyOptions,
    opts: &BootstrapOptions,
    b: usize,
) -> Result<DMatrix<f64>> {
    let refit = fit_var(pseudo, model.p, model.var_ids.clone())?;
    match opts.reidentify {
        Reidentify::ReuseQ => {
            let mut alpha = &refit.chol * q;
            if alpha[spec.shock_index] > 0.0 {
                alpha.neg_mut();
            }
            structural_irf(&refit, &alpha, opts.horizon)
        }
        Reidentify::FullSearch => {
            let mut o = ident.clone();
            o.horizon = opts.horizon;
            o.seed = ident.seed.wrapping_add(b as u64 + 1);
            let set = identify_tax_shock(&refit, spec, &o)?;
            if set.mode == IdentMode::Penalty || set.accepted.len() == 1 {
                let i = benchmark_draw(&set)?;
                return Ok(set.accepted[i].irf.clone());
            }
            Ok(IrfSet::from_draws(set.irfs(), opts.level)?.median)
        }
    }
}

/// Structural shock series `q' L⁻¹ u_t` implied by impact `alpha = L q`.
pub fn structural_shock_series(model: &VarModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    if q.len() != model.n() {
        return Err(FavarError::DimensionMismatch(format!(
            "rotation of length {} for a {}-variable VAR",
            q.len(),
            model.n()
        )));
    }
    let lt = model
        .chol
        .solve_lower_triangular(&model.residuals.transpose())
        .ok_or_else(|| FavarError::Singular("Cholesky factor".into()))?;
    Ok(lt.transpose() * q)
}

/// Correlation clipped to [−1, 1]; `None` when either series is constant.
pub fn shock_correlation(shocks: &[f64], narrative: &[f64]) -> Result<Option<f64>> {
    if shocks.len() != narrative.len() {
        return Err(FavarError::DimensionMismatch(format!(
            "{} shocks vs {} narrative observations",
            shocks.len(),
            narrative.len()
        )));
    }
    Ok(correlation(shocks, narrative).map(|c| c.clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub label: String,
    pub r: usize,
    pub rmse: f64,
    pub explained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockCorrelation {
    pub label: String,
    pub correlation: Option<f64>,
    pub nobs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub rows: Vec<ReliabilityRow>,
    pub shock_correlations: Vec<ShockCorrelation>,
}

/// Fit of the panel reconstruction `x_t ≈ c + Λ [F_t; Y_t]` for one model.
pub fn reliability_row(
    label: &str,
    r: usize,
    panel: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
) -> Result<ReliabilityRow> {
    let ids = |k: usize, p: &str| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let fit = observable_loadings(panel, ids(panel.ncols(), "x"), regressors, ids(regressors.ncols(), "z"))?;
    Ok(ReliabilityRow {
        label: label.to_string(),
        r,
        rmse: fit.rmse(),
        explained: fit.explained_percent(),
    })
}
