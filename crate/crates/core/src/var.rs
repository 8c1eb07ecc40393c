//! Reduced-form VAR estimation by equation-wise OLS, Cholesky factorization
//! of the innovation covariance, and moving-average (impulse response)
//! coefficients.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{FavarError, Result};
use crate::linalg::ols;

/// A fitted VAR(p) with intercept, optionally with exogenous regressors
/// entering at lags 0..=p.
#[derive(Debug, Clone)]
pub struct VarModel {
    pub var_ids: Vec<String>,
    pub p: usize,
    pub intercept: DVector<f64>,
    /// A_1..A_p, each n×n; `coeffs[j-1][(i, k)]` is the effect of variable
    /// k at lag j on equation i.
    pub coeffs: Vec<DMatrix<f64>>,
    pub exog_ids: Vec<String>,
    /// Exogenous coefficients at lags 0..=p, each n×m (empty without exog).
    pub exog_coeffs: Vec<DMatrix<f64>>,
    /// (T−p)×n OLS residuals.
    pub residuals: DMatrix<f64>,
    /// Residual covariance with the T−p denominator.
    pub sigma_u: DMatrix<f64>,
    /// Lower-triangular L with L L' = sigma_u.
    pub chol: DMatrix<f64>,
    /// Largest companion-matrix eigenvalue modulus.
    pub spectral_radius: f64,
    xtx_inv: DMatrix<f64>,
}

impl VarModel {
    /// Builds a model from known population parameters (no residuals).
    pub fn from_parts(
        var_ids: Vec<String>,
        intercept: DVector<f64>,
        coeffs: Vec<DMatrix<f64>>,
        sigma_u: DMatrix<f64>,
    ) -> Result<Self> {
        let n = var_ids.len();
        let p = coeffs.len();
        if p == 0 || intercept.len() != n || sigma_u.shape() != (n, n) || coeffs.iter().any(|a| a.shape() != (n, n)) {
            return Err(FavarError::DimensionMismatch(format!(
                "inconsistent VAR parts for {n} variables and {p} lags"
            )));
        }
        let chol = cholesky_factor(&sigma_u)?;
        Ok(Self {
            var_ids,
            p,
            intercept,
            spectral_radius: spectral_radius(&coeffs),
            coeffs,
            exog_ids: Vec::new(),
            exog_coeffs: Vec::new(),
            residuals: DMatrix::zeros(0, n),
            sigma_u,
            chol,
            xtx_inv: DMatrix::zeros(0, 0),
        })
    }

    pub fn n(&self) -> usize {
        self.var_ids.len()
    }

    pub fn nobs(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }

    pub fn var_index(&self, id: &str) -> Option<usize> {
        self.var_ids.iter().position(|v| v == id)
    }

    /// Per-variable residual standard deviations.
    pub fn residual_scales(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.sigma_u[(i, i)].sqrt()).collect()
    }

    /// OLS standard errors of A_1..A_p (degrees-of-freedom corrected).
    pub fn coef_std_errors(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        if self.xtx_inv.nrows() == 0 {
            return vec![DMatrix::from_element(n, n, f64::NAN); self.p];
        }
        let k = self.xtx_inv.nrows();
        let dof = (self.nobs() as f64 - k as f64).max(1.0);
        let s2: Vec<f64> = (0..n).map(|i| self.residuals.column(i).norm_squared() / dof).collect();
        (0..self.p)
            .map(|j| {
                DMatrix::from_fn(n, n, |i, c| {
                    let row = 1 + j * n + c;
                    (s2[i] * self.xtx_inv[(row, row)]).sqrt()
                })
            })
            .collect()
    }

    /// The np×np companion matrix.
    pub fn companion(&self) -> DMatrix<f64> {
        companion_matrix(&self.coeffs)
    }

    /// Responses of the endogenous variables to a one-unit change in
    /// exogenous regressor `index` at time 0, horizons 0..=h.
    pub fn exog_multipliers(&self, index: usize, h: usize) -> Result<DMatrix<f64>> {
        if index >= self.exog_ids.len() {
            return Err(FavarError::InvalidArgument(format!(
                "exogenous index {index} out of range ({} regressors)",
                self.exog_ids.len()
            )));
        }
        let n = self.n();
        let mut out = DMatrix::zeros(h + 1, n);
        for s in 0..=h {
            let mut y = if s <= self.p {
                self.exog_coeffs[s].column(index).into_owned()
            } else {
                DVector::zeros(n)
            };
            for j in 1..=s.min(self.p) {
                y += &self.coeffs[j - 1] * out.row(s - j).transpose();
            }
            out.set_row(s, &y.transpose());
        }
        Ok(out)
    }
}

fn companion_matrix(coeffs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = coeffs.len();
    let n = coeffs[0].nrows();
    let mut c = DMatrix::zeros(n * p, n * p);
    for (j, a) in coeffs.iter().enumerate() {
        c.view_mut((0, j * n), (n, n)).copy_from(a);
    }
    for i in n..n * p {
        c[(i, i - n)] = 1.0;
    }
    c
}

pub fn spectral_radius(coeffs: &[DMatrix<f64>]) -> f64 {
    let c = companion_matrix(coeffs);
    if c.amax() == 0.0 {
        return 0.0;
    }
    match Schur::try_new(c.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(c),
    }
}

/// ‖C^(2^k)‖^(1/2^k) by repeated squaring, rescaling to avoid overflow.
fn gelfand_radius(mut c: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..40 {
        let norm = c.norm();
        if norm == 0.0 {
            return 0.0;
        }
        c /= norm;
        log_scale += norm.ln() / power;
        c = &c * &c;
        power *= 2.0;
    }
    (log_scale + c.norm().ln() / power).exp()
}

/// Fits a VAR(p) with intercept to the T×n `data` by OLS.
pub fn fit_var(data: &DMatrix<f64>, p: usize, var_ids: Vec<String>) -> Result<VarModel> {
    fit_varx(data, None, p, var_ids, Vec::new())
}

/// VAR(p) with optional exogenous regressors `exog` (T×m) entering at lags
/// 0..=p.
pub fn fit_varx(
    data: &DMatrix<f64>,
    exog: Option<&DMatrix<f64>>,
    p: usize,
    var_ids: Vec<String>,
    exog_ids: Vec<String>,
) -> Result<VarModel> {
    let (t, n) = data.shape();
    if p == 0 {
        return Err(FavarError::InvalidArgument("VAR lag order must be >= 1".into()));
    }
    if var_ids.len() != n {
        return Err(FavarError::DimensionMismatch(format!(
            "{} variable names for {n} columns",
            var_ids.len()
        )));
    }
    let m = exog.map_or(0, |x| x.ncols());
    if let Some(x) = exog {
        if x.nrows() != t || exog_ids.len() != m {
            return Err(FavarError::DimensionMismatch(format!(
                "exogenous block is {}x{} with {} names, data has {t} rows",
                x.nrows(),
                m,
                exog_ids.len()
            )));
        }
    }
    let k = 1 + n * p + m * (p + 1);
    if t <= n * p + 1 || t < p + k + 1 {
        return Err(FavarError::InsufficientObservations(format!(
            "VAR({p}) with {n} variables needs more than {} rows, got {t}",
            (n * p + 1).max(p + k)
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(FavarError::NonFinite(pos));
    }
    let rows = t - p;
    let mut x = DMatrix::zeros(rows, k);
    for r in 0..rows {
        let tt = r + p;
        x[(r, 0)] = 1.0;
        for j in 1..=p {
            for c in 0..n {
                x[(r, 1 + (j - 1) * n + c)] = data[(tt - j, c)];
            }
        }
        if let Some(ex) = exog {
            for j in 0..=p {
                for c in 0..m {
                    x[(r, 1 + n * p + j * m + c)] = ex[(tt - j, c)];
                }
            }
        }
    }
    let y = data.rows(p, rows).into_owned();
    let fit = ols(&x, &y, "VAR regressors")?;
    let b = &fit.coef;
    let intercept = DVector::from_fn(n, |i, _| b[(0, i)]);
    let coeffs: Vec<DMatrix<f64>> = (0..p)
        .map(|j| DMatrix::from_fn(n, n, |i, c| b[(1 + j * n + c, i)]))
        .collect();
    let exog_coeffs = if m > 0 {
        (0..=p)
            .map(|j| DMatrix::from_fn(n, m, |i, c| b[(1 + n * p + j * m + c, i)]))
            .collect()
    } else {
        Vec::new()
    };
    let sigma_u = fit.resid.transpose() * &fit.resid / rows as f64;
    let sigma_u = (&sigma_u + sigma_u.transpose()) * 0.5;
    let chol = cholesky_factor(&sigma_u)?;
    let spectral_radius = spectral_radius(&coeffs);
    Ok(VarModel {
        var_ids,
        p,
        intercept,
        coeffs,
        exog_ids,
        exog_coeffs,
        residuals: fit.resid,
        sigma_u,
        chol,
        spectral_radius,
        xtx_inv: fit.xtx_inv,
    })
}

/// Lower-triangular Cholesky factor with positive diagonal.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(FavarError::DimensionMismatch(format!(
            "covariance is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    if (sigma - sigma.transpose()).amax() > 1e-10 * scale.max(1.0) {
        return Err(FavarError::InvalidArgument("covariance matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let min_eig = eig.eigenvalues.min();
    let max_eig = eig.eigenvalues.max();
    if !(min_eig > 1e-10 * max_eig.max(0.0)) || !(max_eig > 0.0) {
        return Err(FavarError::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(FavarError::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        })
}

/// Ψ_0..Ψ_h with Ψ_0 = I and Ψ_s = Σ_{j=1..min(s,p)} A_j Ψ_{s−j}.
pub fn reduced_form_irf(model: &VarModel, h: usize) -> Vec<DMatrix<f64>> {
    ma_coefficients(&model.coeffs, model.n(), h)
}

pub(crate) fn ma_coefficients(coeffs: &[DMatrix<f64>], n: usize, h: usize) -> Vec<DMatrix<f64>> {
    let mut psi = Vec::with_capacity(h + 1);
    psi.push(DMatrix::identity(n, n));
    for s in 1..=h {
        let mut acc = DMatrix::zeros(n, n);
        for j in 1..=s.min(coeffs.len()) {
            acc += &coeffs[j - 1] * &psi[s - j];
        }
        psi.push(acc);
    }
    psi
}

/// Responses `Ψ_s · alpha` stacked as a (len(psi))×n matrix.
pub(crate) fn apply_ma(psi: &[DMatrix<f64>], alpha: &DVector<f64>) -> DMatrix<f64> {
    let n = alpha.len();
    let mut out = DMatrix::zeros(psi.len(), n);
    for (s, m) in psi.iter().enumerate() {
        let r = m * alpha;
        out.set_row(s, &r.transpose());
    }
    out
}

/// Matrix rows as nested vectors (for serialization).
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("y{i}")).collect()
    }

    fn model_with(coeffs: Vec<DMatrix<f64>>) -> VarModel {
        let n = coeffs[0].nrows();
        let p = coeffs.len();
        VarModel {
            var_ids: names(n),
            p,
            intercept: DVector::zeros(n),
            spectral_radius: spectral_radius(&coeffs),
            coeffs,
            exog_ids: vec![],
            exog_coeffs: vec![],
            residuals: DMatrix::zeros(1, n),
            sigma_u: DMatrix::identity(n, n),
            chol: DMatrix::identity(n, n),
            xtx_inv: DMatrix::identity(1 + n * p, 1 + n * p),
        }
    }

    #[test]
    fn cholesky_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(cholesky_factor(&i3).unwrap(), i3);

        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky_factor(&s).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((&l - expected).amax() < 1e-14);
        assert!((&l * l.transpose() - s).amax() < 1e-12);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_factor(&bad) {
            Err(FavarError::NotPositiveDefinite { min_eigenvalue }) => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn univariate_geometric_irf() {
        let m = model_with(vec![DMatrix::from_element(1, 1, 0.5)]);
        let psi = reduced_form_irf(&m, 6);
        for (h, p) in psi.iter().enumerate() {
            assert!((p[(0, 0)] - 0.5f64.powi(h as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_dynamics_irf() {
        let m = model_with(vec![DMatrix::zeros(3, 3)]);
        let psi = reduced_form_irf(&m, 4);
        assert_eq!(psi[0], DMatrix::identity(3, 3));
        assert!(psi[1..].iter().all(|p| p.amax() == 0.0));
    }

    #[test]
    fn too_short_sample() {
        let data = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        // T = n p
        assert!(matches!(
            fit_var(&data, 2, names(2)),
            Err(FavarError::InsufficientObservations(_))
        ));
        assert!(fit_var(&data, 0, names(2)).is_err());
    }

    #[test]
    fn collinear_columns_are_rank_deficient() {
        let data = DMatrix::from_fn(50, 2, |i, _| ((i * 13) % 7) as f64);
        assert!(matches!(
            fit_var(&data, 1, names(2)),
            Err(FavarError::RankDeficient { .. })
        ));
    }

    #[test]
    fn companion_radius() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        assert!((spectral_radius(&[a]) - 0.5).abs() < 1e-12);
        let unit = DMatrix::from_element(1, 1, 1.0);
        assert!((spectral_radius(&[unit]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exog_multipliers_follow_dynamics() {
        let mut m = model_with(vec![DMatrix::from_element(1, 1, 0.5)]);
        m.exog_ids = vec!["x".into()];
        m.exog_coeffs = vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)];
        let r = m.exog_multipliers(0, 3).unwrap();
        // 2, 0.5*2 + 1, 0.5*2, 0.5
        let expect = [2.0, 2.0, 1.0, 0.5];
        for (h, e) in expect.iter().enumerate() {
            assert!((r[(h, 0)] - e).abs() < 1e-14);
        }
        assert!(m.exog_multipliers(1, 3).is_err());
    }
}
