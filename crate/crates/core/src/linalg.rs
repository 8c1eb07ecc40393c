//! Dense least squares, eigen and summary-statistic helpers shared by the
//! estimation modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FavarError, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Result of a multi-response least-squares fit `Y = X B + E`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// k×q coefficient matrix.
    pub coef: DMatrix<f64>,
    /// m×q residual matrix.
    pub resid: DMatrix<f64>,
    /// (X'X)^+ (k×k).
    pub xtx_inv: DMatrix<f64>,
    pub rank: usize,
}

impl OlsFit {
    /// Residual sum of squares for response column `j`.
    pub fn ssr(&self, j: usize) -> f64 {
        self.resid.column(j).norm_squared()
    }
}

/// Least squares through the SVD. Rank-deficient designs are allowed and
/// yield the minimum-norm solution; `rank` reports the numerical rank.
pub fn lstsq(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OlsFit> {
    if x.nrows() != y.nrows() {
        return Err(FavarError::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let k = x.ncols();
    if x.nrows() == 0 || k == 0 {
        return Err(FavarError::InvalidArgument("empty design matrix".into()));
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.max();
    let cutoff = s_max * RANK_TOLERANCE;
    let mut rank = 0;
    let mut inv_s = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            inv_s[i] = 1.0 / s;
            rank += 1;
        }
    }
    let v = v_t.transpose();
    // B = V S^+ U' Y
    let uty = u.transpose() * y;
    let scaled = DMatrix::from_fn(uty.nrows(), uty.ncols(), |i, j| uty[(i, j)] * inv_s[i]);
    let coef = &v * scaled;
    let resid = y - x * &coef;
    let vs = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * inv_s[j] * inv_s[j]);
    let xtx_inv = vs * v.transpose();
    Ok(OlsFit {
        coef,
        resid,
        xtx_inv,
        rank,
    })
}

/// Least squares that refuses rank-deficient designs.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>, context: &str) -> Result<OlsFit> {
    let fit = lstsq(x, y)?;
    if fit.rank < x.ncols() {
        return Err(FavarError::RankDeficient {
            context: context.to_string(),
            rank: fit.rank,
            cols: x.ncols(),
        });
    }
    Ok(fit)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (stable on ties) and eigenvectors permuted to match.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the n−1 denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolation quantile of an ascending slice (`p` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Pearson correlation, `None` when either series is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Lagged regressor matrix: row t holds `series[t - lag]` for lag in 1..=lags,
/// for t in `lags..len`.
pub(crate) fn lag_block(series: &[f64], lags: usize) -> DMatrix<f64> {
    let rows = series.len() - lags;
    DMatrix::from_fn(rows, lags, |i, l| series[i + lags - (l + 1)])
}
