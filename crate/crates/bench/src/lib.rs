//! Inputs shared by the benchmarks.

use favar_core::panel::{standardize_and_balance, BalancePolicy, Quarter, TimeSeriesPanel};
use favar_core::synthetic::{panel_from_matrix, rng, simulate_factor_panel, simulate_var, FactorPanelSpec};
use favar_core::var::{fit_var, VarModel};
use nalgebra::{DMatrix, DVector};

/// A standardized N×T panel driven by `r` AR(1) factors.
pub fn factor_panel(n: usize, t: usize, r: usize, seed: u64) -> TimeSeriesPanel {
    let sim = simulate_factor_panel(&FactorPanelSpec::ar1(n, t, r, 0.5, 0.5), seed);
    let raw = panel_from_matrix(&sim.x, Quarter::new(1960, 1).expect("valid quarter")).expect("finite panel");
    standardize_and_balance(&raw, BalancePolicy::DropSeries)
        .expect("balanced panel")
        .0
}

/// A persistent univariate series of length `t`, shaped like a factor.
pub fn factor_series(t: usize, seed: u64) -> Vec<f64> {
    let a = DMatrix::from_element(1, 1, 0.9);
    let y = simulate_var(
        &DVector::zeros(1),
        &[a],
        &DMatrix::identity(1, 1),
        t,
        100,
        &mut rng(seed),
    );
    y.column(0).iter().copied().collect()
}

/// Simulated data from a stable n-variable VAR(p) and the model fitted to it.
pub fn var_system(n: usize, p: usize, t: usize, seed: u64) -> (DMatrix<f64>, VarModel) {
    let coeffs: Vec<DMatrix<f64>> = (0..p)
        .map(|lag| {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.4 / ((lag + 1) * (lag + 1)) as f64
                } else {
                    0.01
                }
            })
        })
        .collect();
    let y = simulate_var(
        &DVector::zeros(n),
        &coeffs,
        &DMatrix::identity(n, n),
        t,
        100,
        &mut rng(seed),
    );
    let ids = (0..n).map(|i| format!("y{i}")).collect();
    let model = fit_var(&y, p, ids).expect("full-rank VAR");
    (y, model)
}
