#![allow(dead_code)]

use favar_core::panel::{standardize_and_balance, BalancePolicy, Quarter, TimeSeriesPanel};
use favar_core::synthetic::panel_from_matrix;
use nalgebra::DMatrix;

pub fn standardized(x: &DMatrix<f64>) -> TimeSeriesPanel {
    let raw = panel_from_matrix(x, Quarter::new(1960, 1).unwrap()).unwrap();
    standardize_and_balance(&raw, BalancePolicy::DropSeries).unwrap().0
}

/// Share of the variation in `truth` explained by a least-squares
/// projection on `estimate`: tr(F'P F) / tr(F'F).
pub fn trace_r2(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let f = center(truth);
    let g = center(estimate);
    let gtg = g.transpose() * &g;
    let coef = gtg.lu().solve(&(g.transpose() * &f)).unwrap();
    let fitted = &g * coef;
    (f.transpose() * fitted).trace() / (f.transpose() * &f).trace()
}

pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}
