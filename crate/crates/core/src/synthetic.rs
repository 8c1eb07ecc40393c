//! Simulators for known data-generating processes: approximate factor
//! panels, Gaussian VARs, and a small quarterly macro panel with narrative
//! tax events used as the bundled fixture.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FavarError, Result};
use crate::narrative::{compute_narrative_rates, NarrativeEvent, TaxType};
use crate::panel::{Quarter, SeriesMeta, TimeSeriesPanel, TransformCode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Simulates `t` rows of `y_t = c + Σ A_j y_{t−j} + L e_t` after discarding
/// `burn_in` rows started from zero.
pub fn simulate_var<R: Rng + ?Sized>(
    intercept: &DVector<f64>,
    coeffs: &[DMatrix<f64>],
    chol: &DMatrix<f64>,
    t: usize,
    burn_in: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = intercept.len();
    let p = coeffs.len();
    let total = t + burn_in + p;
    let mut y = DMatrix::zeros(total, n);
    for tt in p..total {
        let e = DVector::from_fn(n, |_, _| normal(rng));
        let mut row = intercept + chol * e;
        for (j, a) in coeffs.iter().enumerate() {
            row += a * y.row(tt - j - 1).transpose();
        }
        y.set_row(tt, &row.transpose());
    }
    y.rows(burn_in + p, t).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanelSpec {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub noise_sd: f64,
    /// r×r factor transition; factors have unit-variance innovations.
    pub transition: DMatrix<f64>,
    /// Rescale each series' loadings so its common component has unit
    /// population variance, making the noise share equal across series.
    pub unit_common_variance: bool,
}

impl FactorPanelSpec {
    /// Independent AR(1) factors with common coefficient `rho`.
    pub fn ar1(n: usize, t: usize, r: usize, noise_sd: f64, rho: f64) -> Self {
        Self {
            n,
            t,
            r,
            noise_sd,
            transition: DMatrix::identity(r, r) * rho,
            unit_common_variance: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedFactorPanel {
    /// T×N observations.
    pub x: DMatrix<f64>,
    /// T×r true factors.
    pub factors: DMatrix<f64>,
    /// N×r true loadings.
    pub loadings: DMatrix<f64>,
}

/// `x = F Λ' + e` with standard normal loadings and iid N(0, noise_sd²)
/// idiosyncratic errors.
pub fn simulate_factor_panel(spec: &FactorPanelSpec, seed: u64) -> SimulatedFactorPanel {
    let mut rng = rng(seed);
    let factors = simulate_var(
        &DVector::zeros(spec.r),
        std::slice::from_ref(&spec.transition),
        &DMatrix::identity(spec.r, spec.r),
        spec.t,
        100,
        &mut rng,
    );
    let mut loadings = normal_matrix(spec.n, spec.r, &mut rng);
    if spec.unit_common_variance {
        let cov = stationary_covariance(&spec.transition);
        for mut row in loadings.row_iter_mut() {
            let var = (&row * &cov * row.transpose())[(0, 0)];
            row /= var.sqrt();
        }
    }
    let noise = normal_matrix(spec.t, spec.n, &mut rng) * spec.noise_sd;
    let x = &factors * loadings.transpose() + noise;
    SimulatedFactorPanel { x, factors, loadings }
}

/// Solves `Σ = Φ Σ Φ' + I` by fixed-point iteration (Φ stable).
pub fn stationary_covariance(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let r = phi.nrows();
    let mut sigma = DMatrix::identity(r, r);
    for _ in 0..10_000 {
        let next = phi * &sigma * phi.transpose() + DMatrix::identity(r, r);
        let done = (&next - &sigma).amax() < 1e-14 * next.amax();
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

/// Wraps a T×N matrix as a panel of level series `x1..xN` starting at
/// `start`.
pub fn panel_from_matrix(x: &DMatrix<f64>, start: Quarter) -> Result<TimeSeriesPanel> {
    let dates = (0..x.nrows()).map(|i| start.offset(i as i64)).collect();
    let metas = (0..x.ncols())
        .map(|j| SeriesMeta {
            id: format!("x{}", j + 1),
            group: None,
            transform: TransformCode::Level,
        })
        .collect();
    TimeSeriesPanel::new(dates, x.clone(), metas)
}

/// A raw-level panel plus narrative events and federal average marginal tax
/// rates.
#[derive(Debug, Clone)]
pub struct FixtureData {
    pub panel: TimeSeriesPanel,
    pub events: Vec<NarrativeEvent>,
    /// (quarter, PIT rate, CIT rate) on the panel grid.
    pub federal_rates: Vec<(Quarter, f64, f64)>,
}

pub const FIXTURE_START: (i32, u8) = (1959, 1);
pub const FIXTURE_QUARTERS: usize = 240;
pub const FIXTURE_OBSERVABLES: [&str; 6] = ["GDP", "PCE", "INV", "UNEMP", "DPI", "CPI"];

struct FixtureSeries {
    id: &'static str,
    group: &'static str,
    code: TransformCode,
    mean: f64,
    /// Loadings on (activity, prices, finance, other).
    loads: [f64; 4],
    noise: f64,
}

const fn series(
    id: &'static str,
    group: &'static str,
    code: TransformCode,
    mean: f64,
    loads: [f64; 4],
    noise: f64,
) -> FixtureSeries {
    FixtureSeries {
        id,
        group,
        code,
        mean,
        loads,
        noise,
    }
}

const FIXTURE_SERIES: [FixtureSeries; 12] = [
    series(
        "GDP",
        "output",
        TransformCode::LogDiff,
        0.0075,
        [0.006, 0.001, 0.0, 0.0],
        0.002,
    ),
    series(
        "PCE",
        "consumption",
        TransformCode::LogDiff,
        0.008,
        [0.005, 0.0, 0.0005, 0.0],
        0.002,
    ),
    series(
        "INV",
        "investment",
        TransformCode::LogDiff,
        0.010,
        [0.03, 0.0, 0.01, 0.0],
        0.01,
    ),
    series(
        "UNEMP",
        "labor",
        TransformCode::Diff,
        0.0,
        [-0.15, 0.0, 0.0, 0.05],
        0.08,
    ),
    series(
        "DPI",
        "income",
        TransformCode::LogDiff,
        0.008,
        [0.004, 0.0005, 0.0, 0.0],
        0.003,
    ),
    series(
        "CPI",
        "prices",
        TransformCode::LogDiff,
        0.009,
        [0.0, 0.003, 0.0, 0.0],
        0.0015,
    ),
    series(
        "IP",
        "output",
        TransformCode::LogDiff,
        0.008,
        [0.01, 0.0, 0.003, 0.0],
        0.004,
    ),
    series(
        "EMP",
        "labor",
        TransformCode::LogDiff,
        0.004,
        [0.003, 0.0, 0.0, 0.001],
        0.0015,
    ),
    series(
        "GOV",
        "spending",
        TransformCode::LogDiff,
        0.005,
        [0.0, 0.0, 0.0, 0.004],
        0.004,
    ),
    series("FFR", "finance", TransformCode::Diff, 0.0, [0.05, 0.1, 0.1, 0.0], 0.2),
    series(
        "SP500",
        "finance",
        TransformCode::LogDiff,
        0.015,
        [0.01, 0.0, 0.03, 0.0],
        0.03,
    ),
    series(
        "HOURS",
        "labor",
        TransformCode::LogDiff,
        0.002,
        [0.003, 0.0, 0.0, 0.002],
        0.002,
    ),
];

/// Narrative events: sparse PIT and CIT liability changes on growing tax
/// bases, about one in ten flagged as endogenous.
pub fn fixture_events(seed: u64) -> Vec<NarrativeEvent> {
    let mut rng = rng(seed ^ 0x5eed_0001);
    let start = Quarter::new(FIXTURE_START.0, FIXTURE_START.1).expect("valid start");
    let mut events = Vec::new();
    for i in 0..FIXTURE_QUARTERS {
        let quarter = start.offset(i as i64);
        let growth = (0.015 * i as f64).exp();
        for (tax, prob, base, sd) in [(TaxType::Pit, 0.12, 300.0, 0.004), (TaxType::Cit, 0.08, 50.0, 0.02)] {
            if rng.random::<f64>() >= prob {
                continue;
            }
            let base_prev = (base * growth * 10.0).round() / 10.0;
            let liability_change = (normal(&mut rng) * sd * base_prev * 100.0).round() / 100.0;
            let exogenous = rng.random::<f64>() >= 0.1;
            events.push(NarrativeEvent {
                quarter,
                tax_type: tax,
                liability_change,
                base_prev,
                act_label: format!("{} act {}-Q{}", tax, quarter.year(), quarter.quarter()),
                exogenous,
            });
        }
    }
    events
}

/// The bundled fixture: twelve quarterly series over 1959-Q1..2018-Q4 in
/// raw levels, driven by four latent states that respond to the exogenous
/// narrative tax rates (a cut raises activity and prices).
pub fn fixture_dataset(seed: u64) -> Result<FixtureData> {
    let events = fixture_events(seed);
    let start = Quarter::new(FIXTURE_START.0, FIXTURE_START.1).expect("valid start");
    let grid: Vec<Quarter> = (0..FIXTURE_QUARTERS).map(|i| start.offset(i as i64)).collect();
    let rates = compute_narrative_rates(&events, &grid, true)?;

    let mut rng = rng(seed);
    let t = FIXTURE_QUARTERS;
    let mut states = DMatrix::<f64>::zeros(t, 4);
    let mut prev = [0.0; 4];
    // Slow-moving components of activity and prices, so the factors carry
    // low-frequency movements as real macro panels do.
    let mut slow = [0.0; 4];
    for i in 0..t {
        let (pit, cit) = (rates.pit_rate[i], rates.cit_rate[i]);
        let e: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
        for (k, s) in slow.iter_mut().enumerate() {
            *s = 0.97 * *s + 0.2 * e[4 + k];
        }
        let a = 0.5 * prev[0] + 0.6 * e[0] + slow[0] - 4.0 * pit - 0.8 * cit;
        let p = 0.6 * prev[1] + 0.3 * prev[0] + 0.4 * e[0] + 0.5 * e[1] + slow[1] - 1.5 * pit - 0.3 * cit;
        let f = 0.4 * prev[2] + 0.8 * e[2] + slow[2];
        let g = 0.3 * prev[3] + 0.8 * e[3] + slow[3];
        prev = [a, p, f, g];
        states.set_row(i, &nalgebra::RowDVector::from_row_slice(&prev));
    }

    let n = FIXTURE_SERIES.len();
    let mut values = DMatrix::zeros(t, n);
    for (j, s) in FIXTURE_SERIES.iter().enumerate() {
        let mut level = match s.code {
            TransformCode::Diff if s.id == "FFR" => 8.0,
            TransformCode::Diff => 6.0,
            _ => 100.0,
        };
        let anchor = level;
        for i in 0..t {
            let signal: f64 = (0..4).map(|k| s.loads[k] * states[(i, k)]).sum();
            let step = s.mean + signal + s.noise * normal(&mut rng);
            level = match s.code {
                TransformCode::LogDiff => level * step.exp(),
                _ => anchor + 0.9 * (level - anchor) + step,
            };
            values[(i, j)] = (level * 1e6).round() / 1e6;
        }
    }
    let metas = FIXTURE_SERIES
        .iter()
        .map(|s| SeriesMeta {
            id: s.id.to_string(),
            group: Some(s.group.to_string()),
            transform: s.code,
        })
        .collect();
    // Federal rates drift slowly and lean against lagged activity, so unlike
    // the narrative rates they are predictable from the panel.
    let mut frng = self::rng(seed ^ 0x5eed_0002);
    let (mut fp, mut fc) = (0.56, 0.42);
    let mut federal_rates = Vec::with_capacity(t);
    for i in 0..t {
        let lagged = if i == 0 { 0.0 } else { states[(i - 1, 0)] };
        fp = 0.56 + 0.95 * (fp - 0.56) + 0.004 * lagged + 0.006 * normal(&mut frng);
        fc = 0.42 + 0.95 * (fc - 0.42) + 0.003 * lagged + 0.004 * normal(&mut frng);
        fp = fp.clamp(0.2, 0.95);
        fc = fc.clamp(0.15, 0.6);
        federal_rates.push((grid[i], (fp * 1e4).round() / 1e4, (fc * 1e4).round() / 1e4));
    }
    let panel = TimeSeriesPanel::new(grid, values, metas)?;
    for (j, meta) in panel.metas().iter().enumerate() {
        if panel.values().column(j).iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(FavarError::InvalidArgument(format!(
                "fixture series `{}` left the positive range",
                meta.id
            )));
        }
    }
    Ok(FixtureData {
        panel,
        events,
        federal_rates,
    })
}
