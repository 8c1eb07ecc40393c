//! Narrative tax-rate series built from legislated liability changes, and
//! Granger-causality tests of their exogeneity.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{FavarError, Result};
use crate::linalg::{lag_block, lstsq, ols};
use crate::panel::Quarter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaxType {
    #[serde(rename = "PIT")]
    Pit,
    #[serde(rename = "CIT")]
    Cit,
}

impl fmt::Display for TaxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaxType::Pit => "PIT",
            TaxType::Cit => "CIT",
        })
    }
}

impl FromStr for TaxType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PIT" => Ok(TaxType::Pit),
            "CIT" => Ok(TaxType::Cit),
            other => Err(format!("unknown tax type `{other}` (expected PIT or CIT)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeEvent {
    pub quarter: Quarter,
    pub tax_type: TaxType,
    /// Signed liability change, billions.
    pub liability_change: f64,
    /// Previous-quarter tax base (personal taxable income or corporate
    /// profits), billions.
    pub base_prev: f64,
    pub act_label: String,
    pub exogenous: bool,
}

impl NarrativeEvent {
    /// The event's rate contribution in percent.
    pub fn rate(&self) -> f64 {
        100.0 * self.liability_change / self.base_prev
    }
}

/// Narrative rates in percent on a quarterly grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeTaxSeries {
    pub dates: Vec<Quarter>,
    pub pit_rate: Vec<f64>,
    pub cit_rate: Vec<f64>,
}

impl NarrativeTaxSeries {
    pub fn rate(&self, tax: TaxType) -> &[f64] {
        match tax {
            TaxType::Pit => &self.pit_rate,
            TaxType::Cit => &self.cit_rate,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some(true),
        "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads the events CSV
/// (`quarter,tax_type,liability_change,base_prev,act_label,exogenous`).
pub fn load_events<R: Read>(source: R) -> Result<Vec<NarrativeEvent>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let expected = [
        "quarter",
        "tax_type",
        "liability_change",
        "base_prev",
        "act_label",
        "exogenous",
    ];
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| FavarError::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let idx: Vec<usize> = expected.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut events = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let cell = |k: usize| rec.get(idx[k]).unwrap_or_default();
        let bad = |what: &str, v: &str| FavarError::Parse {
            line,
            message: format!("invalid {what} `{v}`"),
        };
        let quarter: Quarter = cell(0).parse().map_err(|reason| FavarError::InvalidDate {
            value: cell(0).to_string(),
            line,
            reason,
        })?;
        let tax_type: TaxType = cell(1).parse().map_err(|_| bad("tax_type", cell(1)))?;
        let liability_change: f64 = cell(2).parse().map_err(|_| bad("liability_change", cell(2)))?;
        let base_prev: f64 = cell(3).parse().map_err(|_| bad("base_prev", cell(3)))?;
        let exogenous = parse_bool(cell(5)).ok_or_else(|| bad("exogenous flag", cell(5)))?;
        events.push(NarrativeEvent {
            quarter,
            tax_type,
            liability_change,
            base_prev,
            act_label: cell(4).to_string(),
            exogenous,
        });
    }
    Ok(events)
}

/// Writes events in the layout read by [`load_events`].
pub fn write_events<W: Write>(events: &[NarrativeEvent], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "quarter",
        "tax_type",
        "liability_change",
        "base_prev",
        "act_label",
        "exogenous",
    ])?;
    for e in events {
        w.write_record([
            e.quarter.to_string(),
            e.tax_type.to_string(),
            e.liability_change.to_string(),
            e.base_prev.to_string(),
            e.act_label.clone(),
            e.exogenous.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Places each event's rate `100 · ΔT / base_{t−1}` on the grid, summing
/// same-type events that share a quarter. With `exogenous_only`, events
/// flagged endogenous are skipped.
pub fn compute_narrative_rates(
    events: &[NarrativeEvent],
    grid: &[Quarter],
    exogenous_only: bool,
) -> Result<NarrativeTaxSeries> {
    let mut pit = vec![0.0; grid.len()];
    let mut cit = vec![0.0; grid.len()];
    let start = grid.first().map(|q| q.index());
    for ev in events {
        if !(ev.base_prev > 0.0) {
            return Err(FavarError::NonPositiveBase {
                label: ev.act_label.clone(),
                base: ev.base_prev,
            });
        }
        let pos = start
            .map(|s| ev.quarter.index() - s)
            .filter(|&p| p >= 0 && (p as usize) < grid.len())
            .ok_or_else(|| FavarError::EventOutsideGrid {
                label: ev.act_label.clone(),
                quarter: ev.quarter,
            })? as usize;
        if exogenous_only && !ev.exogenous {
            continue;
        }
        match ev.tax_type {
            TaxType::Pit => pit[pos] += ev.rate(),
            TaxType::Cit => cit[pos] += ev.rate(),
        }
    }
    Ok(NarrativeTaxSeries {
        dates: grid.to_vec(),
        pit_rate: pit,
        cit_rate: cit,
    })
}

/// Splits a combined liability change by revenue shares; returns the
/// (PIT, CIT) parts. The PIT share is truncated to a whole percent.
pub fn split_by_revenue_share(total: f64, pit_revenue: f64, cit_revenue: f64) -> (f64, f64) {
    let share = (pit_revenue / (pit_revenue + cit_revenue) * 100.0).floor() / 100.0;
    (share * total, (1.0 - share) * total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrangerOptions {
    /// Add quarter-of-year dummies to both regressions; the value is the
    /// quarter of the first observation.
    pub quarter_dummies_from: Option<Quarter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub predictor_id: String,
    pub lags: usize,
    pub f_stat: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub ssr_restricted: f64,
    pub ssr_unrestricted: f64,
}

/// Tests whether lags of `predictor` help predict `tax` beyond the tax
/// series' own lags (intercept included in both regressions).
pub fn granger_exogeneity_test(
    tax: &[f64],
    predictor: &[f64],
    predictor_id: &str,
    lags: usize,
) -> Result<GrangerResult> {
    granger_exogeneity_test_with(tax, predictor, predictor_id, lags, GrangerOptions::default())
}

pub fn granger_exogeneity_test_with(
    tax: &[f64],
    predictor: &[f64],
    predictor_id: &str,
    lags: usize,
    opts: GrangerOptions,
) -> Result<GrangerResult> {
    if lags == 0 {
        return Err(FavarError::InvalidArgument("Granger test needs lags >= 1".into()));
    }
    if tax.len() != predictor.len() {
        return Err(FavarError::DimensionMismatch(format!(
            "tax has {} observations, predictor {}",
            tax.len(),
            predictor.len()
        )));
    }
    let t = tax.len();
    if t <= 2 * lags + 2 {
        return Err(FavarError::InsufficientObservations(format!(
            "Granger test with {lags} lags needs more than {} observations, got {t}",
            2 * lags + 2
        )));
    }
    if let Some(pos) = tax.iter().chain(predictor).position(|v| !v.is_finite()) {
        return Err(FavarError::NonFinite(pos % t));
    }
    let rows = t - lags;
    let dummies = if opts.quarter_dummies_from.is_some() { 3 } else { 0 };
    let k_r = 1 + dummies + lags;
    let k_u = k_r + lags;
    if rows <= k_u {
        return Err(FavarError::InsufficientObservations(format!(
            "{rows} usable rows for {k_u} regressors"
        )));
    }

    let own = lag_block(tax, lags);
    let other = lag_block(predictor, lags);
    let mut xr = DMatrix::zeros(rows, k_r);
    for i in 0..rows {
        xr[(i, 0)] = 1.0;
        if let Some(q0) = opts.quarter_dummies_from {
            let q = q0.offset((i + lags) as i64).quarter() as usize;
            if q > 1 {
                xr[(i, q - 1)] = 1.0;
            }
        }
    }
    xr.view_mut((0, 1 + dummies), (rows, lags)).copy_from(&own);
    let mut xu = DMatrix::zeros(rows, k_u);
    xu.view_mut((0, 0), (rows, k_r)).copy_from(&xr);
    xu.view_mut((0, k_r), (rows, lags)).copy_from(&other);
    let y = DMatrix::from_fn(rows, 1, |i, _| tax[i + lags]);

    let restricted = ols(&xr, &y, "Granger restricted regression")?;
    // Predictor lags that duplicate existing regressors add nothing; the
    // pseudo-inverse fit returns SSR_u = SSR_r in that case.
    let unrestricted = lstsq(&xu, &y)?;
    let ssr_r = restricted.ssr(0);
    let ssr_u = unrestricted.ssr(0).min(ssr_r);
    let df_num = lags;
    let df_den = rows - k_u;
    if !(ssr_u > 0.0) {
        return Err(FavarError::RankDeficient {
            context: format!("Granger test on `{predictor_id}`: unrestricted model fits exactly"),
            rank: unrestricted.rank,
            cols: k_u,
        });
    }
    let f_stat = ((ssr_r - ssr_u) / df_num as f64) / (ssr_u / df_den as f64);
    let dist = FisherSnedecor::new(df_num as f64, df_den as f64).expect("positive dof");
    let p_value = if f_stat == 0.0 {
        1.0
    } else {
        dist.sf(f_stat).clamp(0.0, 1.0)
    };
    Ok(GrangerResult {
        predictor_id: predictor_id.to_string(),
        lags,
        f_stat,
        p_value,
        df_num,
        df_den,
        ssr_restricted: ssr_r,
        ssr_unrestricted: ssr_u,
    })
}

/// One cell of a Granger battery.
#[derive(Debug)]
pub struct GrangerCell {
    pub tax_id: String,
    pub predictor_id: String,
    pub lags: usize,
    pub result: Result<GrangerResult>,
}

/// Runs every (tax series × predictor × lag length) combination. Output
/// order is tax-major, then predictor, then lag, independent of threading.
pub fn granger_battery(
    taxes: &[(String, Vec<f64>)],
    predictors: &[(String, Vec<f64>)],
    lags: &[usize],
    opts: GrangerOptions,
) -> Vec<GrangerCell> {
    let jobs: Vec<(usize, usize, usize)> = (0..taxes.len())
        .flat_map(|a| (0..predictors.len()).flat_map(move |b| lags.iter().map(move |&l| (a, b, l))))
        .collect();
    jobs.par_iter()
        .map(|&(a, b, l)| GrangerCell {
            tax_id: taxes[a].0.clone(),
            predictor_id: predictors[b].0.clone(),
            lags: l,
            result: granger_exogeneity_test_with(&taxes[a].1, &predictors[b].1, &predictors[b].0, l, opts),
        })
        .collect()
}
