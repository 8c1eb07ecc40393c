//! Quarterly macroeconomic panel: CSV ingestion, stationarity transforms,
//! balancing and standardization.
//!
//! Missing observations are stored as `NaN` inside the value matrix and are
//! never confused with zeros; every value that survives balancing is finite.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::{mean, sample_sd};

/// A calendar quarter such as `1959-Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Option<Self> {
        (1..=4).contains(&quarter).then_some(Self { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Consecutive integer index (four per year).
    pub fn index(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_index(index: i64) -> Self {
        Self {
            year: index.div_euclid(4) as i32,
            quarter: (index.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_index(self.index() + quarters)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = String;

    /// Accepts `1959-Q1`, `1959Q1` and `1959:Q1`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let upper = s.to_ascii_uppercase();
        let (year, q) = upper.split_once('Q').ok_or_else(|| "expected YYYY-Qn".to_string())?;
        let year = year.trim_end_matches(['-', ':']);
        let year: i32 = year.parse().map_err(|_| format!("bad year `{year}`"))?;
        let q: u8 = q.parse().map_err(|_| format!("bad quarter `{q}`"))?;
        Quarter::new(year, q).ok_or_else(|| format!("quarter {q} outside 1-4"))
    }
}

impl Serialize for Quarter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Stock-Watson transformation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformCode {
    /// 1: level
    Level,
    /// 2: Δx
    Diff,
    /// 3: Δ²x
    Diff2,
    /// 4: ln x
    Log,
    /// 5: Δ ln x
    LogDiff,
    /// 6: Δ² ln x
    LogDiff2,
    /// 7: Δ(x_t / x_{t-1} − 1)
    PctChangeDiff,
}

impl TransformCode {
    pub fn from_code(code: i64) -> Option<Self> {
        use TransformCode::*;
        Some(match code {
            1 => Level,
            2 => Diff,
            3 => Diff2,
            4 => Log,
            5 => LogDiff,
            6 => LogDiff2,
            7 => PctChangeDiff,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    /// Number of leading observations the transform consumes.
    pub fn order(self) -> usize {
        use TransformCode::*;
        match self {
            Level | Log => 0,
            Diff | LogDiff => 1,
            Diff2 | LogDiff2 | PctChangeDiff => 2,
        }
    }

    pub fn uses_log(self) -> bool {
        matches!(
            self,
            TransformCode::Log | TransformCode::LogDiff | TransformCode::LogDiff2
        )
    }

    /// Transformed series aligned with the input; the first `order()`
    /// entries are `NaN`.
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        use TransformCode::*;
        let diff = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![f64::NAN; v.len()];
            for t in 1..v.len() {
                out[t] = v[t] - v[t - 1];
            }
            out
        };
        let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
        match self {
            Level => x.to_vec(),
            Diff => diff(x),
            Diff2 => diff(&diff(x)),
            Log => ln(x),
            LogDiff => diff(&ln(x)),
            LogDiff2 => diff(&diff(&ln(x))),
            PctChangeDiff => {
                let mut growth = vec![f64::NAN; x.len()];
                for t in 1..x.len() {
                    growth[t] = x[t] / x[t - 1] - 1.0;
                }
                diff(&growth)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub id: String,
    pub group: Option<String>,
    pub transform: TransformCode,
}

/// A T×N quarterly panel. Columns are series, rows are dates.
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel {
    dates: Vec<Quarter>,
    values: DMatrix<f64>,
    metas: Vec<SeriesMeta>,
    standardized: bool,
}

impl TimeSeriesPanel {
    /// Builds a panel after checking ids and the quarterly date grid.
    pub fn new(dates: Vec<Quarter>, values: DMatrix<f64>, metas: Vec<SeriesMeta>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != metas.len() {
            return Err(FavarError::DimensionMismatch(format!(
                "{} dates and {} series for a {}x{} matrix",
                dates.len(),
                metas.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for m in &metas {
            if !seen.insert(m.id.as_str()) {
                return Err(FavarError::DuplicateId(m.id.clone()));
            }
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1].index() != w[0].index() + 1 {
                return Err(FavarError::InvalidDate {
                    value: w[1].to_string(),
                    line: i + 2,
                    reason: format!("does not follow {} by one quarter", w[0]),
                });
            }
        }
        Ok(Self {
            dates,
            values,
            metas,
            standardized: false,
        })
    }

    pub fn dates(&self) -> &[Quarter] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn metas(&self) -> &[SeriesMeta] {
        &self.metas
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.metas.iter().map(|m| m.id.as_str())
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.metas.iter().position(|m| m.id == id)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn is_missing(&self, t: usize, j: usize) -> bool {
        self.values[(t, j)].is_nan()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Rows `start..end` of the panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> TimeSeriesPanel {
        TimeSeriesPanel {
            dates: self.dates[start..end].to_vec(),
            values: self.values.rows(start, end - start).into_owned(),
            metas: self.metas.clone(),
            standardized: false,
        }
    }

    /// Panel restricted to the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> TimeSeriesPanel {
        TimeSeriesPanel {
            dates: self.dates.clone(),
            values: self.values.select_columns(cols),
            metas: cols.iter().map(|&j| self.metas[j].clone()).collect(),
            standardized: self.standardized,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> FavarError {
    FavarError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses the panel CSV layout: `date` header with series ids, a `tcode`
/// row, an optional `group` row, then one row per quarter. Empty cells are
/// missing observations.
pub fn load_panel<R: Read>(source: R) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();

    let header = records.next().ok_or_else(|| parse_err(1, "empty file"))??;
    if !header.get(0).is_some_and(|c| c.eq_ignore_ascii_case("date")) {
        return Err(parse_err(1, "first header cell must be `date`"));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if ids.is_empty() {
        return Err(parse_err(1, "no series columns"));
    }
    let mut seen = HashSet::new();
    for id in &ids {
        if id.is_empty() {
            return Err(parse_err(1, "empty series id"));
        }
        if !seen.insert(id.as_str()) {
            return Err(FavarError::DuplicateId(id.clone()));
        }
    }
    let width = ids.len() + 1;

    let tcode_row = records.next().ok_or_else(|| parse_err(2, "missing tcode row"))??;
    if tcode_row.len() != width {
        return Err(parse_err(
            2,
            format!("expected {width} cells, found {}", tcode_row.len()),
        ));
    }
    if !tcode_row.get(0).is_some_and(|c| c.eq_ignore_ascii_case("tcode")) {
        return Err(parse_err(2, "second row must start with `tcode`"));
    }
    let mut codes = Vec::with_capacity(ids.len());
    for (id, cell) in ids.iter().zip(tcode_row.iter().skip(1)) {
        let code: i64 = cell
            .parse()
            .map_err(|_| parse_err(2, format!("non-integer transform code `{cell}` for `{id}`")))?;
        let tc =
            TransformCode::from_code(code).ok_or_else(|| FavarError::InvalidTransformCode { id: id.clone(), code })?;
        codes.push(tc);
    }

    let mut groups: Option<Vec<String>> = None;
    let mut dates = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (offset, rec) in records.enumerate() {
        let line = offset + 3;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("ragged row: expected {width} cells, found {}", rec.len()),
            ));
        }
        let first = rec.get(0).unwrap_or_default();
        if offset == 0 && first.eq_ignore_ascii_case("group") {
            groups = Some(rec.iter().skip(1).map(str::to_string).collect());
            continue;
        }
        let date: Quarter = first.parse().map_err(|reason| FavarError::InvalidDate {
            value: first.to_string(),
            line,
            reason,
        })?;
        if let Some(prev) = dates.last().copied() {
            let prev: Quarter = prev;
            if date.index() != prev.index() + 1 {
                return Err(FavarError::InvalidDate {
                    value: first.to_string(),
                    line,
                    reason: format!("expected {} after {prev}", prev.succ()),
                });
            }
        }
        dates.push(date);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                data.push(f64::NAN);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell `{cell}` in series `{}`", ids[j])))?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("non-finite cell `{cell}` in series `{}`", ids[j]),
                ));
            }
            data.push(v);
        }
    }
    if dates.is_empty() {
        return Err(parse_err(3, "no data rows"));
    }

    let metas = ids
        .into_iter()
        .zip(codes)
        .enumerate()
        .map(|(j, (id, transform))| SeriesMeta {
            id,
            group: groups.as_ref().map(|g| g[j].clone()).filter(|g| !g.is_empty()),
            transform,
        })
        .collect();
    let values = DMatrix::from_row_slice(dates.len(), width - 1, &data);
    TimeSeriesPanel::new(dates, values, metas)
}

/// Writes `panel` in the layout read by [`load_panel`]. Missing cells are
/// left empty; numbers use the shortest round-trip representation.
pub fn write_panel<W: Write>(panel: &TimeSeriesPanel, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(sink);
    let mut row = vec!["date".to_string()];
    row.extend(panel.metas.iter().map(|m| m.id.clone()));
    w.write_record(&row)?;
    let mut row = vec!["tcode".to_string()];
    row.extend(panel.metas.iter().map(|m| m.transform.code().to_string()));
    w.write_record(&row)?;
    if panel.metas.iter().any(|m| m.group.is_some()) {
        let mut row = vec!["group".to_string()];
        row.extend(panel.metas.iter().map(|m| m.group.clone().unwrap_or_default()));
        w.write_record(&row)?;
    }
    for (t, date) in panel.dates.iter().enumerate() {
        let mut row = vec![date.to_string()];
        row.extend(
            panel
                .values
                .row(t)
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Applies every series' transform code and truncates all series to the
/// common range left after the largest differencing order.
pub fn apply_transforms(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let t = panel.n_obs();
    let max_order = panel.metas.iter().map(|m| m.transform.order()).max().unwrap_or(0);
    let mut columns = Vec::with_capacity(panel.n_series());
    for (j, meta) in panel.metas.iter().enumerate() {
        let code = meta.transform;
        let x = panel.column(j);
        let observed = x.iter().filter(|v| !v.is_nan()).count();
        if t <= code.order() || observed <= code.order() {
            return Err(FavarError::SeriesTooShort {
                id: meta.id.clone(),
                code: code.code(),
                len: observed,
            });
        }
        if code.uses_log() {
            if let Some(&bad) = x.iter().find(|v| !v.is_nan() && **v <= 0.0) {
                return Err(FavarError::NonPositiveLog {
                    id: meta.id.clone(),
                    code: code.code(),
                    value: bad,
                });
            }
        }
        columns.push(code.apply(&x));
    }
    if t <= max_order {
        return Err(FavarError::InsufficientObservations(format!(
            "{t} rows cannot absorb differencing order {max_order}"
        )));
    }
    let rows = t - max_order;
    let values = DMatrix::from_fn(rows, panel.n_series(), |i, j| {
        let v = columns[j][i + max_order];
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    });
    Ok(TimeSeriesPanel {
        dates: panel.dates[max_order..].to_vec(),
        values,
        metas: panel.metas.clone(),
        standardized: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalancePolicy {
    /// Drop every series with a missing value.
    #[default]
    DropSeries,
    /// Keep all series and trim to the longest contiguous block of complete
    /// rows.
    DropRows,
}

/// What balancing removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropLog {
    pub dropped_series: Vec<String>,
    pub dropped_rows: Vec<Quarter>,
}

/// Balances the panel under `policy` and standardizes each column to mean
/// zero and unit sample (n−1) standard deviation.
pub fn standardize_and_balance(panel: &TimeSeriesPanel, policy: BalancePolicy) -> Result<(TimeSeriesPanel, DropLog)> {
    let mut log = DropLog::default();
    let balanced = match policy {
        BalancePolicy::DropSeries => {
            let keep: Vec<usize> = (0..panel.n_series())
                .filter(|&j| {
                    let complete = panel.values.column(j).iter().all(|v| !v.is_nan());
                    if !complete {
                        log.dropped_series.push(panel.metas[j].id.clone());
                    }
                    complete
                })
                .collect();
            panel.select_columns(&keep)
        }
        BalancePolicy::DropRows => {
            let complete: Vec<bool> = (0..panel.n_obs())
                .map(|t| panel.values.row(t).iter().all(|v| !v.is_nan()))
                .collect();
            let (mut best_start, mut best_len) = (0, 0);
            let mut run_start = 0;
            for t in 0..=complete.len() {
                if t == complete.len() || !complete[t] {
                    if t - run_start > best_len {
                        best_start = run_start;
                        best_len = t - run_start;
                    }
                    run_start = t + 1;
                }
            }
            for (t, d) in panel.dates.iter().enumerate() {
                if t < best_start || t >= best_start + best_len {
                    log.dropped_rows.push(*d);
                }
            }
            panel.slice_rows(best_start, best_start + best_len)
        }
    };
    if balanced.n_series() == 0 || balanced.n_obs() < 2 {
        return Err(FavarError::EmptyPanel);
    }

    let mut values = balanced.values.clone();
    for j in 0..values.ncols() {
        let col: Vec<f64> = values.column(j).iter().copied().collect();
        let m = mean(&col);
        let sd = sample_sd(&col);
        if !(sd > 1e-12 * m.abs().max(1.0)) {
            return Err(FavarError::ZeroVariance(balanced.metas[j].id.clone()));
        }
        for (t, v) in col.iter().enumerate() {
            values[(t, j)] = (v - m) / sd;
        }
    }
    Ok((
        TimeSeriesPanel {
            dates: balanced.dates,
            values,
            metas: balanced.metas,
            standardized: true,
        },
        log,
    ))
}
