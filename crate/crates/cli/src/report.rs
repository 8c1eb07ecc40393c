//! Markdown summary rebuilt from a run's manifest and artifacts.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::TAX_IDS;
use crate::error::{CliError, Stage};
use crate::manifest::{Manifest, StageStatus};
use crate::output::Table;

/// Builds the report text. Sections whose artifacts are missing say which
/// stage did not complete instead of failing the whole report.
pub fn emit_report(manifest: &Manifest, dir: &Path) -> Result<String, CliError> {
    if manifest.stages.is_empty() {
        return Err(CliError::stage(Stage::Report, "manifest lists no stages"));
    }
    let mut r = Report {
        manifest,
        dir,
        text: String::new(),
    };
    r.header();
    r.granger();
    r.information_criteria();
    r.importance();
    r.trend_cycle();
    r.restrictions();
    r.identification();
    r.cumulative();
    for tax in TAX_IDS {
        r.fevd(tax);
    }
    r.reliability();
    r.shock_correlations();
    r.figure_data();
    Ok(r.text)
}

struct Report<'a> {
    manifest: &'a Manifest,
    dir: &'a Path,
    text: String,
}

impl Report<'_> {
    fn line(&mut self, s: &str) {
        self.text.push_str(s);
        self.text.push('\n');
    }

    fn section(&mut self, title: &str) {
        let _ = write!(self.text, "\n## {title}\n\n");
    }

    /// Loads an artifact or writes a placeholder naming the stage.
    fn load(&mut self, stage: Stage, file: &str) -> Option<Table> {
        let status = self.manifest.status(stage);
        let listed = self
            .manifest
            .record(stage)
            .is_some_and(|r| r.outputs.iter().any(|o| o == file));
        if status == StageStatus::Skipped {
            let note = self
                .manifest
                .record(stage)
                .and_then(|r| r.notes.first().cloned())
                .unwrap_or_default();
            self.line(&format!("_Not applicable: stage `{stage}` was skipped. {note}_"));
            return None;
        }
        if !listed {
            let why = match status {
                StageStatus::Failed => "failed",
                StageStatus::NotRun => "did not run",
                _ => "wrote no such file",
            };
            self.line(&format!("_Not available: stage `{stage}` {why}._"));
            return None;
        }
        match Table::read(&self.dir.join(file)) {
            Ok(t) => Some(t),
            Err(e) => {
                self.line(&format!("_Not available: {e}._"));
                None
            }
        }
    }

    fn header(&mut self) {
        let m = self.manifest;
        self.line("# FAVAR run report");
        self.line("");
        self.line(&format!("- Tool: {} {} (core {})", m.tool, m.version, m.core_version));
        self.line(&format!("- Seed: {}", m.seed));
        self.line(&format!("- Config hash (SHA-256): {}", m.config_hash));
        for input in &m.inputs {
            self.line(&format!(
                "- Input {}: {} (SHA-256 {})",
                input.role, input.path, input.sha256
            ));
        }
        match (&m.failed_stage, &m.error) {
            (Some(stage), Some(e)) => {
                self.line(&format!("- Status: **failed at stage `{stage}`**"));
                self.line("");
                self.line(&format!("> {e}"));
            }
            (None, Some(e)) => {
                self.line("- Status: **failed**");
                self.line("");
                self.line(&format!("> {e}"));
            }
            _ => self.line("- Status: completed"),
        }
        self.section("Stages");
        let rows: Vec<Vec<String>> = m
            .stages
            .iter()
            .filter(|s| s.stage != Stage::Report)
            .map(|s| vec![s.stage.to_string(), status_name(s.status).to_string()])
            .collect();
        self.table(&["Stage", "Status"], &rows);
    }

    fn table(&mut self, header: &[&str], rows: &[Vec<String>]) {
        let _ = writeln!(self.text, "| {} |", header.join(" | "));
        let _ = writeln!(
            self.text,
            "|{}|",
            header.iter().map(|_| "---").collect::<Vec<_>>().join("|")
        );
        for row in rows {
            let _ = writeln!(self.text, "| {} |", row.join(" | "));
        }
    }

    fn granger(&mut self) {
        self.section("Granger causality tests");
        let Some(t) = self.load(Stage::Granger, "granger_table.csv") else {
            return;
        };
        let lag = self.manifest.config.narrative.table_lag;
        self.line(&format!(
            "F statistics for lags of each variable in the tax-rate equation ({lag} lags), p-values in parentheses. \
             *, **, *** mark rejection at 10%, 5%, 1%."
        ));
        self.line("");
        let mut header: Vec<String> = vec!["Variable".into()];
        header.extend(t.header[1..].iter().map(|h| h.to_string()));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.table(&header, &t.rows);
    }

    fn information_criteria(&mut self) {
        self.section("Number of factors");
        let Some(t) = self.load(Stage::Factors, "ic_table.csv") else {
            return;
        };
        let (c1, c2, s1, s2) = (
            t.col("icr1"),
            t.col("icr2"),
            t.col("selected_icr1"),
            t.col("selected_icr2"),
        );
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|row| {
                let mark = |v: Option<usize>, s: Option<usize>| {
                    let x = fmt(&row[v.unwrap_or(0)], 4);
                    if s.is_some_and(|s| row[s] == "1") {
                        format!("{x} (min)")
                    } else {
                        x
                    }
                };
                vec![row[0].clone(), mark(c1, s1), mark(c2, s2)]
            })
            .collect();
        self.table(&["r", "ICR1", "ICR2"], &rows);
        if let Some(f) = self.load_quiet(Stage::Factors, "factors.csv") {
            self.line("");
            self.line(&format!("Factors used in the VAR: {}", f.header.len() - 1));
        }
    }

    fn load_quiet(&self, stage: Stage, file: &str) -> Option<Table> {
        let listed = self
            .manifest
            .record(stage)
            .is_some_and(|r| r.outputs.iter().any(|o| o == file));
        if listed {
            Table::read(&self.dir.join(file)).ok()
        } else {
            None
        }
    }

    fn importance(&mut self) {
        self.section("Importance of principal components");
        let Some(t) = self.load(Stage::Factors, "pc_importance.csv") else {
            return;
        };
        let mut header = vec![String::new()];
        header.extend(t.rows.iter().map(|r| r[0].clone()));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let row = |label: &str, col: &str, digits: usize| {
            let c = t.col(col).unwrap_or(0);
            let mut out = vec![label.to_string()];
            out.extend(t.rows.iter().map(|r| fmt(&r[c], digits)));
            out
        };
        let rows = vec![
            row("Std dev (sqrt eigenvalue)", "std_dev", 3),
            row("Proportion of variance", "proportion", 3),
            row("Cumulative proportion", "cumulative", 3),
        ];
        self.table(&header, &rows);
    }

    fn trend_cycle(&mut self) {
        self.section("Trend-cycle model estimates");
        let Some(summary) = self.load(Stage::Smooth, "smoothing_summary.csv") else {
            return;
        };
        let Some(lr) = self.load(Stage::Smooth, "lr_test.csv") else {
            return;
        };
        self.line("Maximum likelihood estimates with sigma_cycle normalized to 1; standard errors in parentheses.");
        let col = |name: &str| summary.col(name).unwrap_or(0);
        let (cf, cm, cc, co, cse, cl) = (
            col("factor"),
            col("model"),
            col("sigma_cycle"),
            col("sigma_omega"),
            col("sigma_omega_se"),
            col("loglik"),
        );
        for lrow in &lr.rows {
            let factor = &lrow[0];
            let pick = |model: &str| summary.rows.iter().find(|r| &r[cf] == factor && r[cm] == model);
            let (Some(u), Some(c)) = (pick("unconstrained"), pick("constrained")) else {
                continue;
            };
            let _ = write!(self.text, "\n### {factor}\n\n");
            let se = if u[cse].is_empty() {
                String::new()
            } else {
                format!(" ({})", fmt(&u[cse], 3))
            };
            let rows = vec![
                vec!["sigma_cycle".into(), fmt(&u[cc], 3), fmt(&c[cc], 3)],
                vec!["sigma_omega".into(), format!("{}{se}", fmt(&u[co], 3)), fmt(&c[co], 3)],
                vec!["ln L (per observation)".into(), fmt(&u[cl], 3), fmt(&c[cl], 3)],
            ];
            self.table(&["Parameter", "Unconstrained", "Fully constrained"], &rows);
            self.line("");
            self.line(&format!(
                "LR test statistic: {} ({}), dof {}",
                fmt(&lrow[1], 2),
                fmt(&lrow[3], 3),
                lrow[2]
            ));
        }
    }

    fn restrictions(&mut self) {
        self.section("Sign restrictions");
        let mut rows = Vec::new();
        let mut header: Vec<String> = vec!["Tax shock".into()];
        for tax in TAX_IDS {
            let file = format!("impulse_{}.csv", tax.to_lowercase());
            if let Some(t) = self.load_quiet(Stage::Identify, &file) {
                if header.len() == 1 {
                    header.extend(t.rows.iter().map(|r| r[0].clone()));
                }
                let mut row = vec![tax.to_string()];
                row.extend(
                    t.rows
                        .iter()
                        .map(|r| if r[1] == "0" { "free".into() } else { r[1].clone() }),
                );
                rows.push(row);
            }
        }
        if rows.is_empty() {
            self.load(Stage::Identify, "identification_summary.csv");
            return;
        }
        self.line("Signs of the responses to a tax cut at horizons 0..K; free variables are unrestricted.");
        self.line("");
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.table(&header, &rows);
    }

    fn identification(&mut self) {
        self.section("Identification");
        let Some(t) = self.load(Stage::Identify, "identification_summary.csv") else {
            return;
        };
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| {
                vec![
                    r[0].clone(),
                    r[1].clone(),
                    r[2].clone(),
                    r[3].clone(),
                    fmt(&r[4], 4),
                    r[5].clone(),
                    fmt(&r[7], 3),
                    fmt(&r[8], 3),
                ]
            })
            .collect();
        self.table(
            &[
                "Shock",
                "Mode",
                "Attempted",
                "Accepted",
                "Acceptance rate",
                "Benchmark draw",
                "Benchmark penalty",
                "Median-Target gap",
            ],
            &rows,
        );
    }

    fn cumulative(&mut self) {
        self.section("Cumulative responses");
        let Some(t) = self.load(Stage::Irf, "cumulative_irf.csv") else {
            return;
        };
        let cfg = &self.manifest.config.analysis;
        let from = if cfg.include_impact { 0 } else { 1 };
        self.line(&format!(
            "Sum of the median responses over horizons {from}..h to a one standard deviation tax cut. \
             Log-differenced series are in percent."
        ));
        self.line("");
        let horizons = &cfg.cumulative_horizons;
        let mut header = vec!["Variable".to_string()];
        for tax in TAX_IDS {
            header.extend(horizons.iter().map(|h| format!("{tax} h={h}")));
        }
        let mut vars: Vec<String> = Vec::new();
        for row in &t.rows {
            if !vars.contains(&row[0]) {
                vars.push(row[0].clone());
            }
        }
        let rows: Vec<Vec<String>> = vars
            .iter()
            .map(|v| {
                let mut out = vec![v.clone()];
                for tax in TAX_IDS {
                    for h in horizons {
                        let h = h.to_string();
                        let cell = t.rows.iter().find(|r| &r[0] == v && r[1] == tax && r[2] == h);
                        out.push(cell.map(|r| fmt(&r[3], 2)).unwrap_or_else(|| "n/a".into()));
                    }
                }
                out
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.table(&header, &rows);
    }

    fn fevd(&mut self, tax: &str) {
        self.section(&format!("Forecast error variance decomposition: {tax} shock"));
        let file = format!("fevd_{}.csv", tax.to_lowercase());
        let Some(t) = self.load(Stage::Fevd, &file) else {
            return;
        };
        self.line("Percent of the h-step forecast error variance due to the shock, cumulative through h.");
        self.line("");
        let table_vars = self.manifest.config.table_variables();
        let mut header = vec!["Variable".to_string()];
        header.extend(t.header[1..].iter().map(|h| h.trim_start_matches('h').to_string()));
        let rows: Vec<Vec<String>> = table_vars
            .iter()
            .map(|v| match t.rows.iter().find(|r| &r[0] == v) {
                Some(r) => {
                    let mut out = vec![v.clone()];
                    out.extend(r[1..].iter().map(|c| fmt(c, 2)));
                    out
                }
                None => {
                    let mut out = vec![v.clone()];
                    out.extend((1..t.header.len()).map(|_| "n/a".to_string()));
                    out
                }
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.table(&header, &rows);
    }

    fn reliability(&mut self) {
        self.section("Model reliability");
        let Some(t) = self.load(Stage::Diagnose, "reliability.csv") else {
            return;
        };
        self.line(
            "Panel reconstruction from the factors, the VAR observables and one tax rate: \
             RMSE over all standardized series and percent of variation explained.",
        );
        self.line("");
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}-Factor", r[0]),
                    fmt(&r[1], 3),
                    fmt(&r[2], 1),
                    fmt(&r[3], 3),
                    fmt(&r[4], 1),
                ]
            })
            .collect();
        self.table(
            &[
                "Model",
                "PIT RMSE",
                "PIT explained (%)",
                "CIT RMSE",
                "CIT explained (%)",
            ],
            &rows,
        );
    }

    fn shock_correlations(&mut self) {
        self.section("Identified shocks and narrative rates");
        let Some(t) = self.load(Stage::Diagnose, "shock_correlations.csv") else {
            return;
        };
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| vec![r[0].clone(), fmt(&r[1], 3), r[2].clone()])
            .collect();
        self.table(&["Shock", "Correlation", "Observations"], &rows);
    }

    fn figure_data(&mut self) {
        self.section("Figure data files");
        let figure = |name: &str| {
            name == "factors.csv"
                || name == "narrative_rates.csv"
                || name.starts_with("decomposition_")
                || name.starts_with("irf_")
                || name.starts_with("observable_irf_")
        };
        let files: Vec<String> = self
            .manifest
            .stages
            .iter()
            .flat_map(|s| s.outputs.iter())
            .filter(|f| figure(f))
            .cloned()
            .collect();
        if files.is_empty() {
            self.line("_None written._");
        }
        for f in files {
            self.line(&format!("- `{f}`"));
        }
    }
}

fn status_name(s: StageStatus) -> &'static str {
    match s {
        StageStatus::Ok => "ok",
        StageStatus::Failed => "failed",
        StageStatus::Skipped => "skipped",
        StageStatus::NotRun => "not run",
    }
}

/// Fixed-decimal rendering of a numeric cell; other text passes through.
fn fmt(cell: &str, digits: usize) -> String {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v:.digits$}"),
        _ if cell.is_empty() => "n/a".into(),
        _ => cell.to_string(),
    }
}
