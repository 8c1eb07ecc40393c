//! Stage-sequential pipeline driver. Each stage reads the results of the
//! stages before it, writes its artifacts, and records them in the manifest.

use std::fs::File;
use std::time::Instant;

use favar_core::{
    apply_transforms, benchmark_draw, bootstrap_bands, component_importance, cumulative_irf, estimate_factors,
    fevd_combinations, fit_factor_transition, fit_local_linear_trend, fit_var, fit_varx, granger_battery,
    identify_tax_shock, idiosyncratic_cov, load_events, load_panel, lr_test, median_target_select, observable_loadings,
    reliability_row, select_num_factors, shock_correlation, standardize_and_balance, write_panel, BootstrapOptions,
    BootstrapResult, DrawSet, FactorModel, GrangerOptions, IcResult, IdentMode, IdentifyOptions, IrfSet, LrTestResult,
    MtResult, NarrativeEvent, NarrativeTaxSeries, ObservableLoadings, Quarter, Sign, SignRestrictionSpec,
    TimeSeriesPanel, TrendCycleDecomposition, VarModel,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{FactorCount, FactorSource, PipelineConfig, TaxEntry, TrendModel, TAX_IDS};
use crate::error::{CliError, Stage};
use crate::manifest::{Manifest, StageStatus, Timings, MANIFEST_FILE, TIMINGS_FILE};
use crate::output::{num, OutputDir};
use crate::report::emit_report;

pub const REPORT_FILE: &str = "report.md";

struct Ingested {
    /// Balanced transformed panel; log-based series are in percent.
    scaled: TimeSeriesPanel,
    standardized: TimeSeriesPanel,
    events: Vec<NarrativeEvent>,
}

struct Factors {
    model: FactorModel,
}

struct Smoothed {
    /// T×r factors that enter the VAR.
    used: DMatrix<f64>,
}

struct Narrative {
    rates: NarrativeTaxSeries,
}

struct Estimated {
    /// Endogenous VAR data, T×n.
    data: DMatrix<f64>,
    /// Exogenous regressors (exogenous tax entry only).
    exog: Option<DMatrix<f64>>,
    model: VarModel,
    /// Endogenous then exogenous ids.
    system_ids: Vec<String>,
}

struct Identified {
    tax: String,
    spec: SignRestrictionSpec,
    ident: IdentifyOptions,
    draws: DrawSet,
    benchmark: usize,
    mt: Option<MtResult>,
}

struct Responses {
    tax: String,
    /// Pointwise median over the identified set (the multiplier path under
    /// exogenous entry), (H+1)×k over the system variables.
    median: DMatrix<f64>,
    benchmark: DMatrix<f64>,
    bands: Option<BootstrapResult>,
}

/// Runs the stages through `through` and returns the manifest. On a stage
/// failure the manifest (and, when `through` is [`Stage::Report`], the
/// report) is still written before the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig, through: Stage) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let mut run = Run::new(cfg)?;
    let outcome = run.execute(through);
    if let Err(e) = &outcome {
        run.manifest.failed_stage = e.failed_stage();
        run.manifest.error = Some(e.to_string());
    }
    run.write_manifest()?;
    if through == Stage::Report {
        let report = run.report();
        if outcome.is_ok() {
            report?;
        }
    }
    outcome.map(|_| run.manifest)
}

/// Renders `report.md` from the manifest and artifacts in `dir`.
pub fn write_report(dir: &std::path::Path) -> Result<(), CliError> {
    let manifest = Manifest::read(dir)?;
    let text = emit_report(&manifest, dir)?;
    std::fs::write(dir.join(REPORT_FILE), text).map_err(|e| CliError::stage(Stage::Report, e))
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: OutputDir,
    manifest: Manifest,
    timings: Timings,
    ingested: Option<Ingested>,
    factors: Option<Factors>,
    smoothed: Option<Smoothed>,
    narrative: Option<Narrative>,
    estimated: Option<Estimated>,
    identified: Vec<Identified>,
    responses: Vec<Responses>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self, CliError> {
        let manifest = Manifest::new(cfg)?;
        Ok(Self {
            cfg,
            out: OutputDir::create(&cfg.paths.output_dir)?,
            manifest,
            timings: Timings::default(),
            ingested: None,
            factors: None,
            smoothed: None,
            narrative: None,
            estimated: None,
            identified: Vec::new(),
            responses: Vec::new(),
        })
    }

    fn execute(&mut self, through: Stage) -> Result<(), CliError> {
        let total = Instant::now();
        for stage in Stage::ALL {
            if stage > through || stage == Stage::Report {
                break;
            }
            let start = Instant::now();
            let result = self.stage(stage);
            self.timings
                .stages
                .insert(stage.name().into(), start.elapsed().as_secs_f64());
            let outputs = self.out.take_written();
            let record = self.manifest.record_mut(stage);
            record.outputs = outputs;
            match result {
                Ok(status) => record.status = status,
                Err(e) => {
                    record.status = StageStatus::Failed;
                    self.timings.total = total.elapsed().as_secs_f64();
                    return Err(e);
                }
            }
        }
        self.timings.total = total.elapsed().as_secs_f64();
        Ok(())
    }

    fn write_manifest(&mut self) -> Result<(), CliError> {
        let stage = self.manifest.failed_stage.unwrap_or(Stage::Report);
        self.out.json(stage, MANIFEST_FILE, &self.manifest)?;
        self.out.json(stage, TIMINGS_FILE, &self.timings)?;
        self.out.take_written();
        Ok(())
    }

    fn report(&mut self) -> Result<(), CliError> {
        let text = emit_report(&self.manifest, self.out.root())?;
        self.out.text(Stage::Report, REPORT_FILE, &text)?;
        let record = self.manifest.record_mut(Stage::Report);
        record.status = StageStatus::Ok;
        record.outputs = self.out.take_written();
        self.write_manifest()
    }

    fn note(&mut self, stage: Stage, note: String) {
        self.manifest.record_mut(stage).notes.push(note);
    }

    fn stage(&mut self, stage: Stage) -> Result<StageStatus, CliError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Factors => self.factors(),
            Stage::Smooth => self.smooth(),
            Stage::Granger => self.granger(),
            Stage::Estimate => self.estimate(),
            Stage::Identify => self.identify(),
            Stage::Irf => self.irf(),
            Stage::Fevd => self.fevd(),
            Stage::Diagnose => self.diagnose(),
            Stage::Report => Ok(StageStatus::Ok),
        }
    }

    fn ingest(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Ingest;
        let open = |p: &std::path::Path| File::open(p).map_err(|e| CliError::stage(s, format!("{}: {e}", p.display())));
        let raw = load_panel(open(&self.cfg.paths.panel)?).at(s)?;
        let transformed = apply_transforms(&raw).at(s)?;
        let (standardized, log) = standardize_and_balance(&transformed, self.cfg.panel.balance).at(s)?;
        let cols: Vec<usize> = standardized
            .ids()
            .map(|id| transformed.series_index(id).expect("balancing keeps ids"))
            .collect();
        let first = standardized.dates()[0].index() - transformed.dates()[0].index();
        let balanced = transformed
            .select_columns(&cols)
            .slice_rows(first as usize, first as usize + standardized.n_obs());
        let mut values = balanced.values().clone();
        for (j, meta) in balanced.metas().iter().enumerate() {
            if meta.transform.uses_log() {
                values.column_mut(j).scale_mut(100.0);
            }
        }
        let scaled = TimeSeriesPanel::new(balanced.dates().to_vec(), values, balanced.metas().to_vec()).at(s)?;
        for id in &self.cfg.var.observables {
            if scaled.series_index(id).is_none() {
                let why = if log.dropped_series.contains(id) {
                    "was dropped by balancing"
                } else {
                    "is not in the panel"
                };
                return Err(CliError::stage(s, format!("VAR observable `{id}` {why}")));
            }
        }
        let events = load_events(open(&self.cfg.paths.events)?).at(s)?;

        self.out
            .with_file(s, "panel_transformed.csv", |f| write_panel(&scaled, f))?;
        self.out
            .with_file(s, "panel_standardized.csv", |f| write_panel(&standardized, f))?;
        let mut rows: Vec<Vec<String>> = log
            .dropped_series
            .iter()
            .map(|id| vec!["series".into(), id.clone()])
            .collect();
        rows.extend(log.dropped_rows.iter().map(|q| vec!["row".into(), q.to_string()]));
        self.out.csv(s, "drop_log.csv", &["kind", "id"], &rows)?;
        self.note(
            s,
            format!(
                "{} series x {} quarters ({} to {}) after balancing",
                scaled.n_series(),
                scaled.n_obs(),
                scaled.dates()[0],
                scaled.dates()[scaled.n_obs() - 1]
            ),
        );
        self.ingested = Some(Ingested {
            scaled,
            standardized,
            events,
        });
        Ok(StageStatus::Ok)
    }

    fn factors(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Factors;
        let panel = &self.ingested.as_ref().expect("ingest ran").standardized;
        let (t, n) = (panel.n_obs(), panel.n_series());
        let cap = n.min(t);
        let r_max = self.cfg.factors.r_max.min(cap);
        let ic = select_num_factors(panel, r_max).at(s)?;
        let r = match self.cfg.factors.r {
            FactorCount::Auto => ic.r_hat_icr2,
            FactorCount::Fixed(r) if r > cap => {
                return Err(CliError::stage(s, format!("r = {r} exceeds min(N, T) = {cap}")));
            }
            FactorCount::Fixed(r) => r,
        };
        let model = estimate_factors(panel, r).at(s)?;
        let importance = component_importance(panel, self.cfg.factors.importance_components.min(cap)).at(s)?;
        let transition = fit_factor_transition(&model, self.cfg.factors.transition).at(s)?;
        let idio = idiosyncratic_cov(panel, &model).at(s)?;

        self.out.csv(
            s,
            "ic_table.csv",
            &["r", "ssr", "icr1", "icr2", "selected_icr1", "selected_icr2"],
            &ic_rows(&ic),
        )?;
        let rows: Vec<Vec<String>> = (0..importance.eigenvalues.len())
            .map(|k| {
                vec![
                    format!("PC{}", k + 1),
                    num(importance.eigenvalues[k].sqrt()),
                    num(importance.eigenvalues[k]),
                    num(importance.proportion[k]),
                    num(importance.cumulative[k]),
                ]
            })
            .collect();
        self.out.csv(
            s,
            "pc_importance.csv",
            &["component", "std_dev", "eigenvalue", "proportion", "cumulative"],
            &rows,
        )?;
        let fids = factor_ids(r);
        let mut header = vec!["date"];
        header.extend(fids.iter().map(String::as_str));
        self.out
            .csv(s, "factors.csv", &header, &dated_rows(panel.dates(), &model.factors))?;
        let mut header = vec!["series"];
        header.extend(fids.iter().map(String::as_str));
        header.push("idiosyncratic_var");
        let rows: Vec<Vec<String>> = panel
            .ids()
            .enumerate()
            .map(|(i, id)| {
                let mut row = vec![id.to_string()];
                row.extend(model.loadings.row(i).iter().map(|v| num(*v)));
                row.push(num(idio[i]));
                row
            })
            .collect();
        self.out.csv(s, "loadings.csv", &header, &rows)?;
        let mut rows = Vec::new();
        for i in 0..r {
            for j in 0..r {
                rows.push(vec![
                    fids[i].clone(),
                    fids[j].clone(),
                    num(transition.phi[(i, j)]),
                    num(transition.std_errors[(i, j)]),
                ]);
            }
        }
        self.out.csv(
            s,
            "factor_transition.csv",
            &["equation", "regressor", "coef", "std_error"],
            &rows,
        )?;
        self.note(
            s,
            format!(
                "r = {r} ({}); ICR1 selects {}, ICR2 selects {} over r_max = {r_max}",
                if self.cfg.factors.r == FactorCount::Auto {
                    "ICR2"
                } else {
                    "fixed"
                },
                ic.r_hat_icr1,
                ic.r_hat_icr2
            ),
        );
        self.factors = Some(Factors { model });
        Ok(StageStatus::Ok)
    }

    fn smooth(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Smooth;
        let dates = self.ingested.as_ref().expect("ingest ran").scaled.dates().to_vec();
        let model = &self.factors.as_ref().expect("factors ran").model;
        let fits = smooth_factors(&model.factors, s)?;
        let r = model.r();
        let t = dates.len();
        let mut summary = Vec::new();
        let mut lr_rows = Vec::new();
        for (k, (unc, con, lr)) in fits.iter().enumerate() {
            let id = format!("F{}", k + 1);
            let rows: Vec<Vec<String>> = (0..t)
                .map(|i| {
                    vec![
                        dates[i].to_string(),
                        num(model.factors[(i, k)]),
                        num(unc.trend[i]),
                        num(unc.cycle[i]),
                        num(con.trend[i]),
                        num(con.cycle[i]),
                    ]
                })
                .collect();
            self.out.csv(
                s,
                &format!("decomposition_{id}.csv"),
                &["date", "factor", "trend", "cycle", "hp_trend", "hp_cycle"],
                &rows,
            )?;
            for (label, fit) in [("unconstrained", unc), ("constrained", con)] {
                summary.push(vec![
                    id.clone(),
                    label.to_string(),
                    num(fit.params.cycle_var.sqrt()),
                    num(fit.params.slope_var.sqrt()),
                    fit.slope_sd_se.map(num).unwrap_or_default(),
                    num(fit.q),
                    num(fit.loglik),
                ]);
            }
            lr_rows.push(vec![id, num(lr.stat), lr.dof.to_string(), num(lr.p_value)]);
        }
        self.out.csv(
            s,
            "smoothing_summary.csv",
            &[
                "factor",
                "model",
                "sigma_cycle",
                "sigma_omega",
                "sigma_omega_se",
                "q",
                "loglik",
            ],
            &summary,
        )?;
        self.out
            .csv(s, "lr_test.csv", &["factor", "stat", "dof", "p_value"], &lr_rows)?;
        if self.cfg.factors.source == FactorSource::Smoothed && self.cfg.smoothing.trend == TrendModel::Unconstrained {
            let floor = favar_core::smoothing::LN_SLOPE_VAR_BOUNDS.0 + 1.0;
            if let Some(k) = fits.iter().position(|(unc, _, _)| unc.params.slope_var.ln() < floor) {
                return Err(CliError::stage(
                    s,
                    format!(
                        "F{}: unconstrained slope variance is at the lower search bound, so the smoothed trend is \
                         a straight line and cannot enter the VAR; set smoothing.trend = \"hp\" or \
                         factors.source = \"raw\"",
                        k + 1
                    ),
                ));
            }
        }
        let used = match self.cfg.factors.source {
            FactorSource::Raw => model.factors.clone(),
            FactorSource::Smoothed => DMatrix::from_fn(t, r, |i, k| {
                let (unc, con, _) = &fits[k];
                match self.cfg.smoothing.trend {
                    TrendModel::Unconstrained => unc.trend[i],
                    TrendModel::Hp => con.trend[i],
                }
            }),
        };
        self.smoothed = Some(Smoothed { used });
        Ok(StageStatus::Ok)
    }

    fn granger(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Granger;
        let ing = self.ingested.as_ref().expect("ingest ran");
        let grid = ing.scaled.dates().to_vec();
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        let events: Vec<NarrativeEvent> = ing
            .events
            .iter()
            .filter(|e| e.quarter >= lo && e.quarter <= hi)
            .cloned()
            .collect();
        let outside = ing.events.len() - events.len();
        let rates = favar_core::compute_narrative_rates(&events, &grid, self.cfg.narrative.exogenous_only).at(s)?;
        let federal = match &self.cfg.paths.federal_rates {
            Some(path) => Some(load_federal_rates(path, &grid).at(s)?),
            None => None,
        };

        let mut taxes: Vec<(String, Vec<f64>)> = Vec::new();
        for (k, tax) in TAX_IDS.iter().enumerate() {
            if let Some(f) = &federal {
                taxes.push((format!("Federal {tax}"), f[k].clone()));
            }
            taxes.push((format!("Narrative {tax}"), rates.rate(tax_type(tax)).to_vec()));
        }
        let predictor_ids: Vec<String> = if self.cfg.narrative.granger_predictors.is_empty() {
            ing.scaled.ids().map(str::to_string).collect()
        } else {
            self.cfg.narrative.granger_predictors.clone()
        };
        let mut predictors = Vec::new();
        for id in &predictor_ids {
            let j = ing
                .scaled
                .series_index(id)
                .ok_or_else(|| CliError::stage(s, format!("Granger predictor `{id}` is not in the balanced panel")))?;
            predictors.push((id.clone(), ing.scaled.column(j)));
        }
        let opts = GrangerOptions {
            quarter_dummies_from: self.cfg.narrative.quarter_dummies.then_some(lo),
        };
        let cells = granger_battery(&taxes, &predictors, &self.cfg.narrative.granger_lags, opts);

        let rows: Vec<Vec<String>> = grid
            .iter()
            .enumerate()
            .map(|(i, q)| vec![q.to_string(), num(rates.pit_rate[i]), num(rates.cit_rate[i])])
            .collect();
        self.out.csv(s, "narrative_rates.csv", &["date", "PIT", "CIT"], &rows)?;
        let long: Vec<Vec<String>> = cells
            .iter()
            .map(|c| match &c.result {
                Ok(g) => vec![
                    c.tax_id.clone(),
                    c.predictor_id.clone(),
                    c.lags.to_string(),
                    num(g.f_stat),
                    num(g.p_value),
                    g.df_num.to_string(),
                    g.df_den.to_string(),
                    String::new(),
                ],
                Err(e) => {
                    let mut row = vec![c.tax_id.clone(), c.predictor_id.clone(), c.lags.to_string()];
                    row.extend(std::iter::repeat_n(String::new(), 4));
                    row.push(e.to_string());
                    row
                }
            })
            .collect();
        self.out.csv(
            s,
            "granger_long.csv",
            &[
                "tax",
                "predictor",
                "lags",
                "f_stat",
                "p_value",
                "df_num",
                "df_den",
                "error",
            ],
            &long,
        )?;
        let columns = ["Federal PIT", "Narrative PIT", "Federal CIT", "Narrative CIT"];
        let table: Vec<Vec<String>> = predictor_ids
            .iter()
            .map(|pid| {
                let mut row = vec![pid.clone()];
                for col in columns {
                    let cell = cells
                        .iter()
                        .find(|c| c.tax_id == col && &c.predictor_id == pid && c.lags == self.cfg.narrative.table_lag);
                    row.push(match cell.map(|c| &c.result) {
                        None => "n/a".into(),
                        Some(Ok(g)) => format!("{:.2}{} ({:.2})", g.f_stat, stars(g.p_value), g.p_value),
                        Some(Err(_)) => "error".into(),
                    });
                }
                row
            })
            .collect();
        let mut header = vec!["variable"];
        header.extend(columns);
        self.out.csv(s, "granger_table.csv", &header, &table)?;

        if outside > 0 {
            self.note(
                s,
                format!("{outside} narrative events fall outside the balanced sample and were ignored"),
            );
        }
        if federal.is_none() {
            self.note(s, "no federal rates file; federal columns are n/a".into());
        }
        let failed = cells.iter().filter(|c| c.result.is_err()).count();
        if failed > 0 {
            self.note(s, format!("{failed} Granger regressions failed; see granger_long.csv"));
        }
        self.narrative = Some(Narrative { rates });
        Ok(StageStatus::Ok)
    }

    fn estimate(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Estimate;
        let ing = self.ingested.as_ref().expect("ingest ran");
        let used = &self.smoothed.as_ref().expect("smooth ran").used;
        let rates = &self.narrative.as_ref().expect("granger ran").rates;
        let t = ing.scaled.n_obs();
        let mut ids: Vec<String> = self.cfg.var.observables.clone();
        let mut cols: Vec<Vec<f64>> = self
            .cfg
            .var
            .observables
            .iter()
            .map(|id| {
                ing.scaled
                    .column(ing.scaled.series_index(id).expect("checked at ingest"))
            })
            .collect();
        for k in 0..used.ncols() {
            ids.push(format!("F{}", k + 1));
            cols.push(used.column(k).iter().copied().collect());
        }
        let tax_cols: Vec<Vec<f64>> = TAX_IDS.iter().map(|tax| rates.rate(tax_type(tax)).to_vec()).collect();
        let tax_ids: Vec<String> = TAX_IDS.iter().map(|t| t.to_string()).collect();
        let to_matrix = |cols: &[Vec<f64>]| DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i]);

        let (data, exog, model) = match self.cfg.var.tax_entry {
            TaxEntry::Endogenous => {
                ids.extend(tax_ids.iter().cloned());
                cols.extend(tax_cols);
                let data = to_matrix(&cols);
                let model = fit_var(&data, self.cfg.var.p, ids.clone()).at(s)?;
                (data, None, model)
            }
            TaxEntry::Exogenous => {
                let data = to_matrix(&cols);
                let exog = to_matrix(&tax_cols);
                let model = fit_varx(&data, Some(&exog), self.cfg.var.p, ids.clone(), tax_ids.clone()).at(s)?;
                (data, Some(exog), model)
            }
        };
        let mut system_ids = model.var_ids.clone();
        system_ids.extend(model.exog_ids.iter().cloned());

        let dates = ing.scaled.dates();
        let full = match &exog {
            Some(x) => hstack(&data, x),
            None => data.clone(),
        };
        let mut header = vec!["date"];
        header.extend(system_ids.iter().map(String::as_str));
        self.out.csv(s, "var_data.csv", &header, &dated_rows(dates, &full))?;
        self.out.json(s, "var_model.json", &VarDump::new(&model, dates))?;
        self.note(
            s,
            format!(
                "VAR({}) in {} variables over {} observations; spectral radius {:.4}",
                model.p,
                model.n(),
                model.nobs(),
                model.spectral_radius
            ),
        );
        if !model.is_stable() {
            self.note(
                s,
                "warning: the estimated VAR is not stable; responses may not decay".into(),
            );
        }
        self.estimated = Some(Estimated {
            data,
            exog,
            model,
            system_ids,
        });
        Ok(StageStatus::Ok)
    }

    fn identify(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Identify;
        if self.cfg.var.tax_entry == TaxEntry::Exogenous {
            self.note(s, "tax rates are exogenous regressors; no shock to identify".into());
            return Ok(StageStatus::Skipped);
        }
        let est = self.estimated.as_ref().expect("estimate ran");
        let model = &est.model;
        for key in self.cfg.identify.signs.keys() {
            if model.var_index(key).is_none() {
                return Err(CliError::stage(
                    s,
                    format!("sign restriction on `{key}`, which is not in the VAR"),
                ));
            }
        }
        let signs: Vec<Sign> = model
            .var_ids
            .iter()
            .map(|id| self.cfg.identify.signs.get(id).copied().unwrap_or(Sign::Unrestricted))
            .collect();
        let mut identified = Vec::new();
        let mut summary = Vec::new();
        for (i, tax) in self.cfg.identify.shocks.iter().enumerate() {
            let shock_index = model.var_index(tax).expect("tax rates are VAR variables");
            let spec = SignRestrictionSpec::new(
                signs.clone(),
                self.cfg.identify.horizon,
                shock_index,
                self.cfg.identify.penalty_slope,
            )
            .at(s)?;
            let ident = IdentifyOptions {
                n_target: self.cfg.identify.draws,
                max_attempts: self.cfg.identify.max_attempts,
                seed: self.cfg.seed.wrapping_add(i as u64),
                mode: self.cfg.identify.mode,
                horizon: self.cfg.analysis.horizon,
            };
            let draws = identify_tax_shock(model, &spec, &ident)
                .map_err(|e| CliError::stage(s, format!("{tax} shock: {e}")))?;
            let mt = if draws.mode == IdentMode::Rejection && draws.accepted.len() >= 2 {
                Some(median_target_select(&draws.irfs()).at(s)?)
            } else {
                None
            };
            let benchmark = match &mt {
                Some(m) => m.selected_draw,
                None => benchmark_draw(&draws).at(s)?,
            };
            if draws.accepted.len() < self.cfg.identify.draws && draws.mode == IdentMode::Rejection {
                self.manifest.record_mut(s).notes.push(format!(
                    "{tax}: only {} of {} draws accepted within {} attempts",
                    draws.accepted.len(),
                    self.cfg.identify.draws,
                    draws.n_attempted
                ));
            }
            let b = &draws.accepted[benchmark];
            summary.push(vec![
                tax.clone(),
                mode_name(draws.mode).into(),
                draws.n_attempted.to_string(),
                draws.accepted.len().to_string(),
                num(draws.acceptance_rate()),
                benchmark.to_string(),
                b.index.to_string(),
                num(b.impulse.penalty),
                mt.as_ref().map(|m| num(m.gap)).unwrap_or_default(),
            ]);
            let rows: Vec<Vec<String>> = model
                .var_ids
                .iter()
                .enumerate()
                .map(|(j, id)| {
                    vec![
                        id.clone(),
                        signs[j].to_string(),
                        num(b.impulse.q[j]),
                        num(b.impulse.alpha[j]),
                    ]
                })
                .collect();
            let lower = tax.to_lowercase();
            self.out.csv(
                s,
                &format!("impulse_{lower}.csv"),
                &["variable", "sign", "q", "alpha"],
                &rows,
            )?;
            let mut header = vec!["draw".to_string(), "horizon".to_string()];
            header.extend(model.var_ids.iter().cloned());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut rows = Vec::new();
            for (d, acc) in draws.accepted.iter().enumerate() {
                for h in 0..acc.irf.nrows() {
                    let mut row = vec![d.to_string(), h.to_string()];
                    row.extend(acc.irf.row(h).iter().map(|v| num(*v)));
                    rows.push(row);
                }
            }
            self.out.csv(s, &format!("irf_draws_{lower}.csv"), &header, &rows)?;
            identified.push(Identified {
                tax: tax.clone(),
                spec,
                ident,
                draws,
                benchmark,
                mt,
            });
        }
        self.out.csv(
            s,
            "identification_summary.csv",
            &[
                "shock",
                "mode",
                "attempted",
                "accepted",
                "acceptance_rate",
                "benchmark_draw",
                "benchmark_attempt",
                "benchmark_penalty",
                "mt_gap",
            ],
            &summary,
        )?;
        self.identified = identified;
        Ok(StageStatus::Ok)
    }

    fn loadings(&self, stage: Stage) -> Result<ObservableLoadings, CliError> {
        let ing = self.ingested.as_ref().expect("ingest ran");
        let est = self.estimated.as_ref().expect("estimate ran");
        let regressors = match &est.exog {
            Some(x) => hstack(&est.data, x),
            None => est.data.clone(),
        };
        observable_loadings(
            ing.scaled.values(),
            ing.scaled.ids().map(str::to_string).collect(),
            &regressors,
            est.system_ids.clone(),
        )
        .map_err(|e| CliError::stage(stage, e))
    }

    fn irf(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Irf;
        let est = self.estimated.as_ref().expect("estimate ran");
        let h = self.cfg.analysis.horizon;
        let a = &self.cfg.analysis;
        let mut responses = Vec::new();
        match self.cfg.var.tax_entry {
            TaxEntry::Endogenous => {
                for (i, id) in self.identified.iter().enumerate() {
                    let set = IrfSet::from_draws(id.draws.irfs(), a.level).at(s)?;
                    let q = &id.draws.accepted[id.benchmark].impulse.q;
                    let opts = BootstrapOptions {
                        replications: a.bootstrap,
                        level: a.level,
                        seed: self.cfg.seed.wrapping_add(i as u64),
                        horizon: h,
                        reidentify: a.reidentify,
                        max_failure_rate: a.max_failure_rate,
                    };
                    let bands = bootstrap_bands(&est.data, &est.model, q, &id.spec, &id.ident, &opts)
                        .map_err(|e| CliError::stage(s, format!("{} bootstrap: {e}", id.tax)))?;
                    if bands.failed > 0 {
                        self.manifest.record_mut(s).notes.push(format!(
                            "{}: {} of {} bootstrap replications failed",
                            id.tax, bands.failed, bands.replications
                        ));
                    }
                    responses.push(Responses {
                        tax: id.tax.clone(),
                        median: set.median,
                        benchmark: id.draws.accepted[id.benchmark].irf.clone(),
                        bands: Some(bands),
                    });
                }
            }
            TaxEntry::Exogenous => {
                let n = est.model.n();
                let exog = est.exog.as_ref().expect("exogenous entry keeps regressors");
                for tax in &self.cfg.identify.shocks {
                    let k = est
                        .model
                        .exog_ids
                        .iter()
                        .position(|x| x == tax)
                        .expect("tax ids are regressors");
                    let sd = sample_sd(exog.column(k).as_slice());
                    let mult = est.model.exog_multipliers(k, h).at(s)?;
                    let mut path = DMatrix::zeros(h + 1, est.system_ids.len());
                    path.columns_mut(0, n).copy_from(&(mult * -sd));
                    path[(0, n + k)] = -sd;
                    responses.push(Responses {
                        tax: tax.clone(),
                        median: path.clone(),
                        benchmark: path,
                        bands: None,
                    });
                }
                self.manifest
                    .record_mut(s)
                    .notes
                    .push("exogenous tax entry: responses are multipliers of a one-sd cut, without bands".into());
            }
        }

        let loadings = self.loadings(s)?;
        let est = self.estimated.as_ref().expect("estimate ran");
        let lt = loadings.loadings.transpose();
        let table_vars = self.cfg.table_variables();
        let mut cumulative_rows = Vec::new();
        for resp in &responses {
            let lower = resp.tax.to_lowercase();
            let nan = DMatrix::from_element(h + 1, est.system_ids.len(), f64::NAN);
            let (lo, hi) = match &resp.bands {
                Some(b) => (b.bands.lower.clone(), b.bands.upper.clone()),
                None => (nan.clone(), nan),
            };
            self.out.csv(
                s,
                &format!("irf_{lower}.csv"),
                &["variable", "horizon", "median", "benchmark", "lower", "upper"],
                &long_rows(&est.system_ids, &resp.median, &resp.benchmark, &lo, &hi),
            )?;

            // Panel series responses: map every draw through the loadings.
            let obs_median = match self.identified.iter().find(|i| i.tax == resp.tax) {
                Some(id) => {
                    let mapped: Vec<DMatrix<f64>> = id.draws.accepted.iter().map(|d| &d.irf * &lt).collect();
                    IrfSet::from_draws(mapped, a.level).at(s)?.median
                }
                None => &resp.median * &lt,
            };
            let obs_bench = &resp.benchmark * &lt;
            let m = loadings.series_ids.len();
            let (olo, ohi) = match &resp.bands {
                Some(b) => {
                    let mapped: Vec<DMatrix<f64>> = b.bands.draws.iter().map(|d| d * &lt).collect();
                    let set = IrfSet::from_draws(mapped, a.level).at(s)?;
                    (set.lower, set.upper)
                }
                None => {
                    let nan = DMatrix::from_element(h + 1, m, f64::NAN);
                    (nan.clone(), nan)
                }
            };
            self.out.csv(
                s,
                &format!("observable_irf_{lower}.csv"),
                &["series", "horizon", "median", "benchmark", "lower", "upper"],
                &long_rows(&loadings.series_ids, &obs_median, &obs_bench, &olo, &ohi),
            )?;

            for var in &table_vars {
                let path: DVector<f64> = if let Some(j) = est.system_ids.iter().position(|x| x == var) {
                    resp.median.column(j).into_owned()
                } else if let Some(j) = loadings.series_ids.iter().position(|x| x == var) {
                    obs_median.column(j).into_owned()
                } else {
                    return Err(CliError::stage(
                        s,
                        format!("table variable `{var}` is neither a VAR variable nor a panel series"),
                    ));
                };
                let path = DMatrix::from_column_slice(h + 1, 1, path.as_slice());
                let cum = cumulative_irf(&path, &a.cumulative_horizons, a.include_impact).at(s)?;
                for (k, hz) in a.cumulative_horizons.iter().enumerate() {
                    cumulative_rows.push(vec![var.clone(), resp.tax.clone(), hz.to_string(), num(cum[(k, 0)])]);
                }
            }
        }
        self.out.csv(
            s,
            "cumulative_irf.csv",
            &["variable", "shock", "horizon", "value"],
            &cumulative_rows,
        )?;
        self.responses = responses;
        Ok(StageStatus::Ok)
    }

    fn fevd(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Fevd;
        if self.cfg.var.tax_entry == TaxEntry::Exogenous {
            self.note(
                s,
                "variance decomposition needs an identified shock; skipped under exogenous tax entry".into(),
            );
            return Ok(StageStatus::Skipped);
        }
        let loadings = self.loadings(s)?;
        let est = self.estimated.as_ref().expect("estimate ran");
        let model = &est.model;
        let n = model.n();
        let mut ids = model.var_ids.clone();
        let mut weights: Vec<DVector<f64>> = (0..n)
            .map(|j| {
                let mut w = DVector::zeros(n);
                w[j] = 1.0;
                w
            })
            .collect();
        for var in self.cfg.table_variables() {
            if model.var_index(&var).is_some() {
                continue;
            }
            let j = loadings.series_ids.iter().position(|x| *x == var).ok_or_else(|| {
                CliError::stage(
                    s,
                    format!("table variable `{var}` is neither a VAR variable nor a panel series"),
                )
            })?;
            ids.push(var);
            weights.push(loadings.row(j));
        }
        let w = DMatrix::from_fn(weights.len(), n, |i, j| weights[i][j]);
        let horizons = &self.cfg.analysis.fevd_horizons;
        let mut header = vec!["variable".to_string()];
        header.extend(horizons.iter().map(|h| format!("h{h}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        for id in &self.identified {
            let alpha = &id.draws.accepted[id.benchmark].impulse.alpha;
            let table = fevd_combinations(model, alpha, &w, ids.clone(), horizons).at(s)?;
            let rows: Vec<Vec<String>> = table
                .var_ids
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let mut row = vec![v.clone()];
                    row.extend((0..horizons.len()).map(|k| num(table.shares[(k, j)])));
                    row
                })
                .collect();
            self.out
                .csv(s, &format!("fevd_{}.csv", id.tax.to_lowercase()), &header, &rows)?;
        }
        Ok(StageStatus::Ok)
    }

    fn diagnose(&mut self) -> Result<StageStatus, CliError> {
        let s = Stage::Diagnose;
        for id in &self.identified {
            if let Some(mt) = &id.mt {
                let rows: Vec<Vec<String>> = mt
                    .gaps
                    .iter()
                    .enumerate()
                    .map(|(d, g)| {
                        vec![
                            d.to_string(),
                            id.draws.accepted[d].index.to_string(),
                            num(*g),
                            u8::from(d == mt.selected_draw).to_string(),
                        ]
                    })
                    .collect();
                self.out.csv(
                    s,
                    &format!("mt_{}.csv", id.tax.to_lowercase()),
                    &["draw", "attempt", "gap", "selected"],
                    &rows,
                )?;
            }
        }

        // Reliability across factor counts.
        let ing = self.ingested.as_ref().expect("ingest ran");
        let rates = &self.narrative.as_ref().expect("granger ran").rates;
        let panel = &ing.standardized;
        let rs = &self.cfg.analysis.reliability_factors;
        let mut rel_rows = Vec::new();
        if let Some(&r_top) = rs.iter().max() {
            let cap = panel.n_obs().min(panel.n_series());
            if r_top > cap {
                return Err(CliError::stage(
                    s,
                    format!("reliability factor count {r_top} exceeds min(N, T) = {cap}"),
                ));
            }
            let model = estimate_factors(panel, r_top).at(s)?;
            let factors = match self.cfg.factors.source {
                FactorSource::Raw => model.factors.clone(),
                FactorSource::Smoothed => {
                    let fits = smooth_factors(&model.factors, s)?;
                    DMatrix::from_fn(model.factors.nrows(), r_top, |i, k| match self.cfg.smoothing.trend {
                        TrendModel::Unconstrained => fits[k].0.trend[i],
                        TrendModel::Hp => fits[k].1.trend[i],
                    })
                }
            };
            let obs: Vec<Vec<f64>> = self
                .cfg
                .var
                .observables
                .iter()
                .map(|id| {
                    ing.scaled
                        .column(ing.scaled.series_index(id).expect("checked at ingest"))
                })
                .collect();
            for &r in rs {
                let mut row = vec![r.to_string()];
                for tax in TAX_IDS {
                    let rate = rates.rate(tax_type(tax));
                    let k = r + obs.len() + 1;
                    let z = DMatrix::from_fn(panel.n_obs(), k, |i, j| {
                        if j < r {
                            factors[(i, j)]
                        } else if j < r + obs.len() {
                            obs[j - r][i]
                        } else {
                            rate[i]
                        }
                    });
                    let rel = reliability_row(tax, r, panel.values(), &z).at(s)?;
                    row.push(num(rel.rmse));
                    row.push(num(rel.explained));
                }
                rel_rows.push(row);
            }
        }
        self.out.csv(
            s,
            "reliability.csv",
            &["factors", "pit_rmse", "pit_explained", "cit_rmse", "cit_explained"],
            &rel_rows,
        )?;

        let est = self.estimated.as_ref().expect("estimate ran");
        let p = est.model.p;
        let mut corr_rows = Vec::new();
        for id in &self.identified {
            let q = &id.draws.accepted[id.benchmark].impulse.q;
            let eps = favar_core::structural_shock_series(&est.model, q).at(s)?;
            let narrative = &rates.rate(tax_type(&id.tax))[p..];
            let c = shock_correlation(eps.as_slice(), narrative).at(s)?;
            corr_rows.push(vec![
                id.tax.clone(),
                c.map(num).unwrap_or_default(),
                eps.len().to_string(),
            ]);
        }
        self.out.csv(
            s,
            "shock_correlations.csv",
            &["shock", "correlation", "nobs"],
            &corr_rows,
        )?;
        Ok(StageStatus::Ok)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::stage(stage, e))
    }
}

type SmoothFit = (TrendCycleDecomposition, TrendCycleDecomposition, LrTestResult);

fn smooth_factors(factors: &DMatrix<f64>, stage: Stage) -> Result<Vec<SmoothFit>, CliError> {
    let err = |k: usize, e| CliError::stage(stage, format!("F{}: {e}", k + 1));
    (0..factors.ncols())
        .map(|k| {
            let f: Vec<f64> = factors.column(k).iter().copied().collect();
            let unc = fit_local_linear_trend(&f, false).map_err(|e| err(k, e))?;
            let con = fit_local_linear_trend(&f, true).map_err(|e| err(k, e))?;
            // The average log likelihoods cover the non-burn-in terms.
            let terms = f.len() - favar_core::smoothing::DIFFUSE_BURN_IN;
            let lr = lr_test(unc.loglik, con.loglik, terms).map_err(|e| err(k, e))?;
            Ok((unc, con, lr))
        })
        .collect()
}

fn tax_type(id: &str) -> favar_core::TaxType {
    if id == "PIT" {
        favar_core::TaxType::Pit
    } else {
        favar_core::TaxType::Cit
    }
}

fn mode_name(mode: IdentMode) -> &'static str {
    match mode {
        IdentMode::Rejection => "rejection",
        IdentMode::Penalty => "penalty",
    }
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

fn factor_ids(r: usize) -> Vec<String> {
    (1..=r).map(|k| format!("F{k}")).collect()
}

fn ic_rows(ic: &IcResult) -> Vec<Vec<String>> {
    (0..ic.r_max)
        .map(|k| {
            let r = k + 1;
            vec![
                r.to_string(),
                num(ic.ssr[k]),
                num(ic.icr1[k]),
                num(ic.icr2[k]),
                u8::from(r == ic.r_hat_icr1).to_string(),
                u8::from(r == ic.r_hat_icr2).to_string(),
            ]
        })
        .collect()
}

fn dated_rows(dates: &[Quarter], m: &DMatrix<f64>) -> Vec<Vec<String>> {
    let offset = dates.len() - m.nrows();
    (0..m.nrows())
        .map(|i| {
            let mut row = vec![dates[offset + i].to_string()];
            row.extend(m.row(i).iter().map(|v| num(*v)));
            row
        })
        .collect()
}

fn long_rows(
    ids: &[String],
    median: &DMatrix<f64>,
    bench: &DMatrix<f64>,
    lower: &DMatrix<f64>,
    upper: &DMatrix<f64>,
) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (j, id) in ids.iter().enumerate() {
        for h in 0..median.nrows() {
            rows.push(vec![
                id.clone(),
                h.to_string(),
                num(median[(h, j)]),
                num(bench[(h, j)]),
                num(lower[(h, j)]),
                num(upper[(h, j)]),
            ]);
        }
    }
    rows
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Reads `date,PIT,CIT` rows and aligns them with `grid`.
pub fn load_federal_rates(path: &std::path::Path, grid: &[Quarter]) -> Result<[Vec<f64>; 2], String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("federal rates file has no `{name}` column"))
    };
    let (cd, cp, cc) = (col("date")?, col("PIT")?, col("CIT")?);
    let mut by_date = std::collections::BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let q: Quarter = rec[cd]
            .trim()
            .parse()
            .map_err(|e| format!("federal rates line {}: {e}", line + 2))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("federal rates line {}: bad number `{s}`", line + 2))
        };
        by_date.insert(q, (parse(&rec[cp])?, parse(&rec[cc])?));
    }
    let mut pit = Vec::with_capacity(grid.len());
    let mut cit = Vec::with_capacity(grid.len());
    for q in grid {
        let (p, c) = by_date
            .get(q)
            .ok_or_else(|| format!("federal rates have no value for {q}"))?;
        pit.push(*p);
        cit.push(*c);
    }
    Ok([pit, cit])
}

/// Writes `date,PIT,CIT` rows.
pub fn write_federal_rates(path: &std::path::Path, rows: &[(Quarter, f64, f64)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "PIT", "CIT"])?;
    for (q, p, c) in rows {
        w.write_record([q.to_string(), num(*p), num(*c)])?;
    }
    w.flush()
}

#[derive(Serialize)]
struct VarDump<'a> {
    var_ids: &'a [String],
    exog_ids: &'a [String],
    p: usize,
    nobs: usize,
    sample_start: String,
    sample_end: String,
    intercept: Vec<f64>,
    /// `coeffs[j]` is A_{j+1}, row-major.
    coeffs: Vec<Vec<Vec<f64>>>,
    coef_std_errors: Vec<Vec<Vec<f64>>>,
    /// `exog_coeffs[l]` multiplies the exogenous regressors at lag l.
    exog_coeffs: Vec<Vec<Vec<f64>>>,
    sigma_u: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    spectral_radius: f64,
    stable: bool,
}

impl<'a> VarDump<'a> {
    fn new(m: &'a VarModel, dates: &[Quarter]) -> Self {
        use favar_core::var::matrix_rows;
        Self {
            var_ids: &m.var_ids,
            exog_ids: &m.exog_ids,
            p: m.p,
            nobs: m.nobs(),
            sample_start: dates[m.p].to_string(),
            sample_end: dates[dates.len() - 1].to_string(),
            intercept: m.intercept.iter().copied().collect(),
            coeffs: m.coeffs.iter().map(matrix_rows).collect(),
            coef_std_errors: m.coef_std_errors().iter().map(matrix_rows).collect(),
            exog_coeffs: m.exog_coeffs.iter().map(matrix_rows).collect(),
            sigma_u: matrix_rows(&m.sigma_u),
            chol: matrix_rows(&m.chol),
            spectral_radius: m.spectral_radius,
            stable: m.is_stable(),
        }
    }
}
