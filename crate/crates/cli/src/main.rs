use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use favar_cli::config::{FactorSource, TaxEntry};
use favar_cli::{run_pipeline, write_fixture, write_report, CliError, FactorCount, Overrides, PipelineConfig, Stage};
use favar_core::IdentMode;

#[derive(Parser)]
#[command(
    name = "favar",
    version,
    about = "FAVAR estimation with sign-restricted narrative tax shocks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, transform, balance and standardize the panel.
    Ingest(RunArgs),
    /// Select the number of factors and extract them.
    Factors(RunArgs),
    /// Trend-cycle decomposition of each factor and the LR test.
    Smooth(RunArgs),
    /// Narrative tax rates and Granger exogeneity tests.
    Granger(RunArgs),
    /// Fit the reduced-form VAR.
    Estimate(RunArgs),
    /// Sign-restriction identification of the tax shocks.
    Identify(RunArgs),
    /// Impulse responses, bootstrap bands and cumulative responses.
    Irf(RunArgs),
    /// Forecast error variance decompositions.
    Fevd(RunArgs),
    /// Median-Target draws, reliability and shock correlations.
    Diagnose(RunArgs),
    /// Render report.md from an existing run.
    Report(ReportArgs),
    /// Run every stage and write the report.
    RunAll(RunArgs),
    /// Write the synthetic fixture dataset and its config.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of factors or `auto`.
    #[arg(long)]
    r: Option<FactorCount>,
    /// VAR lag order.
    #[arg(long)]
    p: Option<usize>,
    /// Response horizon H.
    #[arg(long)]
    horizon: Option<usize>,
    /// Last horizon K at which the sign restrictions bind.
    #[arg(long)]
    restricted_horizon: Option<usize>,
    /// Accepted draws in rejection mode.
    #[arg(long)]
    draws: Option<usize>,
    /// `rejection` or `penalty`.
    #[arg(long, value_parser = parse_kebab::<IdentMode>)]
    mode: Option<IdentMode>,
    /// Bootstrap replications B.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Band coverage level.
    #[arg(long)]
    level: Option<f64>,
    /// `smoothed` or `raw`.
    #[arg(long, value_parser = parse_kebab::<FactorSource>)]
    factor_source: Option<FactorSource>,
    /// `endogenous` or `exogenous`.
    #[arg(long, value_parser = parse_kebab::<TaxEntry>)]
    tax_entry: Option<TaxEntry>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; defaults to the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl RunArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            r: self.r,
            p: self.p,
            horizon: self.horizon,
            restricted_horizon: self.restricted_horizon,
            draws: self.draws,
            mode: self.mode,
            bootstrap: self.bootstrap,
            level: self.level,
            factor_source: self.factor_source,
            tax_entry: self.tax_entry,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, through) = match cli.command {
        Command::Ingest(a) => (a, Stage::Ingest),
        Command::Factors(a) => (a, Stage::Factors),
        Command::Smooth(a) => (a, Stage::Smooth),
        Command::Granger(a) => (a, Stage::Granger),
        Command::Estimate(a) => (a, Stage::Estimate),
        Command::Identify(a) => (a, Stage::Identify),
        Command::Irf(a) => (a, Stage::Irf),
        Command::Fevd(a) => (a, Stage::Fevd),
        Command::Diagnose(a) => (a, Stage::Diagnose),
        Command::RunAll(a) => (a, Stage::Report),
        Command::Report(a) => {
            let dir = match (a.output_dir, a.config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => PipelineConfig::load(&path)?.paths.output_dir,
                (None, None) => return Err(CliError::Config("report needs --config or --output-dir".into())),
            };
            return write_report(&dir);
        }
        Command::Synth { dir, seed } => return write_fixture(&dir, seed),
    };
    let cfg = args.load()?;
    let manifest = run_pipeline(&cfg, through)?;
    let done = manifest
        .stages
        .iter()
        .filter(|s| s.status != favar_cli::StageStatus::NotRun)
        .count();
    eprintln!("{done} stages done; outputs in {}", cfg.paths.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
