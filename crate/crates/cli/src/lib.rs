//! Config-driven FAVAR pipeline: reads a panel and narrative tax events,
//! runs every estimation stage from [`favar_core`], and writes tables,
//! figure data, a markdown report, and a deterministic run manifest.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod pipeline;
pub mod report;

use std::path::Path;

pub use config::{FactorCount, Overrides, PipelineConfig};
pub use error::{CliError, Stage};
pub use manifest::{Manifest, StageStatus};
pub use pipeline::{run_pipeline, write_report, REPORT_FILE};
pub use report::emit_report;

/// Config that runs the bundled fixture quickly (r = 2, p = 2, B = 100).
pub const FIXTURE_CONFIG: &str = r#"seed = 20240501

[paths]
panel = "panel.csv"
events = "events.csv"
federal_rates = "federal_rates.csv"
output_dir = "output"

[factors]
r = 2
r_max = 8

[smoothing]
trend = "hp"

[var]
p = 2
observables = ["GDP", "PCE", "INV", "UNEMP", "DPI", "CPI"]

[identify]
mode = "rejection"
draws = 200
horizon = 4

[identify.signs]
GDP = "+"
PCE = "+"
INV = "+"
UNEMP = "-"
DPI = "+"
CPI = "+"

[analysis]
horizon = 20
bootstrap = 100
level = 0.90
table_variables = ["GDP", "PCE", "INV", "GOV", "IP", "UNEMP", "EMP", "CPI"]
reliability_factors = [1, 2, 3, 4, 5, 6, 7, 8]
"#;

/// Writes the synthetic fixture (panel, events, federal rates, config) for
/// `seed` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("writing fixture: {e}"));
    let core = |e: favar_core::FavarError| CliError::Config(format!("fixture: {e}"));
    std::fs::create_dir_all(dir).map_err(io)?;
    let data = favar_core::synthetic::fixture_dataset(seed).map_err(core)?;
    favar_core::write_panel(&data.panel, std::fs::File::create(dir.join("panel.csv")).map_err(io)?).map_err(core)?;
    favar_core::write_events(&data.events, std::fs::File::create(dir.join("events.csv")).map_err(io)?).map_err(core)?;
    pipeline::write_federal_rates(&dir.join("federal_rates.csv"), &data.federal_rates).map_err(io)?;
    std::fs::write(dir.join("config.toml"), FIXTURE_CONFIG).map_err(io)?;
    Ok(())
}
