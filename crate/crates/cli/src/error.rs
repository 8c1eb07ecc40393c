use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Factors,
    Smooth,
    Granger,
    Estimate,
    Identify,
    Irf,
    Fevd,
    Diagnose,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Factors,
        Stage::Smooth,
        Stage::Granger,
        Stage::Estimate,
        Stage::Identify,
        Stage::Irf,
        Stage::Fevd,
        Stage::Diagnose,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Factors => "factors",
            Stage::Smooth => "smooth",
            Stage::Granger => "granger",
            Stage::Estimate => "estimate",
            Stage::Identify => "identify",
            Stage::Irf => "irf",
            Stage::Fevd => "fevd",
            Stage::Diagnose => "diagnose",
            Stage::Report => "report",
        }
    }

    /// Process exit code when this stage fails. Config errors use 2.
    pub fn exit_code(self) -> i32 {
        3 + self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl CliError {
    pub fn stage(stage: Stage, err: impl fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { stage, .. } => stage.exit_code(),
        }
    }

    pub fn failed_stage(&self) -> Option<Stage> {
        match self {
            CliError::Config(_) => None,
            CliError::Stage { stage, .. } => Some(*stage),
        }
    }
}
