//! The run manifest: what ran, with which inputs, and what it wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Wall-clock timings live apart from the manifest so that the manifest
/// stays byte-identical across repeated runs.
pub const TIMINGS_FILE: &str = "run_timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub timings_file: String,
    pub config: PipelineConfig,
}

impl Manifest {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let mut inputs = vec![input("panel", &cfg.paths.panel)?, input("events", &cfg.paths.events)?];
        if let Some(p) = &cfg.paths.federal_rates {
            inputs.push(input("federal_rates", p)?);
        }
        Ok(Self {
            tool: "favar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: favar_core::VERSION.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            inputs,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageRecord {
                    stage,
                    status: StageStatus::NotRun,
                    outputs: Vec::new(),
                    notes: Vec::new(),
                })
                .collect(),
            failed_stage: None,
            error: None,
            timings_file: TIMINGS_FILE.into(),
            config: cfg.portable(),
        })
    }

    pub fn record_mut(&mut self, stage: Stage) -> &mut StageRecord {
        self.stages
            .iter_mut()
            .find(|r| r.stage == stage)
            .expect("every stage has a record")
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.record(stage).map(|r| r.status).unwrap_or(StageStatus::NotRun)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::stage(Stage::Report, format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::stage(Stage::Report, format!("manifest is incomplete or malformed: {e}")))?;
        for stage in Stage::ALL {
            if m.record(stage).is_none() {
                return Err(CliError::stage(
                    Stage::Report,
                    format!("manifest has no `{stage}` section"),
                ));
            }
        }
        Ok(m)
    }
}

fn input(role: &str, path: &Path) -> Result<InputRecord, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputRecord {
        role: role.into(),
        path: path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Per-stage wall-clock seconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub total: f64,
}
