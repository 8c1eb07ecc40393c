//! Writers for the run's CSV and JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Stage};

/// Shortest round-trip form; missing values become empty cells.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// The output directory plus the list of files each stage wrote.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// File names written since the last call.
    pub fn take_written(&mut self) -> Vec<String> {
        std::mem::take(&mut self.written)
    }

    pub fn csv(&mut self, stage: Stage, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let err = |e: csv::Error| CliError::stage(stage, format!("writing {name}: {e}"));
        let mut w = csv::Writer::from_path(self.path(name)).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush()
            .map_err(|e| CliError::stage(stage, format!("writing {name}: {e}")))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, stage: Stage, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::stage(stage, e))?;
        self.text(stage, name, &(text + "\n"))
    }

    pub fn text(&mut self, stage: Stage, name: &str, body: &str) -> Result<(), CliError> {
        fs::write(self.path(name), body).map_err(|e| CliError::stage(stage, format!("writing {name}: {e}")))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes through a callback that receives an open file.
    pub fn with_file(
        &mut self,
        stage: Stage,
        name: &str,
        f: impl FnOnce(fs::File) -> favar_core::Result<()>,
    ) -> Result<(), CliError> {
        let file = fs::File::create(self.path(name)).map_err(|e| CliError::stage(stage, format!("{name}: {e}")))?;
        f(file).map_err(|e| CliError::stage(stage, format!("writing {name}: {e}")))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// A CSV file read back as a header and string rows.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, String> {
        let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let header = r
            .headers()
            .map_err(|e| format!("{}: {e}", path.display()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}
