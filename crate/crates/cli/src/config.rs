//! Pipeline configuration: one TOML file with a section per stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use favar_core::{BalancePolicy, IdentMode, Reidentify, Sign, TransitionForm, MIN_REPLICATIONS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Tax rate identifiers used as VAR variable names and file suffixes.
pub const TAX_IDS: [&str; 2] = ["PIT", "CIT"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed for every random draw. There is no default.
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub panel: PanelConfig,
    #[serde(default)]
    pub factors: FactorsConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub narrative: NarrativeConfig,
    #[serde(default)]
    pub var: VarConfig,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub panel: PathBuf,
    pub events: PathBuf,
    /// Optional `date,PIT,CIT` file of federal average marginal rates for the
    /// Granger table.
    #[serde(default)]
    pub federal_rates: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("favar-output")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    #[serde(default)]
    pub balance: BalancePolicy,
}

/// Number of factors: a fixed count or `"auto"` (ICR2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCount {
    Auto,
    Fixed(usize),
}

impl Serialize for FactorCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FactorCount::Auto => s.serialize_str("auto"),
            FactorCount::Fixed(r) => s.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FactorCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(r) => Ok(FactorCount::Fixed(r as usize)),
            Raw::Word(w) if w == "auto" => Ok(FactorCount::Auto),
            Raw::Word(w) => w
                .parse()
                .map(FactorCount::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("expected a factor count or \"auto\", got `{w}`"))),
        }
    }
}

impl std::str::FromStr for FactorCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(FactorCount::Auto);
        }
        s.parse()
            .map(FactorCount::Fixed)
            .map_err(|_| format!("expected a factor count or `auto`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSource {
    /// Smoothed trend component of each factor.
    #[default]
    Smoothed,
    /// Principal-component scores as estimated.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorsConfig {
    #[serde(default = "default_r")]
    pub r: FactorCount,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    #[serde(default)]
    pub transition: TransitionForm,
    /// Components listed in the importance table.
    #[serde(default = "default_importance")]
    pub importance_components: usize,
    #[serde(default)]
    pub source: FactorSource,
}

fn default_r() -> FactorCount {
    FactorCount::Auto
}
fn default_r_max() -> usize {
    10
}
fn default_importance() -> usize {
    10
}

impl Default for FactorsConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            r_max: default_r_max(),
            transition: TransitionForm::default(),
            importance_components: default_importance(),
            source: FactorSource::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendModel {
    /// Maximum-likelihood slope variance.
    #[default]
    Unconstrained,
    /// Hodrick-Prescott restriction (λ = 1600).
    Hp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Which fit supplies the smoothed factors.
    #[serde(default)]
    pub trend: TrendModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarrativeConfig {
    #[serde(default = "default_true")]
    pub exogenous_only: bool,
    #[serde(default = "default_granger_lags")]
    pub granger_lags: Vec<usize>,
    /// Lag length shown in the Granger table.
    #[serde(default = "default_table_lag")]
    pub table_lag: usize,
    #[serde(default)]
    pub quarter_dummies: bool,
    /// Predictor series; empty means every panel series.
    #[serde(default)]
    pub granger_predictors: Vec<String>,
}

fn default_true() -> bool {
    true
}
fn default_granger_lags() -> Vec<usize> {
    vec![4, 8, 12]
}
fn default_table_lag() -> usize {
    4
}

impl Default for NarrativeConfig {
    fn default() -> Self {
        Self {
            exogenous_only: true,
            granger_lags: default_granger_lags(),
            table_lag: default_table_lag(),
            quarter_dummies: false,
            granger_predictors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaxEntry {
    /// Tax rates are VAR variables and their shocks are sign-identified.
    #[default]
    Endogenous,
    /// Tax rates enter as exogenous regressors; responses are dynamic
    /// multipliers of a one-standard-deviation cut.
    Exogenous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarConfig {
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    #[serde(default)]
    pub tax_entry: TaxEntry,
}

fn default_p() -> usize {
    4
}
fn default_observables() -> Vec<String> {
    ["GDP", "PCE", "INV", "UNEMP", "DPI", "CPI"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            p: default_p(),
            observables: default_observables(),
            tax_entry: TaxEntry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    #[serde(default)]
    pub mode: IdentMode,
    /// Accepted draws to collect in rejection mode.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    /// Last horizon K at which the signs bind (0..=K).
    #[serde(default = "default_k")]
    pub horizon: usize,
    #[serde(default = "default_slope")]
    pub penalty_slope: f64,
    /// Shocks to identify, by tax id.
    #[serde(default = "default_shocks")]
    pub shocks: Vec<String>,
    /// Sign per VAR variable for a tax cut; unlisted variables are free.
    #[serde(default = "default_signs")]
    pub signs: BTreeMap<String, Sign>,
}

fn default_draws() -> usize {
    1000
}
fn default_max_attempts() -> usize {
    1_000_000
}
fn default_k() -> usize {
    favar_core::identify::DEFAULT_RESTRICTED_HORIZON
}
fn default_slope() -> f64 {
    favar_core::identify::DEFAULT_PENALTY_SLOPE
}
fn default_shocks() -> Vec<String> {
    TAX_IDS.iter().map(|s| s.to_string()).collect()
}
fn default_signs() -> BTreeMap<String, Sign> {
    let mut m = BTreeMap::new();
    for id in ["GDP", "PCE", "INV", "DPI", "CPI"] {
        m.insert(id.to_string(), Sign::Positive);
    }
    m.insert("UNEMP".to_string(), Sign::Negative);
    m
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            mode: IdentMode::default(),
            draws: default_draws(),
            max_attempts: default_max_attempts(),
            horizon: default_k(),
            penalty_slope: default_slope(),
            shocks: default_shocks(),
            signs: default_signs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Response horizon H.
    #[serde(default = "default_h")]
    pub horizon: usize,
    #[serde(default = "default_b")]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub reidentify: Reidentify,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default = "default_cumulative")]
    pub cumulative_horizons: Vec<usize>,
    #[serde(default)]
    pub include_impact: bool,
    #[serde(default = "default_fevd_horizons")]
    pub fevd_horizons: Vec<usize>,
    /// Rows of the cumulative-response and variance-decomposition tables;
    /// empty means the VAR observables.
    #[serde(default)]
    pub table_variables: Vec<String>,
    /// Factor counts compared in the reliability table.
    #[serde(default = "default_reliability")]
    pub reliability_factors: Vec<usize>,
}

fn default_h() -> usize {
    20
}
fn default_b() -> usize {
    500
}
fn default_level() -> f64 {
    0.90
}
fn default_failure_rate() -> f64 {
    0.2
}
fn default_cumulative() -> Vec<usize> {
    vec![4, 12]
}
fn default_fevd_horizons() -> Vec<usize> {
    vec![1, 5, 10, 15, 20]
}
fn default_reliability() -> Vec<usize> {
    (1..=8).collect()
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            horizon: default_h(),
            bootstrap: default_b(),
            level: default_level(),
            reidentify: Reidentify::default(),
            max_failure_rate: default_failure_rate(),
            cumulative_horizons: default_cumulative(),
            include_impact: false,
            fevd_horizons: default_fevd_horizons(),
            table_variables: Vec::new(),
            reliability_factors: default_reliability(),
        }
    }
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub r: Option<FactorCount>,
    pub p: Option<usize>,
    pub horizon: Option<usize>,
    pub restricted_horizon: Option<usize>,
    pub draws: Option<usize>,
    pub mode: Option<IdentMode>,
    pub bootstrap: Option<usize>,
    pub level: Option<f64>,
    pub factor_source: Option<FactorSource>,
    pub tax_entry: Option<TaxEntry>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.output_dir {
            self.paths.output_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.r {
            self.factors.r = v;
        }
        if let Some(v) = o.p {
            self.var.p = v;
        }
        if let Some(v) = o.horizon {
            self.analysis.horizon = v;
        }
        if let Some(v) = o.restricted_horizon {
            self.identify.horizon = v;
        }
        if let Some(v) = o.draws {
            self.identify.draws = v;
        }
        if let Some(v) = o.mode {
            self.identify.mode = v;
        }
        if let Some(v) = o.bootstrap {
            self.analysis.bootstrap = v;
        }
        if let Some(v) = o.level {
            self.analysis.level = v;
        }
        if let Some(v) = o.factor_source {
            self.factors.source = v;
        }
        if let Some(v) = o.tax_entry {
            self.var.tax_entry = v;
        }
    }

    /// Checks ranges and input paths. Runs before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        for (role, path) in [("panel", &self.paths.panel), ("events", &self.paths.events)] {
            if !path.is_file() {
                return bad(format!("{role} file {} does not exist", path.display()));
            }
        }
        if let Some(path) = &self.paths.federal_rates {
            if !path.is_file() {
                return bad(format!("federal_rates file {} does not exist", path.display()));
            }
        }
        if let FactorCount::Fixed(0) = self.factors.r {
            return bad("factors.r must be at least 1".into());
        }
        if self.factors.r_max == 0 {
            return bad("factors.r_max must be at least 1".into());
        }
        if self.factors.importance_components == 0 {
            return bad("factors.importance_components must be at least 1".into());
        }
        if self.narrative.granger_lags.is_empty() || self.narrative.granger_lags.contains(&0) {
            return bad("narrative.granger_lags must be a nonempty list of positive lags".into());
        }
        if !self.narrative.granger_lags.contains(&self.narrative.table_lag) {
            return bad(format!(
                "narrative.table_lag {} is not among granger_lags",
                self.narrative.table_lag
            ));
        }
        if self.var.p == 0 {
            return bad("var.p must be at least 1".into());
        }
        if self.var.observables.is_empty() {
            return bad("var.observables must name at least one series".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.var.observables {
            if TAX_IDS.contains(&id.as_str()) || is_factor_id(id) || !seen.insert(id) {
                return bad(format!("var.observables entry `{id}` is reserved or repeated"));
            }
        }
        if self.identify.draws == 0 || self.identify.max_attempts == 0 {
            return bad("identify.draws and identify.max_attempts must be positive".into());
        }
        if !(self.identify.penalty_slope > 0.0) {
            return bad("identify.penalty_slope must be positive".into());
        }
        if self.identify.shocks.is_empty() {
            return bad("identify.shocks must list at least one tax id".into());
        }
        for s in &self.identify.shocks {
            if !TAX_IDS.contains(&s.as_str()) {
                return bad(format!("identify.shocks entry `{s}` is not one of PIT, CIT"));
            }
        }
        for key in self.identify.signs.keys() {
            let known = self.var.observables.contains(key) || TAX_IDS.contains(&key.as_str()) || is_factor_id(key);
            if !known {
                return bad(format!("identify.signs names `{key}`, which is not a VAR variable"));
            }
        }
        if self.var.tax_entry == TaxEntry::Endogenous && self.identify.signs.values().all(|s| *s == Sign::Unrestricted)
        {
            return bad("identify.signs must restrict at least one variable".into());
        }
        let a = &self.analysis;
        if a.horizon == 0 {
            return bad("analysis.horizon must be at least 1".into());
        }
        if self.identify.horizon > a.horizon {
            return bad(format!(
                "identify.horizon {} exceeds analysis.horizon {}",
                self.identify.horizon, a.horizon
            ));
        }
        if a.bootstrap < MIN_REPLICATIONS {
            return bad(format!("analysis.bootstrap must be at least {MIN_REPLICATIONS}"));
        }
        if !(a.level > 0.0 && a.level < 1.0) {
            return bad("analysis.level must lie strictly between 0 and 1".into());
        }
        if !(0.0..=1.0).contains(&a.max_failure_rate) {
            return bad("analysis.max_failure_rate must lie in [0, 1]".into());
        }
        if a.cumulative_horizons.is_empty() || a.cumulative_horizons.iter().any(|&h| h > a.horizon) {
            return bad("analysis.cumulative_horizons must be nonempty and within analysis.horizon".into());
        }
        if a.fevd_horizons.is_empty() || a.fevd_horizons.contains(&0) {
            return bad("analysis.fevd_horizons must be a nonempty list of positive horizons".into());
        }
        if a.reliability_factors.contains(&0) {
            return bad("analysis.reliability_factors must be positive".into());
        }
        Ok(())
    }

    /// The config with every path cut to its file name and the output
    /// directory blanked, so that relocating a run does not change it.
    pub fn portable(&self) -> Self {
        let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
        let mut c = self.clone();
        c.paths.panel = name(&self.paths.panel);
        c.paths.events = name(&self.paths.events);
        c.paths.federal_rates = self.paths.federal_rates.as_deref().map(name);
        c.paths.output_dir = PathBuf::from(".");
        c
    }

    /// SHA-256 of the canonical JSON form of [`Self::portable`]. Input file
    /// contents are hashed separately in the manifest.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.portable()).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Rows of the response and decomposition tables.
    pub fn table_variables(&self) -> Vec<String> {
        if self.analysis.table_variables.is_empty() {
            self.var.observables.clone()
        } else {
            self.analysis.table_variables.clone()
        }
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.panel);
        fix(&mut self.events);
        if let Some(p) = self.federal_rates.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }
}

/// `F1`, `F2`, … name the factors in the VAR.
pub fn is_factor_id(id: &str) -> bool {
    id.strip_prefix('F')
        .is_some_and(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()) && k != "0")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\n[paths]\npanel = \"p.csv\"\nevents = \"e.csv\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.factors.r, FactorCount::Auto);
        assert_eq!(c.var.p, 4);
        assert_eq!(c.analysis.horizon, 20);
        assert_eq!(c.analysis.level, 0.9);
        assert_eq!(c.identify.signs["UNEMP"], Sign::Negative);
        assert_eq!(c.identify.signs.len(), 6);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = PipelineConfig::from_toml("[paths]\npanel = \"p\"\nevents = \"e\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn factor_count_forms() {
        let c = PipelineConfig::from_toml(&format!("{MINIMAL}[factors]\nr = 3\n")).unwrap();
        assert_eq!(c.factors.r, FactorCount::Fixed(3));
        let c = PipelineConfig::from_toml(&format!("{MINIMAL}[factors]\nr = \"auto\"\n")).unwrap();
        assert_eq!(c.factors.r, FactorCount::Auto);
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}[factors]\nr = \"many\"\n")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}[var]\nlags = 2\n")).is_err());
    }

    #[test]
    fn overrides_change_hash() {
        let mut c = PipelineConfig::from_toml(MINIMAL).unwrap();
        let h0 = c.hash();
        c.apply(&Overrides {
            seed: Some(8),
            ..Default::default()
        });
        assert_eq!(c.seed, 8);
        assert_ne!(c.hash(), h0);
    }

    #[test]
    fn factor_ids() {
        assert!(is_factor_id("F1"));
        assert!(is_factor_id("F12"));
        assert!(!is_factor_id("F"));
        assert!(!is_factor_id("F0"));
        assert!(!is_factor_id("FFR"));
    }
}
