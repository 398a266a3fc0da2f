//! Run configuration: a TOML file with one table per pipeline stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use transportlab::bart::BartConfig;
use transportlab::data::{ColumnSchema, CsvLayout, ImputePolicy};
use transportlab::eval::Setting;
use transportlab::forest::ForestConfig;
use transportlab::interpret::{CtreeConfig, OutlierRule};
use transportlab::linmod::LogisticOptions;
use transportlab::synth::{ShiftSpec, Truth};
use transportlab::weights::{ClipRule, CovariatePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub overlap: OverlapConfig,
    pub bart: BartConfig,
    pub predict: PredictConfig,
    pub forest: ForestConfig,
    pub eval: EvalConfig,
    pub outliers: OutlierRule,
    pub ctree: CtreeConfig,
    pub simulate: SimulateConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: DataConfig::default(),
            overlap: OverlapConfig::default(),
            bart: BartConfig::default(),
            predict: PredictConfig::default(),
            forest: ForestConfig::default(),
            eval: EvalConfig::default(),
            outliers: OutlierRule::default(),
            ctree: CtreeConfig::default(),
            simulate: SimulateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// One file holding both populations, told apart by `membership_col`.
    pub merged: Option<PathBuf>,
    /// Separate files; every row of `source` is S = 1 and of `target` S = 0.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub id_col: Option<String>,
    pub outcome_col: String,
    pub membership_col: String,
    /// Covariate columns. Empty means every other header column, numeric.
    pub schema: Vec<ColumnSchema>,
    pub impute: ImputePolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            merged: None,
            source: None,
            target: None,
            id_col: Some("id".into()),
            outcome_col: "y".into(),
            membership_col: "S".into(),
            schema: Vec::new(),
            impute: ImputePolicy::MeanMode,
        }
    }
}

impl DataConfig {
    pub fn layout(&self) -> CsvLayout {
        CsvLayout {
            id_col: self.id_col.clone(),
            outcome_col: Some(self.outcome_col.clone()),
            membership_col: Some(self.membership_col.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Inverse-odds balancing weights from the overlap model.
    Balancing,
    /// An explicit all-ones weight vector.
    Unit,
    /// No weights at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    All,
    Exclude,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapConfig {
    pub weighting: Weighting,
    pub policy: PolicyName,
    pub exclude: Vec<String>,
    pub top_k: usize,
    /// `none`, `absolute:<c>` or `quantile:<q>`.
    pub clip: String,
    pub positivity_floor: f64,
    pub logistic: LogisticOptions,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            weighting: Weighting::Balancing,
            policy: PolicyName::All,
            exclude: Vec::new(),
            top_k: 10,
            clip: ClipRule::default().to_string(),
            positivity_floor: transportlab::weights::DEFAULT_POSITIVITY_FLOOR,
            logistic: LogisticOptions::default(),
        }
    }
}

impl OverlapConfig {
    pub fn covariate_policy(&self) -> CovariatePolicy {
        match self.policy {
            PolicyName::All => CovariatePolicy::All,
            PolicyName::Exclude => CovariatePolicy::Exclude(self.exclude.clone()),
            PolicyName::TopK => CovariatePolicy::TopK(self.top_k),
        }
    }

    pub fn clip_rule(&self) -> Result<ClipRule> {
        Ok(self.clip.parse()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub level: f64,
    pub include_noise: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            level: 0.95,
            include_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub settings: Vec<Setting>,
    /// Also cross-validate BART against a random forest on the source.
    pub compare_models: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            settings: Setting::ALL.to_vec(),
            compare_models: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub p: usize,
    /// Target mean shift per covariate; empty means no shift.
    pub shift: Vec<f64>,
    pub truth: Truth,
    pub noise_sd: f64,
    /// Write target outcomes as missing.
    pub mask_target: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_source: 500,
            n_target: 500,
            p: 5,
            shift: Vec::new(),
            truth: Truth::Friedman,
            noise_sd: 1.0,
            mask_target: true,
        }
    }
}

impl SimulateConfig {
    pub fn spec(&self, seed: u64) -> ShiftSpec {
        ShiftSpec {
            n_source: self.n_source,
            n_target: self.n_target,
            p: self.p,
            shift: if self.shift.is_empty() { vec![0.0; self.p] } else { self.shift.clone() },
            truth: self.truth.clone(),
            noise_sd: self.noise_sd,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Save the fitted posterior as `model.bartpost`.
    pub save_model: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            save_model: true,
        }
    }
}

/// A parsed configuration together with the directory its relative paths
/// are resolved against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }

    /// Header line embedded in every artifact.
    pub fn header(&self) -> String {
        format!("transportlab config_hash={} seed={}", self.hash, self.config.seed)
    }
}

/// Applies `section.key=value` to a TOML table. The value is read as a TOML
/// value when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{assignment}' is not of the form section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key '{key}' has an empty component");
    }
    let value = parse_value(raw.trim());
    let mut t = table;
    for part in &path[..path.len() - 1] {
        t = t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{key}': '{part}' is not a table"))?;
    }
    t.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// SHA-256 of the canonical JSON form, first 16 hex digits.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("config does not match the expected layout")?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    let (text, base_dir) = match path {
        Some(p) => (
            std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    let base_dir = if base_dir.as_os_str().is_empty() { PathBuf::from(".") } else { base_dir };
    let config = parse_config(&text, overrides)?;
    let hash = config_hash(&config)?;
    Ok(LoadedConfig { config, base_dir, hash })
}

fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.bart.validate()?;
    cfg.overlap.clip_rule()?;
    if cfg.eval.k < 2 {
        bail!("eval.k must be at least 2");
    }
    if cfg.eval.settings.is_empty() {
        bail!("eval.settings must not be empty");
    }
    if !(cfg.predict.level > 0.0 && cfg.predict.level < 1.0) {
        bail!("predict.level must lie in (0, 1)");
    }
    let d = &cfg.data;
    if d.merged.is_some() && (d.source.is_some() || d.target.is_some()) {
        bail!("data.merged cannot be combined with data.source/data.target");
    }
    if d.source.is_some() != d.target.is_some() {
        bail!("data.source and data.target must be given together");
    }
    transportlab::data::validate_schema(&d.schema)?;
    if cfg.overlap.policy == PolicyName::Exclude {
        if let Some(bad) = cfg
            .overlap
            .exclude
            .iter()
            .find(|e| !d.schema.is_empty() && !d.schema.iter().any(|c| &c.name == *e))
        {
            bail!("overlap.exclude names '{bad}', which is not a schema column");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(parse_config("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_set_nested_keys() {
        let cfg = parse_config(
            "seed = 3\n[bart]\nn_trees = 10\n",
            &["bart.n_trees=20".into(), "overlap.clip=none".into(), "eval.settings=[\"weighted\"]".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.bart.n_trees, 20);
        assert_eq!(cfg.overlap.clip, "none");
        assert_eq!(cfg.eval.settings, vec![Setting::Weighted]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(parse_config("[bart]\nbeta = 1.5\n", &[]).is_err());
        assert!(parse_config("[overlap]\nclip = \"sometimes\"\n", &[]).is_err());
        assert!(parse_config("[typo]\nx = 1\n", &[]).is_err());
        assert!(parse_config("", &["noequals".into()]).is_err());
        assert!(parse_config("[data]\nsource = \"a.csv\"\n", &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config("seed = 1", &[]).unwrap();
        let b = parse_config("seed = 2", &[]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 16);
    }

    #[test]
    fn schema_entries_parse() {
        let cfg = parse_config(
            "[data]\nschema = [{ name = \"x\", kind = \"numeric\" }, { name = \"g\", kind = \"categorical\", categories = [\"a\", \"b\"] }]\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.data.schema[1], ColumnSchema::categorical("g", vec!["a", "b"]));
    }
}
