//! Experiment configuration: one TOML document with sections that map onto
//! the library's config types. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use emflow_core::data::{DatasetSpec, ProblemSpec};
use emflow_core::flows::ArchitectureSpec;
use emflow_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::presets;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Mle,
    Vi,
    GenData,
    Verify,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Mle => "mle",
            Kind::Vi => "vi",
            Kind::GenData => "gen-data",
            Kind::Verify => "verify",
        }
    }
}

/// Dataset sizes and preprocessing for density estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: usize,
    pub test: usize,
    /// Per-channel z-scoring with training statistics. Reported NLLs are
    /// corrected back to the original units.
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { train: 10_000, test: 10_000, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub architecture: Option<ArchitectureSpec>,
    /// Program description file embedded as the structured layer, relative
    /// to the config file. Replaces `architecture.structure`.
    #[serde(default)]
    pub program: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    /// Cross-section checks that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!("a '{}' experiment needs a [{what}] section", self.kind.as_str())))
            }
        };
        match self.kind {
            Kind::Mle => {
                need(self.dataset.is_some(), "dataset")?;
                need(self.architecture.is_some(), "architecture")?;
            }
            Kind::Vi => {
                need(self.problem.is_some(), "problem")?;
                need(self.architecture.is_some(), "architecture")?;
            }
            Kind::GenData => need(self.dataset.is_some(), "dataset")?,
            Kind::Verify => {}
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if self.kind == Kind::Mle || self.kind == Kind::GenData {
            if self.data.train == 0 || self.data.test == 0 {
                return Err(CliError::Config("data.train and data.test must be positive".into()));
            }
        }
        if matches!(self.kind, Kind::Mle | Kind::Vi) {
            self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Reads the config text from a file or a named preset.
pub fn source_text(config: Option<&Path>, preset: Option<&str>) -> Result<String, CliError> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(CliError::Config("give either --config or --preset, not both".into())),
        (Some(p), None) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display()))),
        (None, Some(name)) => presets::get(name)
            .map(str::to_string)
            .ok_or_else(|| CliError::Config(format!("unknown preset '{name}'; known presets: {}", presets::names().join(", ")))),
        (None, None) => Err(CliError::Config("a --config file or --preset is required".into())),
    }
}

/// Sets `path` (dot-separated keys) to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override key '{path}'")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    };
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{path}': '{k}' is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// A validated config with the document it was read from, after overrides.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub doc: toml::Table,
}

impl Loaded {
    /// The resolved document, which reproduces the run when fed back in.
    pub fn resolved_text(&self) -> String {
        toml::to_string(&self.doc).unwrap_or_default()
    }
}

pub fn load(text: &str, overrides: &[String], seeds: &[u64]) -> Result<Loaded, CliError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if !seeds.is_empty() {
        let list = seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect();
        doc.insert("seeds".into(), toml::Value::Array(list));
    }
    let cfg: ExperimentConfig = toml::Value::Table(doc.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(Loaded { cfg, doc })
}

#[cfg(test)]
fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    load(text, overrides, &[]).map(|l| l.cfg)
}
