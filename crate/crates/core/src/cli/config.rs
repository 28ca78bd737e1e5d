//! Run configuration: one TOML file, overridable by `ASGL_*` environment variables and
//! `--set key=value` flags (in that order of precedence).

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{ResponseColumn, SplitSpec};
use crate::error::{Error, Result};
use crate::genomics::PreprocessSpec;
use crate::loss::QuantileLevel;
use crate::select::Grid;
use crate::simulation::{ModelConfig, Scenario, ScenarioName};
use crate::solver::SolverOptions;
use crate::weights::WeightScheme;

pub const ENV_PREFIX: &str = "ASGL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub solver: SolverOptions,
    pub grid: Grid,
    pub data: Option<DataConfig>,
    pub fit: Option<FitConfig>,
    pub grid_search: Option<GridSearchConfig>,
    pub simulate: Option<SimulateConfig>,
    pub preprocess: Option<PreprocessSpec>,
    pub cluster: Option<ClusterConfig>,
    pub stability: Option<StabilityConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            threads: None,
            solver: SolverOptions::default(),
            grid: Grid::default(),
            data: None,
            fit: None,
            grid_search: None,
            simulate: None,
            preprocess: None,
            cluster: None,
            stability: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    Singletons,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum GroupsConfig {
    Rule(GroupRule),
    File { file: PathBuf },
}

impl Default for GroupsConfig {
    fn default() -> Self {
        GroupsConfig::Rule(GroupRule::Singletons)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "yes")]
    pub has_header: bool,
    #[serde(default = "last_column")]
    pub response: ResponseColumn,
    #[serde(default)]
    pub groups: GroupsConfig,
    /// Standardize covariates with parameters estimated on the training rows.
    #[serde(default)]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

fn last_column() -> ResponseColumn {
    ResponseColumn::Name("y".into())
}

fn median() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "median")]
    pub tau: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    #[schemars(range(min = 0.0, max = 1.0))]
    pub alpha: f64,
    /// Adaptive weights estimated on the same data; unit weights when absent.
    #[serde(default)]
    pub weights: Option<WeightScheme>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_val: usize,
    #[serde(default)]
    pub n_test: usize,
}

impl SplitSizes {
    pub fn with_seed(self, seed: u64) -> SplitSpec {
        SplitSpec {
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSearchConfig {
    #[serde(default = "median")]
    pub tau: f64,
    pub split: SplitSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: ScenarioName,
    /// Full scenario definition, required when `scenario = "custom"`.
    #[serde(default)]
    pub custom: Option<Scenario>,
    #[schemars(range(min = 1))]
    pub repetitions: usize,
    pub models: Vec<ModelConfig>,
    #[serde(default = "median")]
    pub tau: f64,
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default = "zero_tol")]
    pub zero_tol: f64,
}

fn zero_tol() -> f64 {
    crate::select::DEFAULT_ZERO_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Cluster the standardized covariates.
    pub standardize: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    pub models: Vec<ModelConfig>,
    #[serde(default = "twenty")]
    pub repetitions: usize,
    #[serde(default = "stability_split")]
    pub split: SplitSizes,
    #[serde(default = "half")]
    #[schemars(range(min = 0.0, max = 1.0))]
    pub threshold: f64,
    #[serde(default = "zero_tol")]
    pub zero_tol: f64,
}

fn default_taus() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}

fn twenty() -> usize {
    20
}

fn half() -> f64 {
    0.5
}

fn stability_split() -> SplitSizes {
    SplitSizes {
        n_train: 80,
        n_val: 20,
        n_test: 20,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    GridSearch,
    Simulate,
    Preprocess,
    Cluster,
    Stability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::GridSearch => "grid-search",
            Command::Simulate => "simulate",
            Command::Preprocess => "preprocess",
            Command::Cluster => "cluster",
            Command::Stability => "stability",
        }
    }
}

fn tau_of(name: &str, t: f64) -> Result<QuantileLevel> {
    QuantileLevel::new(t).map_err(|_| Error::invalid(name, format!("must lie in (0, 1), got {t}")))
}

fn missing(section: &str) -> Error {
    Error::invalid(section, "section is required for this subcommand")
}

impl RunConfig {
    /// Checks every section the subcommand reads.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        self.solver.validate().map_err(|e| prefix("solver", e))?;
        if self.threads == Some(0) {
            return Err(Error::invalid("threads", "must be at least 1"));
        }
        let needs_data = !matches!(cmd, Command::Simulate);
        if needs_data && self.data.is_none() {
            return Err(missing("data"));
        }
        match cmd {
            Command::Fit => {
                let f = self.fit.as_ref().ok_or_else(|| missing("fit"))?;
                tau_of("fit.tau", f.tau)?;
                if !(f.lambda.is_finite() && f.lambda >= 0.0) {
                    return Err(Error::invalid("fit.lambda", format!("must be finite and >= 0, got {}", f.lambda)));
                }
                if !(0.0..=1.0).contains(&f.alpha) {
                    return Err(Error::invalid("fit.alpha", format!("must lie in [0, 1], got {}", f.alpha)));
                }
                if let Some(w) = &f.weights {
                    w.validate().map_err(|e| prefix("fit.weights", e))?;
                }
            }
            Command::GridSearch => {
                let g = self.grid_search.as_ref().ok_or_else(|| missing("grid_search"))?;
                tau_of("grid_search.tau", g.tau)?;
                if g.split.n_train == 0 || g.split.n_val == 0 {
                    return Err(Error::invalid("grid_search.split", "n_train and n_val must be positive"));
                }
                self.grid.validate().map_err(|e| prefix("", e))?;
            }
            Command::Simulate => {
                let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
                if s.repetitions == 0 {
                    return Err(Error::invalid("simulate.repetitions", "must be at least 1"));
                }
                if s.models.is_empty() {
                    return Err(Error::invalid("simulate.models", "must not be empty"));
                }
                tau_of("simulate.tau", s.tau)?;
                self.scenario()?.validate().map_err(|e| prefix("simulate.custom", e))?;
                for m in &s.models {
                    m.grid(&self.grid).validate().map_err(|e| prefix("", e))?;
                }
            }
            Command::Preprocess => {
                self.preprocess_spec().validate().map_err(|e| prefix("preprocess", e))?;
            }
            Command::Cluster => {}
            Command::Stability => {
                let s = self.stability.as_ref().ok_or_else(|| missing("stability"))?;
                if s.repetitions == 0 {
                    return Err(Error::invalid("stability.repetitions", "must be at least 1"));
                }
                if s.taus.is_empty() {
                    return Err(Error::invalid("stability.taus", "must not be empty"));
                }
                for &t in &s.taus {
                    tau_of("stability.taus", t)?;
                }
                if s.models.is_empty() {
                    return Err(Error::invalid("stability.models", "must not be empty"));
                }
                if s.split.n_train == 0 || s.split.n_val == 0 {
                    return Err(Error::invalid("stability.split", "n_train and n_val must be positive"));
                }
                if !(0.0..1.0).contains(&s.threshold) {
                    return Err(Error::invalid("stability.threshold", "must lie in [0, 1)"));
                }
                for m in &s.models {
                    m.grid(&self.grid).validate().map_err(|e| prefix("", e))?;
                }
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
        match (s.scenario, &s.custom) {
            (ScenarioName::Custom, Some(c)) => Ok(Scenario {
                name: ScenarioName::Custom,
                ..c.clone()
            }),
            (ScenarioName::Custom, None) => Err(Error::invalid("simulate.custom", "required for scenario `custom`")),
            (name, _) => Scenario::preset(name),
        }
    }

    pub fn preprocess_spec(&self) -> PreprocessSpec {
        self.preprocess.clone().unwrap_or_default()
    }

    /// Resolves relative data paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(d) = &mut self.data {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
            if let GroupsConfig::File { file } = &mut d.groups {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
            }
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } if !section.is_empty() => Error::InvalidParameter {
            name: format!("{section}.{name}"),
            reason,
        },
        Error::InvalidParameter { name, reason } => Error::InvalidParameter { name, reason },
        other => other,
    }
}

/// Parses a scalar the way TOML would, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid("--set", format!("malformed key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `key=value` override.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("--set", format!("expected key=value, got `{assignment}`")))?;
    set_path(root, key.trim(), parse_value(raw.trim()))
}

/// `ASGL_SIMULATE__REPETITIONS=3` sets `simulate.repetitions = 3`.
pub fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<String> {
    let mut out: Vec<String> = vars
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            if rest.is_empty() {
                return None;
            }
            let key = rest.to_ascii_lowercase().replace("__", ".");
            Some(format!("{key}={v}"))
        })
        .collect();
    out.sort();
    out
}

/// Reads the config file and applies overrides; relative paths resolve against the
/// file's directory.
pub fn load(path: &Path, env: &[String], sets: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut root: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::invalid("config", format!("{}: {}", path.display(), e.message())))?;
    for a in env.iter().chain(sets) {
        apply_override(&mut root, a)?;
    }
    let mut cfg: RunConfig = RunConfig::deserialize(root).map_err(|e| Error::invalid("config", e.message().to_string()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
