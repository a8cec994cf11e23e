//! TOML run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::executor::{DEFAULT_FLOAT_TOLERANCE, DEFAULT_TIMEOUT_MS};
use crate::llm::{connect, Agent, ProviderConfig};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    /// Defaults to `<run_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Reserved; every default is deterministic.
    #[serde(default)]
    pub run_seed: u64,
    pub dataset: DatasetConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub prompts: PromptsConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub router: RouterConfig,
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding `database/<db_id>/<db_id>.sqlite`.
    pub root: PathBuf,
    /// Defaults to `<root>/tables.json`.
    #[serde(default)]
    pub tables: Option<PathBuf>,
    /// Defaults to `<root>/dev.json`.
    #[serde(default)]
    pub examples: Option<PathBuf>,
    #[serde(default)]
    pub limit: Option<usize>,
}

impl DatasetConfig {
    pub fn tables_path(&self) -> PathBuf {
        self.tables.clone().unwrap_or_else(|| self.root.join("tables.json"))
    }

    pub fn examples_path(&self) -> PathBuf {
        self.examples.clone().unwrap_or_else(|| self.root.join("dev.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub reasoning: EndpointConfig,
    pub coding: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub model_id: String,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub stage_temperatures: BTreeMap<String, f64>,
}

fn default_max_tokens() -> u32 {
    1024
}

impl EndpointConfig {
    pub fn agent(&self) -> Result<Agent, HarnessError> {
        let mut agent = Agent::new(self.model_id.clone(), connect(&self.provider)?);
        agent.temperature = self.temperature;
        agent.max_tokens = self.max_tokens;
        agent.stage_temperatures = self.stage_temperatures.clone();
        Ok(agent)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub fewshot_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_tolerance")]
    pub float_tolerance: f64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}
fn default_tolerance() -> f64 {
    DEFAULT_FLOAT_TOLERANCE
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            float_tolerance: DEFAULT_FLOAT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterChoice {
    Heuristic,
    Logistic,
    Judge,
    Oracle,
    /// Per-example scores computed outside this crate.
    ScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    #[serde(default = "default_router_kind")]
    pub kind: RouterChoice,
    #[serde(default = "default_threshold")]
    pub table_threshold: u32,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default)]
    pub score_file: Option<PathBuf>,
}

fn default_router_kind() -> RouterChoice {
    RouterChoice::Heuristic
}
fn default_threshold() -> u32 {
    5
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            kind: default_router_kind(),
            table_threshold: default_threshold(),
            model_file: None,
            score_file: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.worker_count == 0 {
            return Err(HarnessError::Config("worker_count must be >= 1".into()));
        }
        if self.executor.float_tolerance.is_nan() || self.executor.float_tolerance < 0.0 {
            return Err(HarnessError::Config("executor.float_tolerance must be >= 0".into()));
        }
        if self.router.table_threshold == 0 {
            return Err(HarnessError::Config("router.table_threshold must be positive".into()));
        }
        self.pipeline.validate()?;
        self.models.reasoning.provider.validate()?;
        self.models.coding.provider.validate()?;
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.run_dir.join("cache"))
    }
}
