//! Run configuration, read from TOML.
//!
//! Relative data paths resolve against the directory of the config file.
//! Validation errors always name the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentSettings, RiskMode, DEFAULT_K_TOP, DEFAULT_M_WINDOW, DEFAULT_SWITCH_WINDOW};
use crate::backtest::{BacktestSettings, Windows};
use crate::embedding::DEFAULT_EMBEDDING_DIM;
use crate::llm::{DEFAULT_MAX_RETRIES, DEFAULT_TEMPERATURE};
use crate::memory::{LayerParams, MemoryParams, DEFAULT_PROMOTION_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// OHLCV CSV.
    pub prices: PathBuf,
    /// JSONL documents.
    pub documents: PathBuf,
    /// Per-ticker sector metadata JSON.
    pub metadata: PathBuf,
    /// Mock rulebook JSON; the built-in lexicon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rulebook: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerSettings {
    pub shallow: LayerParams,
    pub intermediate: LayerParams,
    pub deep: LayerParams,
}

impl Default for LayerSettings {
    fn default() -> Self {
        Self {
            shallow: LayerParams::SHALLOW,
            intermediate: LayerParams::INTERMEDIATE,
            deep: LayerParams::DEEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteSettings {
    pub llm_model: String,
    pub llm_timeout_secs: u64,
    pub llm_max_retries: u32,
    pub embedding_endpoint: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub embedding_timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            llm_model: "gpt-4-turbo".into(),
            llm_timeout_secs: 60,
            llm_max_retries: 3,
            embedding_endpoint: "https://api.openai.com/v1/embeddings".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dim: 1536,
            embedding_timeout_secs: 30,
            max_in_flight: 4,
        }
    }
}

fn default_risk() -> RiskMode {
    RiskMode::SelfAdaptive
}
fn default_k_top() -> usize {
    DEFAULT_K_TOP
}
fn default_m_window() -> usize {
    DEFAULT_M_WINDOW
}
fn default_switch_window() -> usize {
    DEFAULT_SWITCH_WINDOW
}
fn default_promotion_threshold() -> u32 {
    DEFAULT_PROMOTION_THRESHOLD
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_annualize() -> bool {
    true
}
fn default_embedding_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ticker: String,
    /// Required for mock runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub provider: ProviderKind,
    #[serde(default = "default_risk")]
    pub risk: RiskMode,
    #[serde(default = "default_k_top")]
    pub k_top: usize,
    #[serde(default = "default_m_window")]
    pub m_window: usize,
    #[serde(default = "default_switch_window")]
    pub switch_window: usize,
    #[serde(default = "default_promotion_threshold")]
    pub promotion_threshold: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub risk_free_daily: f64,
    #[serde(default = "default_annualize")]
    pub annualize_sharpe: bool,
    /// Dimension of the local hash embedder used by mock runs.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub windows: Windows,
    #[serde(default)]
    pub layers: LayerSettings,
    #[serde(default)]
    pub remote: RemoteSettings,
}

impl RunConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(ticker: impl Into<String>, data: DataPaths, windows: Windows) -> Self {
        Self {
            ticker: ticker.into(),
            seed: None,
            provider: ProviderKind::Mock,
            risk: default_risk(),
            k_top: DEFAULT_K_TOP,
            m_window: DEFAULT_M_WINDOW,
            switch_window: DEFAULT_SWITCH_WINDOW,
            promotion_threshold: DEFAULT_PROMOTION_THRESHOLD,
            temperature: DEFAULT_TEMPERATURE,
            max_retries: DEFAULT_MAX_RETRIES,
            risk_free_daily: 0.0,
            annualize_sharpe: true,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            output_dir: default_output_dir(),
            data,
            windows,
            layers: LayerSettings::default(),
            remote: RemoteSettings::default(),
        }
    }

    /// Parses without validating or resolving paths.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Reads, resolves relative paths against the file's directory, and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.prices);
        fix(&mut self.data.documents);
        fix(&mut self.data.metadata);
        if let Some(r) = self.data.rulebook.as_mut() {
            fix(r);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ticker.trim().is_empty() {
            return Err(invalid("ticker", "must not be empty"));
        }
        if self.provider == ProviderKind::Mock && self.seed.is_none() {
            return Err(invalid("seed", "required when provider = \"mock\""));
        }
        for (field, value) in [
            ("k_top", self.k_top),
            ("m_window", self.m_window),
            ("switch_window", self.switch_window),
            ("embedding_dim", self.embedding_dim),
        ] {
            if value == 0 {
                return Err(invalid(field, "must be >= 1"));
            }
        }
        if self.promotion_threshold == 0 {
            return Err(invalid("promotion_threshold", "must be >= 1"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(invalid("temperature", "must lie in [0, 2]"));
        }
        if !self.risk_free_daily.is_finite() {
            return Err(invalid("risk_free_daily", "must be finite"));
        }
        let w = &self.windows;
        if w.train_start > w.train_end {
            return Err(invalid("windows.train_end", "must not precede train_start"));
        }
        if w.train_end >= w.test_start {
            return Err(invalid("windows.test_start", "must come after train_end"));
        }
        if w.test_start > w.test_end {
            return Err(invalid("windows.test_end", "must not precede test_start"));
        }
        if let Err(crate::memory::MemoryError::InvalidParams { layer, reason }) =
            self.memory_params().validate()
        {
            return Err(invalid(&format!("layers.{layer}"), reason));
        }
        Ok(())
    }

    pub fn memory_params(&self) -> MemoryParams {
        MemoryParams {
            shallow: self.layers.shallow,
            intermediate: self.layers.intermediate,
            deep: self.layers.deep,
            promotion_threshold: self.promotion_threshold,
        }
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            k_top: self.k_top,
            m_window: self.m_window,
            temperature: self.temperature,
        }
    }

    pub fn backtest_settings(&self) -> BacktestSettings {
        BacktestSettings {
            risk_free_daily: self.risk_free_daily,
            annualize_sharpe: self.annualize_sharpe,
        }
    }
}
