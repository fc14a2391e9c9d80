//! Run configuration shared by every CLI command.
//!
//! A run is described by one JSON file: input/output paths, pipeline
//! parameters, the LLM backend, the embedding model settings and a seed.
//! Unknown keys are rejected so typos fail loudly, and the loaded value
//! re-serializes to exactly what the run manifest records.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgc::KgcParams;
use crate::kgqa::QaConfig;
use crate::kge::{ModelKind, TrainConfig};
use crate::llm::HttpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Pipeline parameters for both completion and QA runs.
///
/// `k/n/m_cap/delta/gamma` drive completion: supporting triples, candidate
/// pool size, proposal cap, proposal position filter and supporting
/// sentences per triple. `M/N/D_max` drive QA: beam width, context list
/// length and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_m_cap")]
    pub m_cap: usize,
    #[serde(default = "d_delta")]
    pub delta: usize,
    #[serde(default = "d_gamma")]
    pub gamma: usize,
    #[serde(rename = "M", default = "d_beam")]
    pub beam_width: usize,
    #[serde(rename = "N", default = "d_ctx")]
    pub context_size: usize,
    #[serde(rename = "D_max", default = "d_depth")]
    pub max_depth: usize,
    #[serde(default = "d_retries")]
    pub retries: usize,
}

fn d_k() -> usize {
    4
}
fn d_n() -> usize {
    20
}
fn d_m_cap() -> usize {
    20
}
fn d_delta() -> usize {
    50
}
fn d_gamma() -> usize {
    3
}
fn d_beam() -> usize {
    3
}
fn d_ctx() -> usize {
    10
}
fn d_depth() -> usize {
    3
}
fn d_retries() -> usize {
    1
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            k: d_k(),
            n: d_n(),
            m_cap: d_m_cap(),
            delta: d_delta(),
            gamma: d_gamma(),
            beam_width: d_beam(),
            context_size: d_ctx(),
            max_depth: d_depth(),
            retries: d_retries(),
        }
    }
}

impl PipelineParams {
    pub fn kgc(&self) -> KgcParams {
        KgcParams {
            k: self.k,
            n: self.n,
            delta: self.delta,
            gamma: self.gamma,
            m_cap: self.m_cap,
            retries: self.retries,
        }
    }

    pub fn qa(&self) -> QaConfig {
        QaConfig {
            m: self.beam_width,
            n: self.context_size,
            gamma: self.gamma,
            d_max: self.max_depth,
            retries: self.retries,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n", self.n),
            ("m_cap", self.m_cap),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("M", self.beam_width),
            ("N", self.context_size),
            ("D_max", self.max_depth),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("params.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Which LLM answers prompts: a deterministic script or a chat endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "d_backend_kind")]
    pub kind: BackendKind,
    /// Required when `kind` is `http`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
}

fn d_backend_kind() -> BackendKind {
    BackendKind::Scripted
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            http: None,
        }
    }
}

/// Every file a command may read or write. Commands check for the paths
/// they need and fail with a clear message when one is missing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Train-split triples, one `h<TAB>r<TAB>t` per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Saved graph snapshot; when set it replaces the three triple files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    /// Native-id → external-id table (2-column TSV).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// Offline entity-context dump (JSON lines keyed by external id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_dump: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_contexts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_contexts: Option<PathBuf>,
    /// Embedding model checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Scripted-backend rules (JSON lines of match/reply pairs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// QA dataset (JSON lines of question/topic_entities/answers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_dataset: Option<PathBuf>,
}

/// The complete, self-contained description of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_model_kind")]
    pub model: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub params: PipelineParams,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn d_model_kind() -> ModelKind {
    ModelKind::ComplEx
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: d_model_kind(),
            train: TrainConfig::default(),
            params: PipelineParams::default(),
            backend: BackendConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads and validates a config file. Unknown keys are an error.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref()).map_err(|source| ConfigError::Io {
            path: path_str.clone(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path_str,
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate()?;
        if self.backend.kind == BackendKind::Http && self.backend.http.is_none() {
            return Err(ConfigError::Invalid(
                "backend.kind is \"http\" but backend.http is missing".into(),
            ));
        }
        if self.train.dimension == 0 {
            return Err(ConfigError::Invalid("train.dimension must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("train.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
