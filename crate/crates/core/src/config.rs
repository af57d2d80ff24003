//! TOML run configuration.
//!
//! Relative paths in a config file are resolved against the file's own
//! directory, so a config and its inputs can be moved together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortSpec, IngestionConfig};
use crate::inference::InferenceConfig;
use crate::prompt::PromptBudget;
use crate::response::VerifyMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// When set, every API route except `/health` requires this bearer token.
    pub bearer_token: Option<String>,
    /// Summaries longer than this (in characters) are audited as background
    /// jobs instead of inside the request.
    pub sync_char_limit: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            bearer_token: None,
            sync_char_limit: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Checklist JSON; the bundled checklist when absent.
    pub checklist: Option<PathBuf>,
    /// Prompt template; the bundled template when absent.
    pub template: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub admissions: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Fixed run id; otherwise derived from the run's inputs.
    pub run_id: Option<String>,
    pub mode: VerifyMode,
    pub workers: usize,
    pub repair: bool,
    pub max_prompt_tokens: usize,
    /// Stratified sample to draw; every eligible note when absent.
    pub cohort: Option<CohortSpec>,
    pub ingestion: IngestionConfig,
    pub backend: BackendChoice,
    /// Recording to replay from (replay backend) or write to (`record`).
    pub recording: Option<PathBuf>,
    pub inference: InferenceConfig,
    pub server: ServerConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            checklist: None,
            template: None,
            notes: None,
            admissions: None,
            output_dir: PathBuf::from("audit_out"),
            run_id: None,
            mode: VerifyMode::Strict,
            workers: 4,
            repair: true,
            max_prompt_tokens: PromptBudget::default().max_prompt_tokens,
            cohort: None,
            ingestion: IngestionConfig::default(),
            backend: BackendChoice::Live,
            recording: None,
            inference: InferenceConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&raw, base).map_err(|e| match e {
            ConfigError::Toml { source, .. } => ConfigError::Toml {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    /// Parses TOML, resolving relative paths against `base_dir`.
    pub fn from_toml(raw: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AuditConfig = toml::from_str(raw).map_err(|source| ConfigError::Toml {
            path: "<inline>".into(),
            source,
        })?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for p in [
            &mut cfg.checklist,
            &mut cfg.template,
            &mut cfg.notes,
            &mut cfg.admissions,
            &mut cfg.recording,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be >= 1".into()));
        }
        if self.max_prompt_tokens == 0 {
            return Err(ConfigError::Invalid("max_prompt_tokens must be >= 1".into()));
        }
        if self.backend == BackendChoice::Replay && self.recording.is_none() {
            return Err(ConfigError::Invalid("replay backend needs a recording path".into()));
        }
        self.inference
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn budget(&self) -> PromptBudget {
        PromptBudget {
            max_prompt_tokens: self.max_prompt_tokens,
        }
    }
}
