//! TOML configuration shared by `serve` and `worker`.
//!
//! ```toml
//! [service]
//! listen = "127.0.0.1:8080"
//! storage_root = "/srv/somnoline"
//! internal_secret = "change me"
//! users_file = "/srv/somnoline/users.json"
//!
//! [workers]
//! in_process = true
//! server = "http://127.0.0.1:8080"
//! gray_threshold = 0.73
//!
//! [workers.scorer]
//! kind = "baseline"
//! channel = "EEG C4-M1"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use somnoline_core::edf::DEFAULT_GAP_THRESHOLD_S;
use somnoline_core::gray::DEFAULT_THRESHOLD;
use somnoline_core::scoring::{ScorerConfig, ScorerKind};
use somnoline_core::staging::DEFAULT_EPOCH_LENGTH_S;
use somnoline_pipeline::ProcessorConfig;
use somnoline_service::ServiceConfig;

use crate::CliError;

pub const CONFIG_ENV: &str = "SOMNOLINE_CONFIG";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub service: Option<ServiceConfig>,
    #[serde(default)]
    pub workers: WorkerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    /// Run a splitter and a processor inside `serve`.
    #[serde(default)]
    pub in_process: bool,
    /// Service base URL for `worker`.
    #[serde(default)]
    pub server: Option<String>,
    /// Defaults to the service's storage root.
    #[serde(default)]
    pub storage_root: Option<PathBuf>,
    /// Defaults to the service's internal secret.
    #[serde(default)]
    pub internal_secret: Option<String>,
    #[serde(default = "default_gap")]
    pub gap_s: f64,
    #[serde(default = "default_threshold")]
    pub gray_threshold: f64,
    #[serde(default = "default_epoch")]
    pub epoch_length_s: f64,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerConfig,
}

fn default_gap() -> f64 {
    DEFAULT_GAP_THRESHOLD_S
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_epoch() -> f64 {
    DEFAULT_EPOCH_LENGTH_S
}

fn default_scorer() -> ScorerConfig {
    ScorerConfig {
        kind: ScorerKind::Baseline,
        source: None,
        channel: Some("EEG C4-M1".into()),
        coefficients: None,
    }
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            in_process: false,
            server: None,
            storage_root: None,
            internal_secret: None,
            gap_s: default_gap(),
            gray_threshold: default_threshold(),
            epoch_length_s: default_epoch(),
            scorer: default_scorer(),
        }
    }
}

impl FileConfig {
    /// Reads `path`, or the file named by `SOMNOLINE_CONFIG` when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => PathBuf::from(p),
                None => return Err(CliError::Usage(format!("no --config given and {CONFIG_ENV} is not set"))),
            },
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn service(&self) -> Result<&ServiceConfig, CliError> {
        self.service
            .as_ref()
            .ok_or_else(|| CliError::Usage("config has no [service] section".into()))
    }

    pub fn processor(&self) -> Result<ProcessorConfig, CliError> {
        let w = &self.workers;
        Ok(ProcessorConfig {
            scorer: w.scorer.to_spec().map_err(|e| CliError::Usage(e.to_string()))?,
            gray_threshold: w.gray_threshold,
            epoch_length_s: w.epoch_length_s,
        })
    }

    pub fn worker_storage(&self) -> Result<PathBuf, CliError> {
        self.workers
            .storage_root
            .clone()
            .or_else(|| self.service.as_ref().map(|s| s.storage_root.clone()))
            .ok_or_else(|| CliError::Usage("set workers.storage_root or [service] storage_root".into()))
    }

    pub fn worker_secret(&self) -> Result<String, CliError> {
        self.workers
            .internal_secret
            .clone()
            .or_else(|| self.service.as_ref().map(|s| s.internal_secret.clone()))
            .ok_or_else(|| CliError::Usage("set workers.internal_secret or [service] internal_secret".into()))
    }
}
