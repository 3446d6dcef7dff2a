//! Service configuration: optional JSON file, then environment overrides.

use std::path::{Path, PathBuf};

use lgbo_core::engine::RunConfig;
use lgbo_core::provider::ProviderKind;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "LGBO_DATA_DIR";
pub const LISTEN_ENV: &str = "LGBO_LISTEN";
pub const PROVIDER_ENV: &str = "LGBO_PROVIDER";
pub const MODEL_ENV: &str = "LGBO_LLM_MODEL";
pub const SCRIPT_ENV: &str = "LGBO_SCRIPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen: String,
    /// Run settings new campaigns start from; a creation request may
    /// override any field.
    pub defaults: RunConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("campaigns"),
            listen: "127.0.0.1:8080".into(),
            defaults: RunConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{var}: {detail}")]
    Env { var: &'static str, detail: String },
}

impl ServiceConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_owned(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_owned(),
                    source,
                })?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Environment overrides, read through `get` so tests need not touch
    /// the process environment.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(DATA_DIR_ENV) {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get(LISTEN_ENV) {
            self.listen = v;
        }
        if let Some(v) = get(PROVIDER_ENV) {
            self.defaults.provider.kind = v.parse::<ProviderKind>().map_err(|detail| ConfigError::Env {
                var: PROVIDER_ENV,
                detail,
            })?;
        }
        if let Some(v) = get(MODEL_ENV) {
            self.defaults.provider.model = v;
        }
        if let Some(v) = get(SCRIPT_ENV) {
            self.defaults.provider.script_path = Some(PathBuf::from(v));
        }
        Ok(())
    }
}
