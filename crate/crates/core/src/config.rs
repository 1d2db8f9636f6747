//! Service configuration shared by the HTTP server and the CLI.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! store_path = "woundwatch.store"
//! ensemble_config = "ensemble.json"   # optional; defaults to the reference roster
//!
//! [auth]
//! token = "…"
//! admin_token = "…"
//! dev_mode = false
//!
//! [[backends]]
//! model_id = "ResNet50"
//! kind = "stub"
//! seed = 1
//! ```
//!
//! Environment variables override the file: `WOUNDWATCH_LISTEN`,
//! `WOUNDWATCH_STORE`, `WOUNDWATCH_TOKEN`, `WOUNDWATCH_ADMIN_TOKEN`,
//! `WOUNDWATCH_DEV_MODE` and `WOUNDWATCH_ENSEMBLE_CONFIG`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{build_backends, BackendEntry, BackendError, BackendSpec, ClassifierBackend, Normalization};
use crate::error::{Coded, ErrorClass};
use crate::fusion::{EnsembleConfig, FusionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("ensemble configuration: {0}")]
    Ensemble(#[from] FusionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Coded for ConfigError {
    fn code(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "config_io",
            ConfigError::Parse { .. } => "config_parse",
            ConfigError::Invalid(_) => "config_invalid",
            ConfigError::Ensemble(_) => "config_ensemble",
            ConfigError::Backend(e) => e.code(),
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            ConfigError::Backend(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthConfig {
    /// Bearer token for ordinary endpoints.
    #[serde(default)]
    pub token: Option<String>,
    /// Bearer token for admin endpoints; also accepted everywhere else.
    #[serde(default)]
    pub admin_token: Option<String>,
    /// Skip authentication entirely. For local development only.
    #[serde(default)]
    pub dev_mode: bool,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_store() -> PathBuf {
    PathBuf::from("woundwatch.store")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_store")]
    pub store_path: PathBuf,
    #[serde(default)]
    pub ensemble_config: Option<PathBuf>,
    #[serde(default)]
    pub auth: AuthConfig,
    #[serde(default)]
    pub preprocess: Normalization,
    #[serde(default = "default_backends")]
    pub backends: Vec<BackendEntry>,
    /// Directory relative paths resolve against; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Seeded random stubs for the reference roster.
pub fn default_backends() -> Vec<BackendEntry> {
    EnsembleConfig::reference_default()
        .member_ids()
        .enumerate()
        .map(|(i, id)| BackendEntry {
            model_id: id.clone(),
            spec: BackendSpec::Stub {
                seed: i as u64 + 1,
                profile: Default::default(),
            },
        })
        .collect()
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: default_listen(),
            store_path: default_store(),
            ensemble_config: None,
            auth: AuthConfig::default(),
            preprocess: Normalization::default(),
            backends: default_backends(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.display().to_string(),
            message: e.to_string(),
        })?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Apply `WOUNDWATCH_*` overrides from the given lookup (normally
    /// `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("WOUNDWATCH_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = lookup("WOUNDWATCH_STORE") {
            self.store_path = PathBuf::from(v);
        }
        if let Some(v) = lookup("WOUNDWATCH_TOKEN") {
            self.auth.token = Some(v);
        }
        if let Some(v) = lookup("WOUNDWATCH_ADMIN_TOKEN") {
            self.auth.admin_token = Some(v);
        }
        if let Some(v) = lookup("WOUNDWATCH_ENSEMBLE_CONFIG") {
            self.ensemble_config = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("WOUNDWATCH_DEV_MODE") {
            self.auth.dev_mode = match v.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => true,
                "0" | "false" | "no" | "off" | "" => false,
                other => return Err(ConfigError::Invalid(format!("WOUNDWATCH_DEV_MODE={other:?}"))),
            };
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn store_file(&self) -> PathBuf {
        self.resolve(&self.store_path)
    }

    /// The ensemble roster: from `ensemble_config` (JSON, or TOML by
    /// extension) or the reference default.
    pub fn ensemble(&self) -> Result<EnsembleConfig, ConfigError> {
        let Some(rel) = &self.ensemble_config else {
            return Ok(EnsembleConfig::reference_default());
        };
        let path = self.resolve(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        };
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// Check that the configuration can serve requests: auth is set up and
    /// the classification pipeline is consistent.
    pub fn validate(&self) -> Result<EnsembleConfig, ConfigError> {
        if !self.auth.dev_mode && self.auth.token.is_none() && self.auth.admin_token.is_none() {
            return Err(ConfigError::Invalid(
                "set auth.token (or auth.admin_token), or enable auth.dev_mode".into(),
            ));
        }
        self.pipeline()
    }

    /// The ensemble, after checking that normalization is sane and the
    /// backends line up with the ensemble members.
    pub fn pipeline(&self) -> Result<EnsembleConfig, ConfigError> {
        self.preprocess.validate()?;
        let ensemble = self.ensemble()?;
        let configured: Vec<&str> = self.backends.iter().map(|b| b.model_id.as_str()).collect();
        let members: Vec<&str> = ensemble.member_ids().map(|m| m.as_str()).collect();
        if configured != members {
            return Err(ConfigError::Invalid(format!(
                "backends {configured:?} must match ensemble members {members:?} in order"
            )));
        }
        Ok(ensemble)
    }

    pub fn build_backends(&self) -> Result<Vec<Arc<dyn ClassifierBackend>>, ConfigError> {
        Ok(build_backends(&self.backends, &self.base_dir)?)
    }
}
