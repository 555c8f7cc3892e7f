//! Gateway configuration: a TOML file plus environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! mode = "full"
//! max_concurrent = 64
//! request_timeout_ms = 30000
//! log_prompts = false
//! # rules = "rules/default.toml"
//! # prompts_dir = "prompts"
//!
//! [providers.embedder]
//! kind = "http"
//! url = "http://127.0.0.1:9000/embed"
//! ```
//!
//! Without a `[providers]` table every backend is a deterministic mock.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use promptgate::pipeline::Mode;
use promptgate::providers::{
    ChatConfig, CheckerConfig, EmbedderConfig, GeneratorConfig, ProviderConfig, ProviderConfigError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_LISTEN: &str = "PROMPTGATE_LISTEN";
pub const ENV_RULES: &str = "PROMPTGATE_RULES";
pub const ENV_MODE: &str = "PROMPTGATE_MODE";
pub const ENV_EMBEDDER_URL: &str = "PROMPTGATE_EMBEDDER_URL";
pub const ENV_CHAT_URL: &str = "PROMPTGATE_CHAT_URL";
pub const ENV_GENERATOR_URL: &str = "PROMPTGATE_GENERATOR_URL";
pub const ENV_CHECKER_URL: &str = "PROMPTGATE_CHECKER_URL";

const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Error)]
pub enum ServiceConfigError {
    #[error("failed to read service config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse service config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid service config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Providers(#[from] ProviderConfigError),
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_concurrent() -> usize {
    64
}

fn default_request_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Rule file; the bundled rules when absent.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    /// Directory with replacement system prompts.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    /// Include prompt text in audit log lines.
    #[serde(default)]
    pub log_prompts: bool,
    #[serde(default)]
    pub providers: ProviderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            rules: None,
            prompts_dir: None,
            mode: Mode::Full,
            max_concurrent: default_max_concurrent(),
            request_timeout_ms: DEFAULT_TIMEOUT_MS,
            log_prompts: false,
            providers: ProviderConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Parses without validating, so environment overrides can still apply.
    pub fn from_toml_str(text: &str) -> Result<Self, ServiceConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ServiceConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `PROMPTGATE_*` overrides read through `lookup`. A provider URL
    /// override switches that provider to HTTP, keeping a configured timeout.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ServiceConfigError> {
        if let Some(v) = lookup(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = lookup(ENV_RULES) {
            self.rules = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_MODE) {
            self.mode = v.parse().map_err(ServiceConfigError::Invalid)?;
        }
        if let Some(url) = lookup(ENV_EMBEDDER_URL) {
            let timeout_ms = match &self.providers.embedder {
                EmbedderConfig::Http { timeout_ms, .. } => *timeout_ms,
                EmbedderConfig::Mock { .. } => DEFAULT_TIMEOUT_MS,
            };
            self.providers.embedder = EmbedderConfig::Http { url, timeout_ms };
        }
        if let Some(url) = lookup(ENV_CHAT_URL) {
            let timeout_ms = match &self.providers.chat {
                ChatConfig::Http { timeout_ms, .. } => *timeout_ms,
                ChatConfig::Scripted { .. } => DEFAULT_TIMEOUT_MS,
            };
            self.providers.chat = ChatConfig::Http { url, timeout_ms };
        }
        if let Some(url) = lookup(ENV_GENERATOR_URL) {
            let timeout_ms = match &self.providers.generator {
                Some(GeneratorConfig::Http { timeout_ms, .. }) => *timeout_ms,
                _ => DEFAULT_TIMEOUT_MS,
            };
            self.providers.generator = Some(GeneratorConfig::Http { url, timeout_ms });
        }
        if let Some(url) = lookup(ENV_CHECKER_URL) {
            let timeout_ms = match &self.providers.checker {
                Some(CheckerConfig::Http { timeout_ms, .. }) => *timeout_ms,
                _ => DEFAULT_TIMEOUT_MS,
            };
            self.providers.checker = Some(CheckerConfig::Http { url, timeout_ms });
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), ServiceConfigError> {
        self.apply_env(|k| std::env::var(k).ok())
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ServiceConfigError> {
        self.listen.parse().map_err(|e| {
            ServiceConfigError::Invalid(format!("listen address {:?}: {e}", self.listen))
        })
    }

    pub fn validate(&self) -> Result<(), ServiceConfigError> {
        self.listen_addr()?;
        if self.max_concurrent == 0 {
            return Err(ServiceConfigError::Invalid(
                "max_concurrent must be > 0".into(),
            ));
        }
        if self.request_timeout_ms == 0 {
            return Err(ServiceConfigError::Invalid(
                "request_timeout_ms must be > 0".into(),
            ));
        }
        if self.mode == Mode::Full
            && (self.providers.generator.is_none() || self.providers.checker.is_none())
        {
            return Err(ServiceConfigError::Invalid(
                "full mode needs generator and checker providers".into(),
            ));
        }
        self.providers.validate()?;
        Ok(())
    }
}
