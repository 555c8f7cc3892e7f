//! TOML provider configuration shared by the CLI and the gateway.
//!
//! ```toml
//! [embedder]
//! kind = "http"
//! url = "http://127.0.0.1:9000/embed"
//! timeout_ms = 5000
//!
//! [chat]
//! kind = "scripted"
//! fallback = "strip"
//! script = { "a nude portrait" = "a marble statue portrait" }
//!
//! [generator]
//! kind = "mock"
//!
//! [checker]
//! kind = "mock"
//! ```
//!
//! Missing `embedder` / `chat` sections fall back to the mocks. Missing
//! `generator` / `checker` sections leave the image phases unconfigured.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    ChatFallback, HttpChatModel, HttpEmbedder, HttpImageGenerator, HttpSafetyChecker, MockChecker,
    MockEmbedder, MockGenerator, Providers, ScriptedChat, DEFAULT_MOCK_SEED, DEFAULT_TIMEOUT,
};
use crate::rules::RuleSet;

#[derive(Debug, Error)]
pub enum ProviderConfigError {
    #[error("failed to read provider config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse provider config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid provider config: {0}")]
    Invalid(String),
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT.as_millis() as u64
}

fn default_seed() -> u64 {
    DEFAULT_MOCK_SEED
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    Mock {
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Mock {
            seed: DEFAULT_MOCK_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackKind {
    #[default]
    Strip,
    Echo,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChatConfig {
    Scripted {
        #[serde(default)]
        fallback: FallbackKind,
        #[serde(default)]
        fixed_text: Option<String>,
        #[serde(default)]
        script: BTreeMap<String, String>,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig::Scripted {
            fallback: FallbackKind::Strip,
            fixed_text: None,
            script: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    Mock,
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CheckerConfig {
    Mock {
        #[serde(default)]
        extra_terms: Vec<String>,
        /// Treat prompts ending with the rule set's guidance suffix as safe.
        #[serde(default = "default_true")]
        style_exemption: bool,
        #[serde(default)]
        always_unsafe: bool,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub chat: ChatConfig,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub checker: Option<CheckerConfig>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderConfig::default(),
            chat: ChatConfig::default(),
            generator: Some(GeneratorConfig::Mock),
            checker: Some(CheckerConfig::Mock {
                extra_terms: Vec::new(),
                style_exemption: true,
                always_unsafe: false,
            }),
        }
    }
}

fn http_parts(url: &str, timeout_ms: u64) -> Result<Duration, ProviderConfigError> {
    if url.trim().is_empty() {
        return Err(ProviderConfigError::Invalid(
            "provider url must not be empty".into(),
        ));
    }
    if timeout_ms == 0 {
        return Err(ProviderConfigError::Invalid(
            "timeout_ms must be > 0".into(),
        ));
    }
    Ok(Duration::from_millis(timeout_ms))
}

impl ProviderConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ProviderConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ProviderConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ProviderConfigError> {
        if let EmbedderConfig::Http { url, timeout_ms } = &self.embedder {
            http_parts(url, *timeout_ms)?;
        }
        match &self.chat {
            ChatConfig::Http { url, timeout_ms } => {
                http_parts(url, *timeout_ms)?;
            }
            ChatConfig::Scripted {
                fallback: FallbackKind::Fixed,
                fixed_text: None,
                ..
            } => {
                return Err(ProviderConfigError::Invalid(
                    "chat fallback `fixed` needs `fixed_text`".into(),
                ))
            }
            ChatConfig::Scripted { .. } => {}
        }
        if let Some(GeneratorConfig::Http { url, timeout_ms }) = &self.generator {
            http_parts(url, *timeout_ms)?;
        }
        if let Some(CheckerConfig::Http { url, timeout_ms }) = &self.checker {
            http_parts(url, *timeout_ms)?;
        }
        Ok(())
    }

    /// Instantiates the configured backends. Mock backends read `rules`.
    pub fn build(&self, rules: &RuleSet) -> Result<Providers, ProviderConfigError> {
        self.validate()?;
        let embedder: Arc<dyn super::Embedder> = match &self.embedder {
            EmbedderConfig::Mock { seed } => Arc::new(MockEmbedder::with_seed(*seed)),
            EmbedderConfig::Http { url, timeout_ms } => {
                Arc::new(HttpEmbedder::new(url, http_parts(url, *timeout_ms)?))
            }
        };
        let chat: Arc<dyn super::ChatModel> = match &self.chat {
            ChatConfig::Scripted {
                fallback,
                fixed_text,
                script,
            } => {
                let fallback = match fallback {
                    FallbackKind::Strip => ChatFallback::StripKeywords,
                    FallbackKind::Echo => ChatFallback::Echo,
                    FallbackKind::Fixed => {
                        ChatFallback::Fixed(fixed_text.clone().unwrap_or_default())
                    }
                };
                Arc::new(
                    ScriptedChat::new(rules)
                        .with_script(script.iter().map(|(k, v)| (k.as_str(), v.clone())))
                        .with_fallback(fallback),
                )
            }
            ChatConfig::Http { url, timeout_ms } => {
                Arc::new(HttpChatModel::new(url, http_parts(url, *timeout_ms)?))
            }
        };
        let generator: Option<Arc<dyn super::ImageGenerator>> = match &self.generator {
            None => None,
            Some(GeneratorConfig::Mock) => Some(Arc::new(MockGenerator::new())),
            Some(GeneratorConfig::Http { url, timeout_ms }) => Some(Arc::new(
                HttpImageGenerator::new(url, http_parts(url, *timeout_ms)?),
            )),
        };
        let checker: Option<Arc<dyn super::SafetyChecker>> = match &self.checker {
            None => None,
            Some(CheckerConfig::Mock {
                extra_terms,
                style_exemption,
                always_unsafe,
            }) => {
                let checker = if *always_unsafe {
                    MockChecker::always_unsafe()
                } else {
                    let mut c = MockChecker::new(rules).with_extra_terms(extra_terms);
                    if *style_exemption {
                        c = c.with_style_exemption(rules.guidance_suffix());
                    }
                    c
                };
                Some(Arc::new(checker))
            }
            Some(CheckerConfig::Http { url, timeout_ms }) => Some(Arc::new(
                HttpSafetyChecker::new(url, http_parts(url, *timeout_ms)?),
            )),
        };
        Ok(Providers {
            embedder,
            chat,
            generator,
            checker,
        })
    }
}
