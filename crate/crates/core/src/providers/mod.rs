//! Interfaces to the four external models: sentence embedder, chat rewriter,
//! image generator and image safety checker.
//!
//! Detectors and the pipeline compile against these traits only. The free
//! functions ([`embed`], [`chat_rewrite`], [`generate_image`], [`check_image`])
//! enforce the input/output contracts uniformly for every backend, so callers
//! should go through them rather than the trait methods.

mod config;
mod http;
mod mock;

pub use config::{
    ChatConfig, CheckerConfig, EmbedderConfig, GeneratorConfig, ProviderConfig, ProviderConfigError,
};
pub use http::{
    ChatWireRequest, ChatWireResponse, CheckRequest, CheckResponse, EmbedRequest, EmbedResponse,
    GenerateRequest, GenerateResponse, HttpChatModel, HttpEmbedder, HttpImageGenerator,
    HttpSafetyChecker,
};
pub use mock::{
    ChatFallback, MockChecker, MockEmbedder, MockGenerator, ScriptedChat, TableEmbedder,
    DEFAULT_MOCK_SEED, MOCK_EMBEDDING_DIM,
};

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("{provider} provider unreachable: {message}")]
    Unreachable {
        provider: &'static str,
        message: String,
    },
    #[error("{provider} provider timed out")]
    Timeout { provider: &'static str },
    #[error("{provider} provider returned status {status}")]
    Status { provider: &'static str, status: u16 },
    #[error("{provider} provider returned a malformed response: {message}")]
    BadResponse {
        provider: &'static str,
        message: String,
    },
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("chat provider returned an empty completion")]
    EmptyCompletion,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, ProviderError::Timeout { .. })
    }
}

/// Dense sentence embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "embedding has no dimensions".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidRequest(
                "embedding has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// System/user conversation sent to the chat rewriter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        temperature: f64,
    ) -> Result<Self, ProviderError> {
        let req = Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature,
        };
        req.validate()?;
        Ok(req)
    }

    fn validate(&self) -> Result<(), ProviderError> {
        if self.system_text.trim().is_empty() || self.user_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest(
                "chat request needs non-empty system and user text".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Handle to a generated image. Payloads are never held in memory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub provenance_prompt: String,
    pub locator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyVerdict {
    Safe,
    Unsafe,
}

impl SafetyVerdict {
    pub fn is_safe(self) -> bool {
        self == SafetyVerdict::Safe
    }
}

impl fmt::Display for SafetyVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SafetyVerdict::Safe => "safe",
            SafetyVerdict::Unsafe => "unsafe",
        })
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    async fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    async fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

#[async_trait]
pub trait ImageGenerator: Send + Sync {
    async fn generate(&self, prompt: &str) -> Result<ImageRef, ProviderError>;

    async fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

#[async_trait]
pub trait SafetyChecker: Send + Sync {
    async fn check(&self, image: &ImageRef) -> Result<SafetyVerdict, ProviderError>;

    async fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

pub async fn embed(provider: &dyn Embedder, text: &str) -> Result<EmbeddingVector, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let vector = provider.embed(text).await?;
    // Re-validate: backends may construct vectors without going through `new`.
    EmbeddingVector::new(vector.0)
}

pub async fn chat_rewrite(
    provider: &dyn ChatModel,
    request: &ChatRequest,
) -> Result<String, ProviderError> {
    request.validate()?;
    let completion = provider.complete(request).await?;
    let completion = completion.trim();
    if completion.is_empty() {
        return Err(ProviderError::EmptyCompletion);
    }
    Ok(completion.to_string())
}

pub async fn generate_image(
    provider: &dyn ImageGenerator,
    prompt: &str,
) -> Result<ImageRef, ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let mut image = provider.generate(prompt).await?;
    image.provenance_prompt = prompt.to_string();
    Ok(image)
}

pub async fn check_image(
    provider: &dyn SafetyChecker,
    image: &ImageRef,
) -> Result<SafetyVerdict, ProviderError> {
    provider.check(image).await
}

/// The set of backends one deployment talks to. Image providers are optional
/// so text-only evaluation needs no generator or checker.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub chat: Arc<dyn ChatModel>,
    pub generator: Option<Arc<dyn ImageGenerator>>,
    pub checker: Option<Arc<dyn SafetyChecker>>,
}

impl Providers {
    /// Deterministic offline backends derived from `rules`.
    pub fn mock(rules: &crate::rules::RuleSet) -> Self {
        Self {
            embedder: Arc::new(MockEmbedder::new()),
            chat: Arc::new(ScriptedChat::new(rules)),
            generator: Some(Arc::new(MockGenerator::new())),
            checker: Some(Arc::new(MockChecker::new(rules))),
        }
    }

    pub fn text_only(embedder: Arc<dyn Embedder>, chat: Arc<dyn ChatModel>) -> Self {
        Self {
            embedder,
            chat,
            generator: None,
            checker: None,
        }
    }

    pub fn has_image_backends(&self) -> bool {
        self.generator.is_some() && self.checker.is_some()
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("generator", &self.generator.is_some())
            .field("checker", &self.checker.is_some())
            .finish_non_exhaustive()
    }
}
