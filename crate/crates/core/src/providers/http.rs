//! JSON-over-HTTP clients. Field names of the wire structs are part of the
//! external contract and pinned by golden tests.

use std::time::Duration;

use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    ChatModel, ChatRequest, Embedder, EmbeddingVector, ImageGenerator, ImageRef, ProviderError,
    SafetyChecker, SafetyVerdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatWireRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatWireResponse {
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_id: String,
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRequest {
    pub image_id: String,
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResponse {
    pub verdict: SafetyVerdict,
}

#[derive(Debug, Clone)]
struct JsonEndpoint {
    provider: &'static str,
    url: String,
    client: reqwest::Client,
}

impl JsonEndpoint {
    fn new(provider: &'static str, url: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        Self {
            provider,
            url: url.into(),
            client,
        }
    }

    fn transport_error(&self, err: reqwest::Error) -> ProviderError {
        if err.is_timeout() {
            ProviderError::Timeout {
                provider: self.provider,
            }
        } else if let Some(status) = err.status() {
            ProviderError::Status {
                provider: self.provider,
                status: status.as_u16(),
            }
        } else if err.is_decode() {
            ProviderError::BadResponse {
                provider: self.provider,
                message: err.to_string(),
            }
        } else {
            ProviderError::Unreachable {
                provider: self.provider,
                message: err.to_string(),
            }
        }
    }

    async fn post<B: Serialize + Sync, R: DeserializeOwned>(
        &self,
        body: &B,
    ) -> Result<R, ProviderError> {
        let response = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .await
            .map_err(|e| self.transport_error(e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderError::Status {
                provider: self.provider,
                status: status.as_u16(),
            });
        }
        let bytes = response
            .bytes()
            .await
            .map_err(|e| self.transport_error(e))?;
        serde_json::from_slice(&bytes).map_err(|e| ProviderError::BadResponse {
            provider: self.provider,
            message: e.to_string(),
        })
    }

    /// Any HTTP answer counts as reachable; only transport failures do not.
    async fn ping(&self) -> Result<(), ProviderError> {
        self.client
            .get(&self.url)
            .send()
            .await
            .map(|_| ())
            .map_err(|e| self.transport_error(e))
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder(JsonEndpoint);

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(JsonEndpoint::new("embedder", url, timeout))
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let response: EmbedResponse = self
            .0
            .post(&EmbedRequest {
                text: text.to_string(),
            })
            .await?;
        EmbeddingVector::new(response.embedding).map_err(|e| ProviderError::BadResponse {
            provider: "embedder",
            message: e.to_string(),
        })
    }

    async fn health(&self) -> Result<(), ProviderError> {
        self.0.ping().await
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatModel(JsonEndpoint);

impl HttpChatModel {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(JsonEndpoint::new("chat", url, timeout))
    }
}

impl From<&ChatRequest> for ChatWireRequest {
    fn from(req: &ChatRequest) -> Self {
        Self {
            system: req.system_text.clone(),
            user: req.user_text.clone(),
            temperature: req.temperature,
        }
    }
}

#[async_trait]
impl ChatModel for HttpChatModel {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let response: ChatWireResponse = self.0.post(&ChatWireRequest::from(request)).await?;
        Ok(response.completion)
    }

    async fn health(&self) -> Result<(), ProviderError> {
        self.0.ping().await
    }
}

#[derive(Debug, Clone)]
pub struct HttpImageGenerator(JsonEndpoint);

impl HttpImageGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(JsonEndpoint::new("generator", url, timeout))
    }
}

#[async_trait]
impl ImageGenerator for HttpImageGenerator {
    async fn generate(&self, prompt: &str) -> Result<ImageRef, ProviderError> {
        let response: GenerateResponse = self
            .0
            .post(&GenerateRequest {
                prompt: prompt.to_string(),
            })
            .await?;
        Ok(ImageRef {
            id: response.image_id,
            provenance_prompt: prompt.to_string(),
            locator: response.locator,
        })
    }

    async fn health(&self) -> Result<(), ProviderError> {
        self.0.ping().await
    }
}

#[derive(Debug, Clone)]
pub struct HttpSafetyChecker(JsonEndpoint);

impl HttpSafetyChecker {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(JsonEndpoint::new("checker", url, timeout))
    }
}

#[async_trait]
impl SafetyChecker for HttpSafetyChecker {
    async fn check(&self, image: &ImageRef) -> Result<SafetyVerdict, ProviderError> {
        let response: CheckResponse = self
            .0
            .post(&CheckRequest {
                image_id: image.id.clone(),
                locator: image.locator.clone(),
            })
            .await?;
        Ok(response.verdict)
    }

    async fn health(&self) -> Result<(), ProviderError> {
        self.0.ping().await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_bodies_are_stable() {
        let chat = ChatRequest::new("S", "Rewrite: p", 0.1).unwrap();
        assert_eq!(
            serde_json::to_value(ChatWireRequest::from(&chat)).unwrap(),
            json!({"system": "S", "user": "Rewrite: p", "temperature": 0.1})
        );
        assert_eq!(
            serde_json::to_value(EmbedRequest { text: "t".into() }).unwrap(),
            json!({"text": "t"})
        );
        assert_eq!(
            serde_json::to_value(GenerateRequest { prompt: "p".into() }).unwrap(),
            json!({"prompt": "p"})
        );
        assert_eq!(
            serde_json::to_value(CheckRequest {
                image_id: "i".into(),
                locator: "file:///i.png".into()
            })
            .unwrap(),
            json!({"image_id": "i", "locator": "file:///i.png"})
        );
    }

    #[test]
    fn response_bodies_parse() {
        let r: CheckResponse = serde_json::from_value(json!({"verdict": "unsafe"})).unwrap();
        assert_eq!(r.verdict, SafetyVerdict::Unsafe);
        assert!(serde_json::from_value::<CheckResponse>(json!({"verdict": "maybe"})).is_err());
        let r: EmbedResponse = serde_json::from_value(json!({"embedding": [0.5, -0.5]})).unwrap();
        assert_eq!(r.embedding, vec![0.5, -0.5]);
    }
}
