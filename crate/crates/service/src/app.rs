use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promptgate::detect::{DetectError, SemanticHit, ValueHit, WordHit};
use promptgate::intent::IntentEvidence;
use promptgate::moderate::{
    ModerateError, ModerationDecision, RiskCategory, SystemPromptSet, Verification,
};
use promptgate::pipeline::{Mode, Pipeline, PipelineOptions};
use promptgate::providers::{ProviderError, Providers, SafetyVerdict};
use promptgate::regen::{generate_verified, RegenError};
use promptgate::rules::RuleSet;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::info;

use crate::config::ServiceConfig;
use crate::ServiceError;

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    providers: Providers,
    rules: Arc<RuleSet>,
    mode: Mode,
    limiter: Arc<Semaphore>,
    timeout: Duration,
    log_prompts: bool,
}

impl AppState {
    pub async fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let rules = match &config.rules {
            Some(path) => RuleSet::from_path(path)?,
            None => RuleSet::default_rules(),
        };
        let prompts = match &config.prompts_dir {
            Some(dir) => SystemPromptSet::from_dir(dir)?,
            None => SystemPromptSet::default(),
        };
        let providers = config.providers.build(&rules)?;
        Self::new(
            Arc::new(rules),
            providers,
            Arc::new(prompts),
            config.mode,
            config.max_concurrent,
            Duration::from_millis(config.request_timeout_ms),
        )
        .await
        .map(|s| s.with_prompt_logging(config.log_prompts))
    }

    pub async fn new(
        rules: Arc<RuleSet>,
        providers: Providers,
        prompts: Arc<SystemPromptSet>,
        mode: Mode,
        max_concurrent: usize,
        timeout: Duration,
    ) -> Result<Self, ServiceError> {
        let options = PipelineOptions {
            mode,
            ..PipelineOptions::default()
        };
        let pipeline = Pipeline::new(rules.clone(), &providers, prompts, options).await?;
        Ok(Self {
            pipeline: Arc::new(pipeline),
            providers,
            rules,
            mode,
            limiter: Arc::new(Semaphore::new(max_concurrent)),
            timeout,
            log_prompts: false,
        })
    }

    pub fn with_prompt_logging(mut self, on: bool) -> Self {
        self.log_prompts = on;
        self
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/v1/detect", post(detect))
        .route("/v1/moderate", post(moderate))
        .route("/v1/generate", post(generate))
        .route_layer(middleware::from_fn_with_state(state.clone(), limit));
    Router::new()
        .merge(api)
        .route("/healthz", get(healthz))
        .with_state(state)
}

async fn limit(State(state): State<AppState>, request: Request, next: Next) -> Response {
    match state.limiter.clone().try_acquire_owned() {
        Ok(_permit) => next.run(request).await,
        Err(_) => ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "too many concurrent requests",
        )
        .into_response(),
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    phase: Option<String>,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: message.into(),
                phase: None,
            },
        }
    }

    fn phase(mut self, phase: impl Into<String>) -> Self {
        self.body.phase = Some(phase.into());
        self
    }

    fn provider(err: &ProviderError) -> Self {
        let status = if err.is_timeout() {
            StatusCode::GATEWAY_TIMEOUT
        } else {
            StatusCode::BAD_GATEWAY
        };
        Self::new(status, err.to_string())
    }
}

impl From<ModerateError> for ApiError {
    fn from(err: ModerateError) -> Self {
        match &err {
            ModerateError::EmptyPrompt | ModerateError::Detect(DetectError::EmptyPrompt) => {
                Self::new(StatusCode::BAD_REQUEST, "prompt must not be empty")
            }
            ModerateError::Detect(DetectError::Provider(p)) | ModerateError::Provider(p) => {
                Self::provider(p).phase("detect")
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBody {
    prompt: String,
}

fn parse_prompt(body: &Bytes) -> Result<String, ApiError> {
    let parsed: PromptBody = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    if parsed.prompt.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "prompt must not be empty",
        ));
    }
    Ok(parsed.prompt)
}

async fn bounded<T>(
    state: &AppState,
    work: impl Future<Output = Result<T, ApiError>>,
) -> Result<T, ApiError> {
    tokio::time::timeout(state.timeout, work)
        .await
        .unwrap_or_else(|_| {
            Err(ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "request timed out",
            ))
        })
}

impl AppState {
    fn audit(
        &self,
        endpoint: &str,
        status: StatusCode,
        category: Option<RiskCategory>,
        evidence: &str,
        attempts: u32,
        prompt: &str,
    ) {
        let category = category.map_or("-", RiskCategory::as_str);
        if self.log_prompts {
            info!(target: "promptgate::audit", endpoint, status = status.as_u16(), category, evidence, attempts, prompt);
        } else {
            info!(target: "promptgate::audit", endpoint, status = status.as_u16(), category, evidence, attempts);
        }
    }

    fn audit_error(&self, endpoint: &str, err: &ApiError, prompt: &str) {
        self.audit(endpoint, err.status, None, &err.body.error, 0, prompt);
    }
}

#[derive(Debug, Serialize)]
struct DetectFlags {
    word: bool,
    semantic: bool,
    value: bool,
    intention: bool,
}

#[derive(Debug, Serialize)]
struct DetectEvidence {
    word: Option<WordHit>,
    semantic: SemanticHit,
    value: Option<ValueHit>,
    intention: Option<IntentEvidence>,
}

#[derive(Debug, Serialize)]
struct DetectResponse {
    safe: bool,
    category: RiskCategory,
    flags: DetectFlags,
    evidence: DetectEvidence,
}

async fn detect(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<DetectResponse>, ApiError> {
    let prompt = parse_prompt(&body).inspect_err(|e| state.audit_error("detect", e, ""))?;
    let result = bounded(&state, async {
        Ok(state.pipeline.moderator().assess(&prompt).await?)
    })
    .await;
    let a = result.inspect_err(|e| state.audit_error("detect", e, &prompt))?;
    let evidence = a.evidence();
    state.audit(
        "detect",
        StatusCode::OK,
        Some(a.category),
        &evidence,
        0,
        &prompt,
    );
    Ok(Json(DetectResponse {
        safe: a.safe,
        category: a.category,
        flags: DetectFlags {
            word: a.outcome.word_flag(),
            semantic: a.outcome.semantic_flag(),
            value: a.outcome.value_flag(),
            intention: a.intent,
        },
        evidence: DetectEvidence {
            word: a.outcome.word,
            semantic: a.outcome.semantic,
            value: a.outcome.value,
            intention: a.intent_evidence,
        },
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Action {
    Pass,
    Rewritten,
    Blocked,
}

#[derive(Debug, Serialize)]
struct ModerateResponse {
    action: Action,
    category: RiskCategory,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_prompt: Option<String>,
    attempts: u32,
    verification: Verification,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn action(d: &ModerationDecision) -> Action {
    match d.verification {
        Verification::NotNeeded => Action::Pass,
        Verification::Passed => Action::Rewritten,
        Verification::FailedAfterRetries | Verification::ProviderError => Action::Blocked,
    }
}

impl From<&ModerationDecision> for ModerateResponse {
    fn from(d: &ModerationDecision) -> Self {
        Self {
            action: action(d),
            category: d.category,
            effective_prompt: d.effective_prompt().map(str::to_string),
            attempts: d.attempts,
            verification: d.verification,
            error: d
                .error
                .clone()
                .filter(|_| d.verification == Verification::ProviderError),
        }
    }
}

async fn run_moderation(
    state: &AppState,
    endpoint: &str,
    prompt: &str,
) -> Result<ModerationDecision, ApiError> {
    let result = bounded(state, async { Ok(state.pipeline.moderate(prompt).await?) }).await;
    result.inspect_err(|e| state.audit_error(endpoint, e, prompt))
}

async fn moderate(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<ModerateResponse>, ApiError> {
    let prompt = parse_prompt(&body).inspect_err(|e| state.audit_error("moderate", e, ""))?;
    let d = run_moderation(&state, "moderate", &prompt).await?;
    state.audit(
        "moderate",
        StatusCode::OK,
        Some(d.category),
        &d.evidence(),
        d.attempts,
        &prompt,
    );
    Ok(Json(ModerateResponse::from(&d)))
}

#[derive(Debug, Serialize)]
struct ImageBody {
    id: String,
    locator: String,
}

#[derive(Debug, Serialize)]
struct GenerateResponse {
    action: Action,
    category: RiskCategory,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_prompt: Option<String>,
    attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<ImageBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<SafetyVerdict>,
    regenerated: bool,
}

async fn generate(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<GenerateResponse>, ApiError> {
    if state.mode == Mode::TextOnly {
        let err = ApiError::new(
            StatusCode::CONFLICT,
            "image generation is disabled in text-only mode",
        );
        state.audit_error("generate", &err, "");
        return Err(err);
    }
    let prompt = parse_prompt(&body).inspect_err(|e| state.audit_error("generate", e, ""))?;
    let (generator, checker) = match (&state.providers.generator, &state.providers.checker) {
        (Some(g), Some(c)) => (g.clone(), c.clone()),
        _ => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "image providers are not configured",
            ));
        }
    };
    let result = bounded(&state, async {
        let d = state.pipeline.moderate(&prompt).await?;
        let mut response = GenerateResponse {
            action: action(&d),
            category: d.category,
            effective_prompt: d.effective_prompt().map(str::to_string),
            attempts: d.attempts,
            image: None,
            verdict: None,
            regenerated: false,
        };
        let Some(effective) = d.effective_prompt() else {
            return Ok((d, response));
        };
        let g = generate_verified(
            effective,
            state.rules.guidance_suffix(),
            generator.as_ref(),
            checker.as_ref(),
        )
        .await
        .map_err(|e| match &e {
            RegenError::Provider { phase, source } => {
                ApiError::provider(source).phase(phase.to_string())
            }
            RegenError::EmptyPrompt => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        })?;
        response.image = Some(ImageBody {
            id: g.final_image.id,
            locator: g.final_image.locator,
        });
        response.verdict = Some(g.final_verdict);
        response.regenerated = g.regenerated;
        Ok((d, response))
    })
    .await;
    let (d, response) = result.inspect_err(|e| state.audit_error("generate", e, &prompt))?;
    state.audit(
        "generate",
        StatusCode::OK,
        Some(d.category),
        &d.evidence(),
        d.attempts,
        &prompt,
    );
    Ok(Json(response))
}

#[derive(Debug, Serialize)]
struct ProviderHealth {
    embedder: bool,
    chat: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checker: Option<bool>,
}

#[derive(Debug, Serialize)]
struct HealthResponse {
    status: &'static str,
    degraded: bool,
    mode: Mode,
    providers: ProviderHealth,
}

async fn healthz(State(state): State<AppState>) -> Json<HealthResponse> {
    let p = &state.providers;
    let (embedder, chat) = tokio::join!(p.embedder.health(), p.chat.health());
    let generator = match &p.generator {
        Some(g) => Some(g.health().await.is_ok()),
        None => None,
    };
    let checker = match &p.checker {
        Some(c) => Some(c.health().await.is_ok()),
        None => None,
    };
    let providers = ProviderHealth {
        embedder: embedder.is_ok(),
        chat: chat.is_ok(),
        generator,
        checker,
    };
    let image_needed = state.mode == Mode::Full;
    let degraded = !providers.embedder
        || !providers.chat
        || (image_needed && (providers.generator != Some(true) || providers.checker != Some(true)));
    Json(HealthResponse {
        status: if degraded { "degraded" } else { "ok" },
        degraded,
        mode: state.mode,
        providers,
    })
}
