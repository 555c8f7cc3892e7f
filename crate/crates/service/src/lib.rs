//! HTTP moderation gateway.
//!
//! | route            | body           | answer                                             |
//! |------------------|----------------|----------------------------------------------------|
//! | `POST /v1/detect`   | `{"prompt"}` | flags, evidence and category                       |
//! | `POST /v1/moderate` | `{"prompt"}` | `pass` / `rewritten` / `blocked` and the prompt    |
//! | `POST /v1/generate` | `{"prompt"}` | moderated generation with verdict (full mode only) |
//! | `GET /healthz`      |              | provider reachability, `degraded` flag             |
//!
//! Errors are `{"error": ..., "phase"?: ...}` with 400 for bad input, 409 for
//! generation in text-only mode, 429 past the concurrency cap, 502 for
//! provider failures and 504 for timeouts. The generator is only reachable
//! through the moderated path.

mod app;
pub mod config;

use std::future::Future;

use promptgate::detect::DetectError;
use promptgate::pipeline::PipelineError;
use promptgate::providers::ProviderConfigError;
use promptgate::rules::RulesError;
use thiserror::Error;
use tracing::info;

pub use app::{router, AppState};
pub use config::{ServiceConfig, ServiceConfigError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ServiceConfigError),
    #[error("failed to load rules: {0}")]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Providers(#[from] ProviderConfigError),
    #[error("failed to start pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("failed to start detector: {0}")]
    Detect(#[from] DetectError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds the configured address and serves until `shutdown` resolves, then
/// drains in-flight requests.
pub async fn serve(
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let state = AppState::from_config(config).await?;
    let addr = config.listen_addr()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, mode = ?config.mode, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    info!("shut down");
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
