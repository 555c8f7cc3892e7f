use std::collections::HashMap;
use std::time::Duration;

use promptgate::pipeline::Mode;
use promptgate::providers::{ChatConfig, EmbedderConfig};
use promptgate_service::{serve, ServiceConfig, ServiceConfigError};

#[test]
fn parse_and_defaults() {
    let c = ServiceConfig::from_toml_str("").unwrap();
    assert_eq!(c, ServiceConfig::default());
    c.validate().unwrap();

    let c = ServiceConfig::from_toml_str(
        r#"
listen = "0.0.0.0:9090"
mode = "text-only"
max_concurrent = 4
log_prompts = true

[providers.embedder]
kind = "http"
url = "http://embed:8000/v1"
timeout_ms = 1500

[providers.chat]
kind = "scripted"
"#,
    )
    .unwrap();
    assert_eq!(c.mode, Mode::TextOnly);
    assert_eq!(c.max_concurrent, 4);
    assert!(c.log_prompts);
    assert!(c.providers.generator.is_none());
    c.validate().unwrap();
}

#[test]
fn invalid_configs() {
    assert!(matches!(
        ServiceConfig::from_toml_str("bogus = 1"),
        Err(ServiceConfigError::Parse(_))
    ));
    let c = ServiceConfig {
        listen: "not an address".into(),
        ..ServiceConfig::default()
    };
    assert!(c.validate().is_err());

    let c = ServiceConfig {
        request_timeout_ms: 0,
        ..ServiceConfig::default()
    };
    assert!(c.validate().is_err());

    let mut c = ServiceConfig::default();
    c.providers.checker = None;
    assert!(c.validate().is_err());
    c.mode = Mode::TextOnly;
    c.validate().unwrap();

    let mut c = ServiceConfig::default();
    c.providers.embedder = EmbedderConfig::Http {
        url: "http://x".into(),
        timeout_ms: 0,
    };
    assert!(c.validate().is_err());
}

#[test]
fn environment_overrides() {
    let env: HashMap<&str, &str> = HashMap::from([
        ("PROMPTGATE_LISTEN", "127.0.0.1:7000"),
        ("PROMPTGATE_MODE", "text-only"),
        ("PROMPTGATE_RULES", "/etc/rules.toml"),
        ("PROMPTGATE_CHAT_URL", "http://llm:8000/chat"),
    ]);
    let mut c = ServiceConfig::default();
    c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
    assert_eq!(c.listen, "127.0.0.1:7000");
    assert_eq!(c.mode, Mode::TextOnly);
    assert_eq!(
        c.rules.as_deref(),
        Some(std::path::Path::new("/etc/rules.toml"))
    );
    assert_eq!(
        c.providers.chat,
        ChatConfig::Http {
            url: "http://llm:8000/chat".into(),
            timeout_ms: 30_000
        }
    );
    assert!(matches!(c.providers.embedder, EmbedderConfig::Mock { .. }));

    let mut c = ServiceConfig::default();
    assert!(c
        .apply_env(|k| (k == "PROMPTGATE_MODE").then(|| "turbo".to_string()))
        .is_err());
}

#[tokio::test]
async fn serve_binds_and_drains() {
    let c = ServiceConfig {
        listen: "127.0.0.1:0".into(),
        ..ServiceConfig::default()
    };
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        serve(&c, async {
            let _ = rx.await;
        })
        .await
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    tx.send(()).unwrap();
    tokio::time::timeout(Duration::from_secs(5), server)
        .await
        .unwrap()
        .unwrap()
        .unwrap();
}

#[tokio::test]
async fn serve_rejects_missing_rules() {
    let dir = tempfile::tempdir().unwrap();
    let c = ServiceConfig {
        listen: "127.0.0.1:0".into(),
        rules: Some(dir.path().join("missing.toml")),
        ..ServiceConfig::default()
    };
    assert!(serve(&c, async {}).await.is_err());
}
