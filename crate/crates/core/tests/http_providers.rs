use std::net::SocketAddr;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use promptgate::providers::{
    chat_rewrite, check_image, embed, generate_image, ChatModel, ChatRequest, Embedder,
    HttpChatModel, HttpEmbedder, HttpImageGenerator, HttpSafetyChecker, ProviderError,
    SafetyVerdict,
};
use serde_json::{json, Value};

async fn serve(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn stub() -> Router {
    Router::new()
        .route(
            "/embed",
            post(|Json(body): Json<Value>| async move {
                let n = body["text"].as_str().unwrap().len() as f64;
                Json(json!({ "embedding": [n, 1.0, 0.0] }))
            }),
        )
        .route(
            "/chat",
            post(|Json(body): Json<Value>| async move {
                assert_eq!(body["temperature"], json!(0.1));
                let user = body["user"].as_str().unwrap().trim_start_matches("Rewrite: ");
                Json(json!({ "completion": format!("  a gentle {user}  ") }))
            }),
        )
        .route(
            "/generate",
            post(|Json(body): Json<Value>| async move {
                let prompt = body["prompt"].as_str().unwrap();
                Json(json!({ "image_id": format!("img-{}", prompt.len()), "locator": "s3://bucket/x.png" }))
            }),
        )
        .route(
            "/check",
            post(|Json(body): Json<Value>| async move {
                let verdict = if body["image_id"] == json!("img-7") { "unsafe" } else { "safe" };
                Json(json!({ "verdict": verdict }))
            }),
        )
        .route("/nan", post(|| async { Json(json!({ "embedding": [] })) }))
        .route("/broken", post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }))
        .route("/garbage", post(|| async { "not json" }))
        .route(
            "/slow",
            post(|| async {
                tokio::time::sleep(Duration::from_millis(500)).await;
                Json(json!({ "completion": "late" }))
            }),
        )
}

const T: Duration = Duration::from_secs(5);

#[tokio::test]
async fn round_trips() {
    let addr = serve(stub()).await;
    let base = format!("http://{addr}");

    let e = HttpEmbedder::new(format!("{base}/embed"), T);
    let v = embed(&e, "hello").await.unwrap();
    assert_eq!(v.as_slice(), &[5.0, 1.0, 0.0]);

    let c = HttpChatModel::new(format!("{base}/chat"), T);
    let req = ChatRequest::new("sys", "Rewrite: cat", 0.1).unwrap();
    assert_eq!(chat_rewrite(&c, &req).await.unwrap(), "a gentle cat");

    let g = HttpImageGenerator::new(format!("{base}/generate"), T);
    let img = generate_image(&g, "a red apple").await.unwrap();
    assert_eq!(img.id, "img-11");
    assert_eq!(img.provenance_prompt, "a red apple");
    assert_eq!(img.locator, "s3://bucket/x.png");

    let k = HttpSafetyChecker::new(format!("{base}/check"), T);
    assert_eq!(check_image(&k, &img).await.unwrap(), SafetyVerdict::Safe);
    let bad = generate_image(&g, "abcdefg").await.unwrap();
    assert_eq!(check_image(&k, &bad).await.unwrap(), SafetyVerdict::Unsafe);

    assert!(e.health().await.is_ok());
}

#[tokio::test]
async fn error_mapping() {
    let addr = serve(stub()).await;
    let base = format!("http://{addr}");
    let req = ChatRequest::new("sys", "Rewrite: cat", 0.1).unwrap();

    let broken = HttpChatModel::new(format!("{base}/broken"), T);
    assert_eq!(
        broken.complete(&req).await.unwrap_err(),
        ProviderError::Status {
            provider: "chat",
            status: 500
        }
    );

    let garbage = HttpChatModel::new(format!("{base}/garbage"), T);
    assert!(matches!(
        garbage.complete(&req).await.unwrap_err(),
        ProviderError::BadResponse { .. }
    ));

    let slow = HttpChatModel::new(format!("{base}/slow"), Duration::from_millis(50));
    let err = slow.complete(&req).await.unwrap_err();
    assert!(err.is_timeout(), "{err:?}");

    let empty = HttpEmbedder::new(format!("{base}/nan"), T);
    assert!(embed(&empty, "x").await.is_err());

    let down = HttpEmbedder::new("http://127.0.0.1:9/embed", T);
    assert!(matches!(
        embed(&down, "x").await.unwrap_err(),
        ProviderError::Unreachable { .. }
    ));
    assert!(down.health().await.is_err());
}
