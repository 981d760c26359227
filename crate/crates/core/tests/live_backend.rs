use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use scriptalign_core::backend::{
    Backend, BackendError, ChatMessage, CompletionRequest, LiveConfig, LiveHttpBackend,
};

#[derive(Default)]
struct Counters {
    flaky: AtomicUsize,
    down: AtomicUsize,
    bad: AtomicUsize,
}

async fn handler(
    State(counters): State<Arc<Counters>>,
    Path(scenario): Path<String>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let ok = |text: &str| {
        (
            StatusCode::OK,
            Json(json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 3}
            })),
        )
    };
    match scenario.as_str() {
        "echo" => {
            let auth = headers
                .get("authorization")
                .and_then(|v| v.to_str().ok())
                .unwrap_or("");
            let roles: Vec<&str> = body["messages"]
                .as_array()
                .unwrap()
                .iter()
                .map(|m| m["role"].as_str().unwrap())
                .collect();
            ok(&format!("{}|{}|{}|{}", body["model"], auth, roles.join(","), body["temperature"]))
        }
        "flaky" => {
            if counters.flaky.fetch_add(1, Ordering::SeqCst) < 2 {
                (StatusCode::SERVICE_UNAVAILABLE, Json(json!({})))
            } else {
                ok("finally")
            }
        }
        "down" => {
            counters.down.fetch_add(1, Ordering::SeqCst);
            (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({})))
        }
        "bad" => {
            counters.bad.fetch_add(1, Ordering::SeqCst);
            (StatusCode::BAD_REQUEST, Json(json!({"error": "nope"})))
        }
        "empty" => ok("   "),
        _ => (StatusCode::NOT_FOUND, Json(json!({}))),
    }
}

fn start_server() -> (String, Arc<Counters>) {
    let counters = Arc::new(Counters::default());
    let state = counters.clone();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/:scenario/chat/completions", post(handler))
                .with_state(state);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), counters)
}

fn backend(base: &str) -> LiveHttpBackend {
    let mut cfg = LiveConfig::new(base, "test-model");
    cfg.api_key = Some("sekret".into());
    cfg.initial_backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(5);
    LiveHttpBackend::new(cfg).unwrap()
}

fn request() -> CompletionRequest {
    CompletionRequest {
        system_prompt: "be kind".into(),
        messages: vec![ChatMessage::user("hello")],
        temperature: 0.0,
        max_tokens: 16,
        tag: "test".into(),
    }
}

#[test]
fn live_client_behaviour() {
    let (base, counters) = start_server();

    let echoed = backend(&format!("{base}/echo/")).complete(&request()).unwrap();
    assert_eq!(echoed.text, "\"test-model\"|Bearer sekret|system,user|0.0");
    assert_eq!(echoed.usage.prompt_tokens, Some(11));

    let flaky = backend(&format!("{base}/flaky")).complete(&request()).unwrap();
    assert_eq!(flaky.text, "finally");
    assert_eq!(counters.flaky.load(Ordering::SeqCst), 3);

    let err = backend(&format!("{base}/down")).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Network { attempts: 4, .. }), "{err:?}");
    assert_eq!(counters.down.load(Ordering::SeqCst), 4);

    let err = backend(&format!("{base}/bad")).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 400, .. }), "{err:?}");
    assert_eq!(counters.bad.load(Ordering::SeqCst), 1);

    let err = backend(&format!("{base}/empty")).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
}

#[test]
fn unreachable_server_is_a_network_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = LiveConfig::new(format!("http://127.0.0.1:{port}"), "m");
    cfg.retries = 1;
    cfg.initial_backoff = Duration::from_millis(1);
    let err = LiveHttpBackend::new(cfg).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Network { attempts: 2, .. }), "{err:?}");
    assert!(err.is_retriable());
}

#[test]
fn zero_budget_is_rejected_before_sending() {
    let mut r = request();
    r.max_tokens = 0;
    let err = backend("http://127.0.0.1:9").complete(&r).unwrap_err();
    assert!(matches!(err, BackendError::BudgetExceeded { .. }));
}
