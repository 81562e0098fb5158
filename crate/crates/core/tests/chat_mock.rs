use std::net::SocketAddr;

use axum::routing::post;
use axum::{Json, Router};
use pinrefine_core::datasmith::prompt::parse_input;
use pinrefine_core::records::{NBestEntry, RefineSource};
use pinrefine_core::refine::chat::{ChatClient, ChatEndpoint, ChatError, ChatJob};
use serde_json::{json, Value};

/// Replies with the second candidate of the user prompt.
async fn pick_second(Json(body): Json<Value>) -> Json<Value> {
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["messages"][0]["role"], "system");
    let input = body["messages"][1]["content"].as_str().unwrap();
    let parsed = parse_input(input).unwrap();
    let answer = parsed.candidates.get(1).cloned().unwrap_or_default();
    Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("  {answer}\n")}}]}))
}

async fn empty_reply() -> Json<Value> {
    Json(json!({"choices": []}))
}

async fn serve(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn job(utt: &str) -> ChatJob {
    ChatJob {
        utt: utt.into(),
        pinyin: "wo xiang qu yin hang".into(),
        nbest: vec![
            NBestEntry {
                text: "我想去银航".into(),
                log_score: -0.2,
            },
            NBestEntry {
                text: "我想去银行".into(),
                log_score: -0.9,
            },
        ],
    }
}

fn endpoint(url: String) -> ChatEndpoint {
    ChatEndpoint {
        url,
        timeout_ms: 2_000,
        ..ChatEndpoint::default()
    }
}

#[tokio::test]
async fn mock_answer_is_used() {
    let addr = serve(Router::new().route("/v1/chat/completions", post(pick_second))).await;
    let client = ChatClient::new(endpoint(format!("http://{addr}/v1/chat/completions"))).unwrap();
    let out = client.refine_one(&job("u1")).await;
    assert_eq!(out.text, "我想去银行");
    assert_eq!(out.source, RefineSource::Chat);
    assert!(out.failure.is_none());
}

#[tokio::test]
async fn empty_reply_falls_back() {
    let addr = serve(Router::new().route("/v1/chat/completions", post(empty_reply))).await;
    let client = ChatClient::new(endpoint(format!("http://{addr}/v1/chat/completions"))).unwrap();
    let out = client.refine_one(&job("u1")).await;
    assert_eq!(out.text, "我想去银航");
    assert_eq!(out.source, RefineSource::Fallback);
}

#[tokio::test]
async fn missing_route_falls_back_with_status() {
    let addr = serve(Router::new()).await;
    let client = ChatClient::new(endpoint(format!("http://{addr}/nowhere"))).unwrap();
    let out = client.refine_one(&job("u1")).await;
    assert_eq!(out.source, RefineSource::Fallback);
    assert!(out.failure.unwrap().contains("404"));
}

#[tokio::test]
async fn unreachable_batch_keeps_order() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = ChatClient::new(ChatEndpoint {
        max_in_flight: 8,
        ..endpoint(format!("http://127.0.0.1:{port}/v1/chat/completions"))
    })
    .unwrap();
    let jobs: Vec<ChatJob> = (0..20).map(|i| job(&format!("u{i}"))).collect();
    let out = client.refine_batch(&jobs).await;
    assert_eq!(out.len(), 20);
    for (i, o) in out.iter().enumerate() {
        assert_eq!(o.utt, format!("u{i}"));
        assert_eq!(o.source, RefineSource::Fallback);
    }
}

#[test]
fn token_variable_must_exist() {
    let ep = ChatEndpoint {
        token_env: Some("PINREFINE_TEST_TOKEN_THAT_IS_UNSET".into()),
        ..ChatEndpoint::default()
    };
    assert!(matches!(ChatClient::new(ep), Err(ChatError::MissingToken(_))));
}
