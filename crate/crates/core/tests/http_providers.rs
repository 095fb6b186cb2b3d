//! HTTP clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use mmd_core::providers::{ChatModel, ChatTurn, Embedder, HttpChat, HttpEmbedder, HttpScorer, ProviderConfig, SupportScorer};
use mmd_core::Error;

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves `script` in order, one response per connection, and records what
/// each request carried.
fn serve(script: Vec<(u16, Value)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut length = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let payload = body.to_string();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(endpoint: &str, key_env: &str) -> ProviderConfig {
    ProviderConfig {
        retry_backoff_ms: 1,
        timeout_ms: 5_000,
        api_key_env: key_env.to_string(),
        ..ProviderConfig::new(endpoint, "test-model")
    }
}

fn reply(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

#[test]
fn chat_retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        (500, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, reply("Looks real.")),
    ]);
    std::env::set_var("MMD_TEST_KEY_A", "sekret");
    let chat = HttpChat::new(config(&url, "MMD_TEST_KEY_A")).unwrap();
    let history = vec![ChatTurn::user("Is this real?").with_image(Some("img/1.jpg".into()))];
    assert_eq!(chat.chat_complete(&history).unwrap(), "Looks real.");

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.path == "/v1/chat/completions"));
    assert_eq!(seen[2].auth.as_deref(), Some("Bearer sekret"));
    let body = &seen[2].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "img/1.jpg");
}

#[test]
fn chat_gives_up_after_all_attempts() {
    let (url, seen) = serve(vec![(503, json!({})); 4]);
    let chat = HttpChat::new(ProviderConfig { max_retries: 3, ..config(&url, "MMD_TEST_KEY_UNSET") }).unwrap();
    let err = chat.chat_complete(&[ChatTurn::user("hi")]).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err}");
    assert!(err.to_string().contains("4 attempts"));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    assert!(seen[0].auth.is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, json!({"error": "bad"})), (200, reply("unused"))]);
    let chat = HttpChat::new(config(&url, "MMD_TEST_KEY_UNSET")).unwrap();
    assert!(matches!(chat.chat_complete(&[ChatTurn::user("hi")]), Err(Error::ProviderUnavailable(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn blank_completion_is_empty_response() {
    let (url, _) = serve(vec![(200, reply("  "))]);
    let chat = HttpChat::new(config(&url, "MMD_TEST_KEY_UNSET")).unwrap();
    assert!(matches!(chat.chat_complete(&[ChatTurn::user("hi")]), Err(Error::EmptyResponse(_))));
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = ProviderConfig { max_retries: 1, ..config(&format!("http://127.0.0.1:{port}"), "MMD_TEST_KEY_UNSET") };
    let chat = HttpChat::new(cfg).unwrap();
    assert!(matches!(chat.chat_complete(&[ChatTurn::user("hi")]), Err(Error::ProviderUnavailable(_))));
}

#[test]
fn embeddings_are_reordered_by_index() {
    let (url, seen) = serve(vec![(
        200,
        json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]}),
    )]);
    let emb = HttpEmbedder::new(ProviderConfig { dimension: Some(2), ..config(&url, "MMD_TEST_KEY_UNSET") }).unwrap();
    let out = emb.embed_batch(&["first", "second"]).unwrap();
    assert_eq!(out[0].values(), &[1.0, 0.0]);
    assert_eq!(out[1].values(), &[0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], json!(["first", "second"]));
}

#[test]
fn embedding_dimension_is_checked() {
    let (url, _) = serve(vec![(200, json!({"data": [{"index": 0, "embedding": [1.0, 0.0, 0.0]}]}))]);
    let emb = HttpEmbedder::new(ProviderConfig { dimension: Some(2), ..config(&url, "MMD_TEST_KEY_UNSET") }).unwrap();
    assert!(emb.embed("x").is_err());
}

#[test]
fn scorer_protocol_and_clamping() {
    let (url, seen) = serve(vec![(200, json!({"score": 1.7})), (200, json!({"score": 0.25}))]);
    let scorer = HttpScorer::new(config(&url, "MMD_TEST_KEY_UNSET")).unwrap();
    assert_eq!(scorer.score("claim", "evidence").unwrap(), 1.0);
    assert_eq!(scorer.score("claim", "evidence").unwrap(), 0.25);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/score");
    assert_eq!(seen[0].body, json!({"model": "test-model", "sentence": "claim", "document": "evidence"}));
}
