//! RemoteBackend against a throwaway HTTP server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use topicrank::backend::RemoteEmbedder;
use topicrank::{Backend, Error, GenRequest, OptionScoreRequest, RemoteBackend, RemoteConfig};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Responder = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// Serves every connection with `respond(request_number, request)` and records
/// what it received.
fn serve(respond: Arc<Responder>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut headers = Vec::new();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    headers.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req = Seen {
                path,
                headers,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            };
            let n = {
                let mut log = log.lock().unwrap();
                log.push(req.clone());
                log.len()
            };
            let (status, text) = respond(n, &req);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (base, seen)
}

fn config(base: &str) -> RemoteConfig {
    RemoteConfig {
        base_url: base.to_string(),
        model: "fixture-model".into(),
        timeout_s: 5.0,
        max_retries: 3,
        backoff_ms: 1,
        api_key_env: "TOPICRANK_TEST_UNSET_KEY".into(),
        ..RemoteConfig::default()
    }
}

#[test]
fn generate_posts_completion_request() {
    let (base, seen) = serve(Arc::new(|_, req: &Seen| {
        let prompt = req.body["prompt"].as_str().unwrap_or_default().to_uppercase();
        (200, json!({"choices": [{"index": 0, "text": prompt}]}).to_string())
    }));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    let out = backend
        .generate(&GenRequest::new("hello there").max_new_tokens(7))
        .unwrap();
    assert_eq!(out, "HELLO THERE");
    let out = backend.generate(&GenRequest::new("again")).unwrap();
    assert_eq!(out, "AGAIN");

    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/completions");
    assert_eq!(seen[0].body["model"], "fixture-model");
    assert_eq!(seen[0].body["max_tokens"], 7);
    assert!(seen[0].header("authorization").is_none());
    let ids: Vec<&str> = seen.iter().map(|s| s.header("x-request-id").unwrap()).collect();
    assert_ne!(ids[0], ids[1], "request ids must be unique");
}

#[test]
fn option_scores_from_echoed_logprobs() {
    let fixture = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/echo_logprobs.json"),
    )
    .unwrap();
    let (base, seen) = serve(Arc::new(move |_, _: &Seen| (200, fixture.clone())));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    let prompt = "Which passage is more relevant? Answer: ";
    let scores = backend
        .score_options(&OptionScoreRequest::new(prompt, &["A", "B"]))
        .unwrap();
    // " A" straddles the prompt boundary and counts; the lone " " before "B" does not
    assert_eq!(scores, vec![-0.25, -1.75]);

    let seen = seen.lock().unwrap();
    let body = &seen[0].body;
    assert_eq!(body["echo"], true);
    assert_eq!(body["max_tokens"], 1);
    assert_eq!(body["prompt"], json!([format!("{prompt}A"), format!("{prompt}B")]));
}

#[test]
fn retries_server_errors_then_gives_up() {
    let (base, seen) = serve(Arc::new(|_, _: &Seen| (500, "{\"error\": \"overloaded\"}".into())));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    let err = backend.generate(&GenRequest::new("x")).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn recovers_after_rate_limit() {
    let (base, seen) = serve(Arc::new(|n, _: &Seen| {
        if n == 1 {
            (429, "{\"error\": \"slow down\"}".into())
        } else {
            (200, json!({"choices": [{"index": 0, "text": "ok"}]}).to_string())
        }
    }));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    assert_eq!(backend.generate(&GenRequest::new("x")).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn context_overflow_is_not_retried() {
    let (base, seen) = serve(Arc::new(|_, _: &Seen| {
        (
            400,
            json!({"error": {"message": "This model's maximum context length is 512 tokens"}}).to_string(),
        )
    }));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    let err = backend.generate(&GenRequest::new("a long prompt")).unwrap_err();
    assert!(matches!(err, Error::ContextTooLong { .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn other_client_errors_surface_as_backend_errors() {
    let (base, _) = serve(Arc::new(|_, _: &Seen| (404, "{\"error\": \"no such model\"}".into())));
    let backend = RemoteBackend::new(config(&base)).unwrap();
    let err = backend.generate(&GenRequest::new("x")).unwrap_err();
    assert!(matches!(err, Error::Backend(_)), "{err:?}");
}

#[test]
fn scoring_without_logprobs_is_unsupported() {
    let (base, seen) = serve(Arc::new(|_, _: &Seen| (200, "{}".into())));
    let backend = RemoteBackend::new(RemoteConfig {
        supports_logprobs: false,
        ..config(&base)
    })
    .unwrap();
    let err = backend
        .score_options(&OptionScoreRequest::new("p", &["A", "B"]))
        .unwrap_err();
    assert!(matches!(err, Error::CapabilityUnsupported(_)), "{err:?}");
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn embeddings_are_matched_by_index() {
    let (base, seen) = serve(Arc::new(|_, _: &Seen| {
        let data = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        (200, data.to_string())
    }));
    let embedder = RemoteEmbedder::new(RemoteConfig {
        embedding_model: Some("fixture-embed".into()),
        ..config(&base)
    })
    .unwrap();
    let out = embedder.embed(&["first".into(), "second".into()]).unwrap();
    assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["model"], "fixture-embed");
}

#[test]
fn rejects_invalid_config() {
    let err = RemoteBackend::new(RemoteConfig {
        base_url: "ftp://nowhere".into(),
        max_retries: 0,
        ..RemoteConfig::default()
    })
    .err()
    .unwrap();
    let Error::InvalidConfig(problems) = err else { panic!("{err:?}") };
    assert_eq!(problems.len(), 2, "{problems:?}");
}
