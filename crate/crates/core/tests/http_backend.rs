use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use divmerge::llm::{ChatBackend, ChatMessage, CompletionRequest, HttpBackend, LlmError, ProviderConfig};

/// Serves one canned (status, body) per connection, recording request bodies.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            let mut line = String::new();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            log.lock().unwrap().push(String::from_utf8(request).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen, handle)
}

fn request() -> CompletionRequest {
    CompletionRequest {
        model_id: "m".into(),
        messages: vec![ChatMessage::user("SELECT?")],
        temperature: 0.0,
        max_tokens: 16,
        stop_sequences: Vec::new(),
    }
}

fn backend(base: String) -> HttpBackend {
    let mut config = ProviderConfig::http(base);
    config.retry_backoff_ms = 1;
    config.max_retries = 3;
    config.api_key_env_var = "DIVMERGE_TEST_NO_SUCH_KEY".into();
    HttpBackend::new(config)
}

const OK: &str =
    r#"{"choices":[{"message":{"content":"SELECT 1"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;

#[test]
fn transient_errors_are_retried() {
    let (base, seen, server) = serve(vec![(500, "{}"), (503, "{}"), (200, OK)]);
    let response = backend(base).complete(&request()).unwrap();
    server.join().unwrap();
    assert_eq!(response.text, "SELECT 1");
    assert_eq!(response.retries, 2);
    assert_eq!((response.prompt_tokens, response.completion_tokens), (7, 2));
    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "m");
    assert_eq!(sent["messages"][0]["content"], "SELECT?");
}

#[test]
fn client_errors_fail_immediately() {
    let (base, seen, server) = serve(vec![(401, r#"{"error":"bad key"}"#)]);
    let err = backend(base).complete(&request()).unwrap_err();
    server.join().unwrap();
    match err {
        LlmError::Provider { status, retries, .. } => assert_eq!((status, retries), (Some(401), 0)),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_are_bounded() {
    let (base, seen, server) = serve(vec![(500, "{}"); 4]);
    let err = backend(base).complete(&request()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(
        err,
        LlmError::Provider {
            status: Some(500),
            retries: 3,
            ..
        }
    ));
    assert_eq!(seen.lock().unwrap().len(), 4);
}
