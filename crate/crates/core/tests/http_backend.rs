use mspa_core::composer::backend::{BackendError, CompletionBackend, CompletionRequest, ContentPart, Message};
use mspa_core::composer::http::{HttpBackend, HttpEncoder, HttpSettings};
use mspa_core::composer::TextEncoder;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: String,
}

/// Serves one canned `(status, body)` per connection, in order, and records
/// what each request carried.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut authorization = None;
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "authorization" => authorization = Some(value.trim().to_string()),
                    "content-length" => length = value.trim().parse().unwrap(),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { authorization, body: String::from_utf8(buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn settings(endpoint: String, max_attempts: usize) -> HttpSettings {
    HttpSettings {
        endpoint,
        model: "test-model".into(),
        api_key: Some("sekrit".into()),
        timeout: Duration::from_secs(10),
        max_attempts,
        retry_backoff: Duration::from_millis(1),
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        model: String::new(),
        messages: vec![Message { role: "user".into(), content: vec![ContentPart::text("hello")] }],
        temperature: 0.0,
        seed: 3,
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen, handle) = serve(vec![(503, "busy"), (500, "oops"), (200, r#"{"text":"fine"}"#)]);
    let backend = HttpBackend::new(settings(url, 3), false);
    assert_eq!(backend.complete(&request()).unwrap(), "fine");
    handle.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    for s in seen.iter() {
        assert_eq!(s.authorization.as_deref(), Some("Bearer sekrit"));
        let body: serde_json::Value = serde_json::from_str(&s.body).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["seed"], 3);
        assert_eq!(body["messages"][0]["content"][0]["value"], "hello");
    }
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, seen, handle) = serve(vec![(502, ""), (502, "")]);
    let backend = HttpBackend::new(settings(url, 2), false);
    match backend.complete(&request()) {
        Err(e @ BackendError::Transport { attempts: 2, .. }) => assert!(e.is_retryable()),
        other => panic!("unexpected {other:?}"),
    }
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, handle) = serve(vec![(400, "bad")]);
    let backend = HttpBackend::new(settings(url, 5), false);
    assert!(matches!(backend.complete(&request()), Err(BackendError::Protocol(_))));
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let (url, _, handle) = serve(vec![(200, "not json")]);
    let backend = HttpBackend::new(settings(url, 1), false);
    assert!(matches!(backend.complete(&request()), Err(BackendError::Protocol(_))));
    handle.join().unwrap();
}

#[test]
fn encoder_normalizes_and_checks_dimension() {
    let (url, seen, handle) = serve(vec![(200, r#"{"vector":[3.0,4.0]}"#), (200, r#"{"vector":[1.0]}"#)]);
    let enc = HttpEncoder::new(settings(url, 1), 2);
    let v = enc.encode("some text").unwrap();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert!(enc.encode("again").is_err());
    handle.join().unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0].body).unwrap();
    assert_eq!(body["input"], "some text");
}
