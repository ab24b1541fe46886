use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use hybrid_ssd::tuner::backend::{BackendError, LlmBackend, RemoteBackend, RemoteConfig};

/// Serves `replies` to successive POSTs and forwards each request body.
fn stub_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(serde_json::from_slice(&buf).unwrap_or(Value::Null));
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn chat(content: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

fn config(url: &str) -> RemoteConfig {
    let mut c = RemoteConfig::new(url);
    c.auth_env = None;
    c.timeout = Duration::from_secs(5);
    c.backoff = Duration::from_millis(1);
    c
}

#[test]
fn returns_message_content_and_sends_settings() {
    let (url, rx) = stub_server(vec![(200, chat("New configuration: `Windows size: 1500`"))]);
    let mut cfg = config(&url);
    cfg.model = "test-model".into();
    cfg.temperature = 0.6;
    let mut backend = RemoteBackend::new(cfg);
    let reply = backend.query(&["describe the device".into()]).unwrap();
    assert_eq!(reply, "New configuration: `Windows size: 1500`");
    let body = rx.recv().unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.6);
    assert_eq!(body["messages"][0]["content"], "describe the device");
}

#[test]
fn segments_are_sent_in_order_and_last_reply_wins() {
    let (url, rx) = stub_server(vec![(200, chat("ok")), (200, chat("`GC granularity: 2`"))]);
    let mut backend = RemoteBackend::new(config(&url));
    let reply = backend.query(&["one".into(), "two".into()]).unwrap();
    assert_eq!(reply, "`GC granularity: 2`");
    let first = rx.recv().unwrap();
    let second = rx.recv().unwrap();
    assert!(first["messages"][0]["content"].as_str().unwrap().starts_with("[part 1 of 2]"));
    assert!(second["messages"][0]["content"].as_str().unwrap().ends_with("two"));
}

#[test]
fn server_error_is_retried() {
    let (url, _rx) = stub_server(vec![(500, "{}".into()), (200, chat("`Slice size: 1MB`"))]);
    let mut backend = RemoteBackend::new(config(&url));
    assert_eq!(backend.query(&["p".into()]).unwrap(), "`Slice size: 1MB`");
}

#[test]
fn unreachable_endpoint_reports_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = config(&format!("http://127.0.0.1:{port}/v1/chat/completions"));
    cfg.attempts = 3;
    let mut backend = RemoteBackend::new(cfg);
    match backend.query(&["p".into()]) {
        Err(BackendError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
}

#[test]
fn malformed_reply_is_unavailable() {
    let (url, _rx) = stub_server(vec![(200, "{\"nope\": 1}".into())]);
    let mut cfg = config(&url);
    cfg.attempts = 1;
    let mut backend = RemoteBackend::new(cfg);
    assert!(matches!(backend.query(&["p".into()]), Err(BackendError::Unavailable { .. })));
}

#[test]
fn blank_reply_is_empty() {
    let (url, _rx) = stub_server(vec![(200, chat("   "))]);
    let mut backend = RemoteBackend::new(config(&url));
    assert_eq!(backend.query(&["p".into()]), Err(BackendError::Empty));
}

#[test]
fn https_without_token_is_refused() {
    let mut cfg = RemoteConfig::new("https://example.invalid/v1/chat/completions");
    cfg.auth_env = Some("HYBRID_SSD_TEST_UNSET_TOKEN".into());
    let mut backend = RemoteBackend::new(cfg);
    assert_eq!(
        backend.query(&["p".into()]),
        Err(BackendError::MissingToken("HYBRID_SSD_TEST_UNSET_TOKEN".into()))
    );
}
