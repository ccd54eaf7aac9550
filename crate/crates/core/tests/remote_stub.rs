//! The HTTP client against a scripted in-process server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use situgraph::backends::{remote_backend, RemoteBackend};
use situgraph::graphgen::{iterative_graph_gen, RelationSchedule};
use situgraph::{build_query, EffectType, Error, GenerationConfig, GeneratorBackend, QueryTemplate, Relation};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    body: String,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

/// Serves each scripted `(status, body)` to one connection, in order.
fn stub(script: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut parts = request_line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let path = parts.next().unwrap_or_default().to_string();
            let mut length = 0;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some((name, value)) = header.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                method,
                path,
                body: String::from_utf8(buf).unwrap(),
            });
            let reason = if status < 300 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = stream;
            let _ = stream.write_all(response.as_bytes());
        }
    });
    Stub { url, seen }
}

fn client(url: &str, retries: u32) -> RemoteBackend {
    remote_backend(url, Duration::from_secs(5), retries)
        .unwrap()
        .with_backoff(Duration::from_millis(5))
}

fn query() -> situgraph::StQuery {
    build_query(
        "Wind creates waves.",
        "there is a storm",
        Relation::Helps,
        EffectType::Eventual,
        QueryTemplate::Question,
    )
    .unwrap()
}

fn generated(text: &str, logprob: &str) -> String {
    format!(r#"{{"text":"{text}","logprob":{logprob},"token_count":2,"truncated":false}}"#)
}

#[test]
fn canned_generation_and_request_shape() {
    let server = stub(vec![(200, generated("bigger waves", "-1.25"))]);
    let backend = client(&server.url, 0);
    let config = GenerationConfig::new(0.7, 12, 42).unwrap();
    let out = backend.generate(&query(), &config, 3).unwrap();
    assert_eq!(out.scored.text, "bigger waves");
    assert_eq!(out.scored.logprob, -1.25);
    assert!(!out.truncated);

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].method, "POST");
    assert_eq!(seen[0].path, "/v1/generate");
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["prompt"], query().surface.as_str());
    assert_eq!(body["top_p"], 0.7);
    assert_eq!(body["max_tokens"], 12);
    assert_eq!(body["stop"], "</s>");
    assert_eq!(body["seed"], config.derived_seed(3));
}

#[test]
fn score_with_null_logprob_is_impossible() {
    let server = stub(vec![
        (200, r#"{"logprob":-3.0,"token_count":3}"#.into()),
        (200, r#"{"logprob":null,"token_count":1}"#.into()),
    ]);
    let backend = client(&server.url, 0);
    assert_eq!(backend.score("p", "a b c").unwrap().logprob, -3.0);
    assert!(backend.score("p", "zzz").unwrap().is_impossible());
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/score");
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body, serde_json::json!({"prompt": "p", "continuation": "a b c"}));
}

#[test]
fn malformed_responses_are_protocol_errors() {
    let bodies = [
        "{not json".to_string(),
        r#"{"text":"x","logprob":-1,"token_count":1,"truncated":false,"extra":1}"#.to_string(),
        generated("x", "0.5"),
        r#"{"text":"x"}"#.to_string(),
    ];
    for body in bodies {
        let server = stub(vec![(200, body.clone())]);
        let err = client(&server.url, 3)
            .generate(&query(), &GenerationConfig::default(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{body}: {err:?}");
        assert_eq!(server.seen.lock().unwrap().len(), 1, "protocol errors are not retried");
    }
}

#[test]
fn empty_text_is_a_generation_failure() {
    let server = stub(vec![(200, generated("  ", "-0.1"))]);
    let err = client(&server.url, 0)
        .generate(&query(), &GenerationConfig::default(), 0)
        .unwrap_err();
    assert!(matches!(err, Error::GenerationFailure { .. }));
}

#[test]
fn server_errors_are_retried() {
    let server = stub(vec![
        (503, r#"{"error":"loading"}"#.into()),
        (503, r#"{"error":"loading"}"#.into()),
        (200, generated("stronger wind", "-0.5")),
    ]);
    let out = client(&server.url, 3)
        .generate(&query(), &GenerationConfig::default(), 0)
        .unwrap();
    assert_eq!(out.scored.text, "stronger wind");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_run_out() {
    let server = stub(vec![(500, "boom".into()), (503, "still down".into())]);
    let err = client(&server.url, 1)
        .generate(&query(), &GenerationConfig::default(), 0)
        .unwrap_err();
    match err {
        Error::Server { status, body } => {
            assert_eq!(status, 503);
            assert_eq!(body, "still down");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let server = stub(vec![
        (400, r#"{"error":"top_p: out of range"}"#.into()),
        (200, generated("x", "0")),
    ]);
    let err = client(&server.url, 3)
        .generate(&query(), &GenerationConfig::default(), 0)
        .unwrap_err();
    assert!(matches!(&err, Error::Protocol(m) if m.contains("400")), "{err:?}");
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = client(&format!("http://127.0.0.1:{port}"), 1)
        .generate(&query(), &GenerationConfig::default(), 0)
        .unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
}

#[test]
fn slow_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let (_conn, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(800));
    });
    let backend = remote_backend(&url, Duration::from_millis(150), 0).unwrap();
    let err = backend.score("p", "c").unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
    hold.join().unwrap();
}

#[test]
fn health_check() {
    let server = stub(vec![(
        200,
        r#"{"status":"ok","model_name":"tiny","vocab_size":7}"#.into(),
    )]);
    let health = client(&server.url, 0).health().unwrap();
    assert_eq!(health.model_name, "tiny");
    assert_eq!(health.vocab_size, 7);
    assert_eq!(server.seen.lock().unwrap()[0].method, "GET");
    assert_eq!(server.seen.lock().unwrap()[0].path, "/v1/health");
}

#[test]
fn graph_generation_over_the_wire() {
    let server = stub(vec![
        (200, generated("stronger wind", "-0.2")),
        (200, generated("calmer seas", "-0.9")),
    ]);
    let backend = client(&server.url, 0);
    let graph = iterative_graph_gen(
        &backend,
        "Wind creates waves.",
        "there is a storm",
        &RelationSchedule::forward(),
        &GenerationConfig::default(),
    )
    .unwrap();
    assert_eq!(graph.node_count(), 3);
    assert!(graph.validate().is_empty());
    // Parallel dispatch means either answer may land on either relation;
    // both must be present.
    let mut texts: Vec<_> = graph.nodes().iter().skip(1).map(|n| n.text.clone()).collect();
    texts.sort();
    assert_eq!(texts, vec!["calmer seas", "stronger wind"]);
}
