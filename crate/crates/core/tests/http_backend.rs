use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::{json, Value};
use tablemind::agent::{BackendError, HttpBackend, HttpBackendConfig, Message, PolicyBackend, Role, SamplingParams};

struct Seen {
    headers: Vec<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and reports
/// what each request carried.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Seen { headers, body: serde_json::from_slice(&buf).unwrap() }).unwrap();
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text},
        "logprobs": {"content": [{"token": "a", "logprob": -0.5}, {"token": "b", "logprob": -1.5}]}}]})
    .to_string()
}

fn backend(url: String, retries: u32, key_env: &str) -> HttpBackend {
    HttpBackend::new(HttpBackendConfig {
        url,
        model: "m".into(),
        api_key_env: key_env.into(),
        request_logprobs: true,
        max_retries: retries,
        timeout_secs: 10,
    })
    .unwrap()
}

const PARAMS: SamplingParams = SamplingParams { temperature: 0.7, max_tokens: 64 };

fn history() -> Vec<Message> {
    vec![
        Message::new(Role::System, "sys"),
        Message::new(Role::User, "question"),
        Message::new(Role::Assistant, "```python\nsum(a)\n```"),
        Message::new(Role::Observation, "<observation status=\"ok\">3</observation>"),
    ]
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![(500, "{}".into()), (200, completion("<answer>{\"answer\":\"3\"}</answer>"))]);
    let mut b = backend(url, 3, "TABLEMIND_TEST_UNSET_KEY");
    let r = b.respond(&history(), &PARAMS).unwrap();
    assert_eq!(r.text, "<answer>{\"answer\":\"3\"}</answer>");
    assert_eq!(r.tokens.iter().map(|t| t.logprob_old).collect::<Vec<_>>(), vec![-0.5, -1.5]);
    let first = seen.recv().unwrap();
    let second = seen.recv().unwrap();
    assert_eq!(first.body, second.body);
    let body = second.body;
    assert_eq!(body["model"], "m");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["logprobs"], true);
    let roles: Vec<&str> = body["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["system", "user", "assistant", "user"]);
    assert!(!second.headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
    let mut b = backend(url, 3, "TABLEMIND_TEST_UNSET_KEY");
    match b.respond(&history(), &PARAMS) {
        Err(BackendError::Unavailable(msg)) => assert!(msg.contains("400"), "{msg}"),
        other => panic!("expected unavailable, got {other:?}"),
    }
    assert!(seen.recv().is_ok());
    assert!(seen.try_recv().is_err());
}

#[test]
fn gives_up_after_max_retries() {
    let (url, seen) = serve(vec![(503, "{}".into()), (429, "{}".into())]);
    let mut b = backend(url, 1, "TABLEMIND_TEST_UNSET_KEY");
    assert!(matches!(b.respond(&history(), &PARAMS), Err(BackendError::Unavailable(_))));
    assert_eq!(seen.iter().count(), 2);
}

#[test]
fn sends_bearer_token_from_env() {
    std::env::set_var("TABLEMIND_TEST_KEY_SET", "s3cret");
    let (url, seen) = serve(vec![(200, completion("hi"))]);
    let mut b = backend(url, 0, "TABLEMIND_TEST_KEY_SET");
    b.respond(&history(), &PARAMS).unwrap();
    let req = seen.recv().unwrap();
    assert!(req.headers.iter().any(|h| h == "authorization: Bearer s3cret" || h == "Authorization: Bearer s3cret"));
}

#[test]
fn unreachable_server_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut b = backend(format!("http://127.0.0.1:{port}/v1/chat/completions"), 0, "TABLEMIND_TEST_UNSET_KEY");
    assert!(matches!(b.respond(&history(), &PARAMS), Err(BackendError::Unavailable(_))));
}
