mod common;

use std::time::Duration;

use common::{Reply, StubServer};
use logbench::llm::{
    cached_complete, BackendConfig, BackendKind, LlmClient, LlmError, ResponseCache,
};
use logbench::prompt::{render_prompt, PromptVariant};

fn config(url: &str, max_retries: u32) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Remote,
        model_id: "test-model".into(),
        endpoint_url: Some(url.to_owned()),
        max_retries,
        backoff_base_ms: 10,
        timeout_seconds: 5.0,
        requests_per_minute: 600,
        ..BackendConfig::default()
    }
}

fn pt1(log: &str) -> logbench::PromptSpec {
    render_prompt(PromptVariant::Pt1, &[], log).unwrap()
}

#[test]
fn sends_single_user_message_with_bearer_token() {
    let server = StubServer::start(vec![Reply::ok("`cupsd shutdown succeeded'")]);
    let client = LlmClient::remote(&config(&server.url(), 0), "sk-test".into()).unwrap();
    let prompt = pt1("cupsd shutdown succeeded");
    let resp = client.complete(&prompt).unwrap();
    assert_eq!(resp.text, "`cupsd shutdown succeeded'");
    assert_eq!(resp.attempt_count, 1);

    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 1);
    assert_eq!(messages[0]["role"], "user");
    assert_eq!(messages[0]["content"], prompt.rendered.as_str());
}

#[test]
fn rate_limited_without_retries_gives_up_after_one_attempt() {
    let server = StubServer::start(vec![Reply::status(429)]);
    let client = LlmClient::remote(&config(&server.url(), 0), "k".into()).unwrap();
    match client.complete(&pt1("x")) {
        Err(LlmError::RateLimitExhausted { attempts }) => assert_eq!(attempts, 1),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn transient_failures_are_retried() {
    let server = StubServer::start(vec![
        Reply::status(503),
        Reply::status(429),
        Reply::ok("`a <*>'"),
    ]);
    let client = LlmClient::remote(&config(&server.url(), 3), "k".into()).unwrap();
    let resp = client.complete(&pt1("a 1")).unwrap();
    assert_eq!(resp.text, "`a <*>'");
    assert_eq!(resp.attempt_count, 3);
    let seen = server.requests();
    assert_eq!(seen.len(), 3);
    // backoff doubles from 10ms
    assert!(seen[1].at - seen[0].at >= Duration::from_millis(10));
    assert!(seen[2].at - seen[1].at >= Duration::from_millis(20));
}

#[test]
fn server_errors_exhaust_into_transport_error() {
    let server = StubServer::start(vec![Reply::status(500)]);
    let client = LlmClient::remote(&config(&server.url(), 2), "k".into()).unwrap();
    assert!(matches!(
        client.complete(&pt1("x")),
        Err(LlmError::Transport(_))
    ));
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn rejected_credentials_are_not_retried() {
    let server = StubServer::start(vec![Reply::status(401)]);
    let client = LlmClient::remote(&config(&server.url(), 3), "bad".into()).unwrap();
    assert!(matches!(client.complete(&pt1("x")), Err(LlmError::Auth(_))));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn refusal_text_is_returned_verbatim() {
    let refusal = "Could you provide more context about this log?";
    let server = StubServer::start(vec![Reply::ok(refusal)]);
    let client = LlmClient::remote(&config(&server.url(), 0), "k".into()).unwrap();
    assert_eq!(client.complete(&pt1("x")).unwrap().text, refusal);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let client = LlmClient::remote(&config(&url, 1), "k".into()).unwrap();
    assert!(matches!(
        client.complete(&pt1("x")),
        Err(LlmError::Transport(_))
    ));
}

#[test]
fn request_rate_respects_budget() {
    let server = StubServer::start(vec![Reply::ok("`x'")]);
    let cfg = BackendConfig {
        requests_per_minute: 2,
        ..config(&server.url(), 0)
    };
    let client = LlmClient::remote(&cfg, "k".into()).unwrap();
    client.complete(&pt1("a")).unwrap();
    client.complete(&pt1("b")).unwrap();
    // a third request would have to wait a full minute
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let _ = client.complete(&pt1("c"));
        let _ = tx.send(());
    });
    assert!(rx.recv_timeout(Duration::from_millis(500)).is_err());
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn cache_serves_repeat_without_network() {
    let server = StubServer::start(vec![Reply::ok("`send <*> bytes'")]);
    let client = LlmClient::remote(&config(&server.url(), 0), "k".into()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(&dir.path().join("cache.jsonl")).unwrap();
    let p = pt1("send 5 bytes");
    let a = cached_complete(&p, &client, &cache).unwrap();
    let b = cached_complete(&p, &client, &cache).unwrap();
    assert!(!a.cached && b.cached);
    assert_eq!(a.text, b.text);
    assert_eq!(server.requests().len(), 1);
}
