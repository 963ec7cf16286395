mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::pid;
use kindling::conversation::{ConversationState, Participants};
use kindling::remote::{canonical_json, ApiKey, RemoteClient, RemoteEndpointConfig, RemoteError, RemotePolicy, ScoreRubric};
use kindling::{Policy, PolicyError};
use kindling_mock_server::{MockReply, MockServer};
use serde_json::Value;

const SENTINEL: &str = "sk-sentinel-3f9a";

fn config(url: &str) -> RemoteEndpointConfig {
    RemoteEndpointConfig {
        base_url: url.to_owned(),
        api_key: ApiKey::new(SENTINEL),
        model_name: "test-model".into(),
        timeout: Duration::from_secs(2),
        max_retries: 2,
        temperature: 0.5,
        system_prompt: "You are a helpful assistant.".into(),
        backoff_base: Duration::from_millis(20),
        max_in_flight: 4,
    }
}

fn state() -> ConversationState {
    let pair = Participants::new(pid("user"), pid("model")).unwrap();
    ConversationState::from_turns(
        pair,
        [(pid("user"), "hello there"), (pid("model"), "hi! how can I help?"), (pid("user"), "tell me a joke")],
        pid("model"),
    )
    .unwrap()
}

fn canonical(text: &str) -> String {
    canonical_json(&serde_json::from_str::<Value>(text).unwrap())
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn generate_request_matches_golden_fixture() {
    let server = MockServer::start(vec![MockReply::completion("why did the chicken cross the road")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    let action = client.generate(&state(), &pid("model")).unwrap();
    assert_eq!(action.content(), "why did the chicken cross the road");
    assert_eq!(action.author(), &pid("model"));
    assert_eq!(action.turn(), 3);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some(format!("Bearer {SENTINEL}").as_str()));
    assert_eq!(canonical(&reqs[0].body), canonical(&fixture("chat_request.json")));
}

#[test]
fn switching_perspective_swaps_wire_roles() {
    let server = MockServer::start(vec![MockReply::completion("ok")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    let s = state();
    let from_user = client.chat_request(&s.switch_perspective(), &pid("model")).unwrap();
    let direct = client.chat_request(&s, &pid("user")).unwrap();
    assert_eq!(from_user, direct);
    let roles: Vec<&str> = direct.messages.iter().map(|m| m.role.as_str()).collect();
    assert_eq!(roles, ["system", "assistant", "user", "assistant"]);
}

#[test]
fn request_bodies_are_reproducible() {
    let server = MockServer::start(vec![MockReply::completion("a")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    client.generate(&state(), &pid("model")).unwrap();
    client.generate(&state(), &pid("model")).unwrap();
    let reqs = server.requests();
    assert_eq!(reqs[0].body, reqs[1].body);
}

#[test]
fn retries_server_errors_with_backoff() {
    let server = MockServer::start(vec![
        MockReply::status(500, "{}"),
        MockReply::status(500, "{}"),
        MockReply::completion("third time lucky"),
    ]);
    let mut cfg = config(&server.url());
    cfg.backoff_base = Duration::from_millis(50);
    let client = RemoteClient::new(cfg).unwrap();
    let started = Instant::now();
    let action = client.generate(&state(), &pid("model")).unwrap();
    assert_eq!(action.content(), "third time lucky");
    assert_eq!(server.requests().len(), 3);
    // 50 ms then 100 ms.
    assert!(started.elapsed() >= Duration::from_millis(150));
}

#[test]
fn gives_up_after_max_retries() {
    let server = MockServer::start(vec![MockReply::status(503, "{}")]);
    let mut cfg = config(&server.url());
    cfg.max_retries = 1;
    let client = RemoteClient::new(cfg).unwrap();
    assert!(matches!(client.generate(&state(), &pid("model")), Err(RemoteError::HttpStatus(503))));
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn auth_failures_are_not_retried() {
    for status in [401, 403] {
        let server = MockServer::start(vec![MockReply::status(status, "{}")]);
        let client = RemoteClient::new(config(&server.url())).unwrap();
        assert!(matches!(client.generate(&state(), &pid("model")), Err(RemoteError::AuthFailure(s)) if s == status));
        assert_eq!(server.requests().len(), 1);
    }
}

#[test]
fn other_client_errors_are_not_retried() {
    let server = MockServer::start(vec![MockReply::status(404, "{}")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    assert!(matches!(client.generate(&state(), &pid("model")), Err(RemoteError::HttpStatus(404))));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn timeouts_are_retried() {
    let server = MockServer::start(vec![
        MockReply::delayed(Duration::from_millis(600), MockReply::completion("late")),
        MockReply::completion("on time"),
    ]);
    let mut cfg = config(&server.url());
    cfg.timeout = Duration::from_millis(200);
    cfg.max_retries = 1;
    let client = RemoteClient::new(cfg).unwrap();
    assert_eq!(client.generate(&state(), &pid("model")).unwrap().content(), "on time");

    let slow = MockServer::start(vec![MockReply::delayed(Duration::from_millis(600), MockReply::completion("late"))]);
    let mut cfg = config(&slow.url());
    cfg.timeout = Duration::from_millis(150);
    cfg.max_retries = 0;
    let client = RemoteClient::new(cfg).unwrap();
    assert!(matches!(client.generate(&state(), &pid("model")), Err(RemoteError::Timeout)));
}

#[test]
fn malformed_responses_are_reported() {
    for body in [r#"{"id": "x"}"#, r#"{"choices": []}"#, r#"{"choices": [{"message": {}}]}"#, "not json"] {
        let server = MockServer::start(vec![MockReply::status(200, body)]);
        let client = RemoteClient::new(config(&server.url())).unwrap();
        assert!(
            matches!(client.generate(&state(), &pid("model")), Err(RemoteError::MalformedResponse(_))),
            "{body}"
        );
        assert_eq!(server.requests().len(), 1);
    }
}

#[test]
fn remote_score_parses_and_clamps() {
    let rubric = ScoreRubric {
        template: "Rate on [{min}, {max}]:\n{transcript}\n=> {reply}".into(),
        min: 0.0,
        max: 1.0,
    };
    let s = state();
    let reply = s.action("why did the chicken cross the road");

    let server = MockServer::start(vec![MockReply::completion("Score: 0.8")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    assert_eq!(client.score(&rubric, &reply, &s).unwrap(), 0.8);
    assert_eq!(canonical(&server.requests()[0].body), canonical(&fixture("score_request.json")));

    let server = MockServer::start(vec![MockReply::completion("-3")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    assert_eq!(client.score(&rubric, &reply, &s).unwrap(), 0.0);

    let server = MockServer::start(vec![MockReply::completion("great answer!")]);
    let client = RemoteClient::new(config(&server.url())).unwrap();
    assert!(matches!(client.score(&rubric, &reply, &s), Err(RemoteError::Unparsable(_))));
}

#[test]
fn remote_policy_is_generate_only() {
    let server = MockServer::start(vec![MockReply::completion("sure")]);
    let policy = RemotePolicy::new(Arc::new(RemoteClient::new(config(&server.url())).unwrap()));
    let s = state();
    assert_eq!(policy.generate(&s, 0).unwrap().content(), "sure");
    assert!(policy.candidates(&s).is_none());
    assert!(policy.as_template().is_none());
    assert!(matches!(policy.log_prob(&s, &s.action("sure")), Err(PolicyError::Unsupported { .. })));
}

#[test]
fn missing_api_key_sends_no_authorization() {
    let server = MockServer::start(vec![MockReply::completion("hi")]);
    let mut cfg = config(&server.url());
    cfg.api_key = ApiKey::default();
    RemoteClient::new(cfg).unwrap().generate(&state(), &pid("model")).unwrap();
    assert_eq!(server.requests()[0].header("authorization"), None);
}
