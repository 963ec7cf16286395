//! Blocking client for an OpenAI-compatible chat-completions endpoint, used
//! as a generate-only policy and as an optional extrinsic scorer.

use std::fmt;
use std::io::ErrorKind;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::conversation::{Action, ConversationState, ParticipantId, Role};
use crate::policy::{Policy, PolicyError};
use crate::reward::{ExtrinsicScorer, RewardError};

pub const API_KEY_ENV: &str = "KINDLING_API_KEY";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {0}")]
    HttpStatus(u16),
    #[error("authentication rejected (HTTP {0})")]
    AuthFailure(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no number found in score reply `{0}`")]
    Unparsable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Conversation(#[from] crate::conversation::ConversationError),
}

/// Secret bearer token. Never printed, never serialized.
#[derive(Clone, Default)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env() -> Self {
        Self(std::env::var(API_KEY_ENV).unwrap_or_default())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

fn default_timeout_secs() -> f64 {
    30.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_temperature() -> f64 {
    0.7
}
fn default_backoff_secs() -> f64 {
    0.5
}
fn default_max_in_flight() -> usize {
    4
}

/// Endpoint parameters as they appear in a run configuration. The API key
/// is taken from the environment, not from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub system_prompt: String,
    #[serde(default = "default_backoff_secs")]
    pub backoff_base_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

#[derive(Debug, Clone)]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    pub api_key: ApiKey,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub temperature: f64,
    pub system_prompt: String,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl RemoteEndpointConfig {
    pub fn from_settings(settings: &RemoteSettings, api_key: ApiKey) -> Result<Self, RemoteError> {
        let secs = |v: f64, what: &str| {
            Duration::try_from_secs_f64(v).map_err(|_| RemoteError::Config(format!("{what} must be a non-negative number of seconds")))
        };
        let cfg = Self {
            base_url: settings.base_url.clone(),
            api_key,
            model_name: settings.model_name.clone(),
            timeout: secs(settings.timeout_secs, "timeout_secs")?,
            max_retries: settings.max_retries,
            temperature: settings.temperature,
            system_prompt: settings.system_prompt.clone(),
            backoff_base: secs(settings.backoff_base_secs, "backoff_base_secs")?,
            max_in_flight: settings.max_in_flight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(RemoteError::Config(format!("base_url `{}` is not an http(s) URL", self.base_url)));
        }
        if self.timeout.is_zero() {
            return Err(RemoteError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(RemoteError::Config("max_in_flight must be >= 1".into()));
        }
        if !self.temperature.is_finite() {
            return Err(RemoteError::Config("temperature must be finite".into()));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

/// JSON text with object keys sorted recursively.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let mut entries: Vec<_> = map.iter().collect();
                entries.sort_by(|a, b| a.0.cmp(b.0));
                Value::Object(entries.into_iter().map(|(k, v)| (k.clone(), sort(v))).collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

struct Gate {
    in_flight: Mutex<usize>,
    released: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.released.notify_one();
    }
}

pub struct RemoteClient {
    cfg: RemoteEndpointConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteClient").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry(RemoteError),
    Fail(RemoteError),
}

impl RemoteClient {
    pub fn new(cfg: RemoteEndpointConfig) -> Result<Self, RemoteError> {
        cfg.validate()?;
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(cfg.timeout))
                .http_status_as_error(false)
                .build(),
        );
        let gate = Gate {
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            limit: cfg.max_in_flight,
        };
        Ok(Self { cfg, agent, gate })
    }

    pub fn config(&self) -> &RemoteEndpointConfig {
        &self.cfg
    }

    /// Request body for a reply from `viewpoint`: its own messages become
    /// `assistant` turns, the other participant's become `user` turns.
    pub fn chat_request(&self, state: &ConversationState, viewpoint: &ParticipantId) -> Result<ChatRequest, RemoteError> {
        let transcript = state.render_for_speaker(viewpoint)?;
        let mut messages = Vec::with_capacity(transcript.messages().len() + 1);
        messages.push(ChatMessage::new("system", self.cfg.system_prompt.clone()));
        for m in transcript.messages() {
            let role = match m.role {
                Role::Own => "assistant",
                Role::Other => "user",
            };
            messages.push(ChatMessage::new(role, m.content.clone()));
        }
        Ok(ChatRequest {
            model: self.cfg.model_name.clone(),
            messages,
            temperature: self.cfg.temperature,
        })
    }

    pub fn score_request(&self, rubric: &ScoreRubric, action: &Action, state: &ConversationState) -> ChatRequest {
        ChatRequest {
            model: self.cfg.model_name.clone(),
            messages: vec![
                ChatMessage::new("system", self.cfg.system_prompt.clone()),
                ChatMessage::new("user", rubric.render(state, action)),
            ],
            temperature: self.cfg.temperature,
        }
    }

    /// POSTs the request and returns the first choice's content, retrying
    /// timeouts and 5xx responses with exponential backoff.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, RemoteError> {
        let body = canonical_json(&serde_json::to_value(request).map_err(|e| RemoteError::Config(e.to_string()))?);
        let _slot = self.gate.acquire();
        let mut delay = self.cfg.backoff_base;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(err);
                    }
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self.agent.post(self.cfg.completions_url()).header("Content-Type", "application/json");
        if !self.cfg.api_key.is_empty() {
            req = req.header("Authorization", format!("Bearer {}", self.cfg.api_key.expose()));
        }
        let mut resp = match req.send(body) {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(RemoteError::Timeout),
            Err(ureq::Error::Io(e)) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
                return Attempt::Retry(RemoteError::Timeout)
            }
            Err(e) => return Attempt::Fail(RemoteError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        match status {
            401 | 403 => return Attempt::Fail(RemoteError::AuthFailure(status)),
            500..=599 => return Attempt::Retry(RemoteError::HttpStatus(status)),
            200..=299 => {}
            _ => return Attempt::Fail(RemoteError::HttpStatus(status)),
        }
        let text = match resp.body_mut().read_to_string() {
            Ok(text) => text,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(RemoteError::Timeout),
            Err(e) => return Attempt::Fail(RemoteError::Transport(e.to_string())),
        };
        match first_choice_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fail(e),
        }
    }

    pub fn generate(&self, state: &ConversationState, viewpoint: &ParticipantId) -> Result<Action, RemoteError> {
        let content = self.complete(&self.chat_request(state, viewpoint)?)?;
        Ok(Action::new(viewpoint.clone(), state.len(), content))
    }

    pub fn score(&self, rubric: &ScoreRubric, action: &Action, state: &ConversationState) -> Result<f64, RemoteError> {
        let reply = self.complete(&self.score_request(rubric, action, state))?;
        parse_score(&reply, rubric.min, rubric.max)
    }
}

fn first_choice_content(text: &str) -> Result<String, RemoteError> {
    let value: Value = serde_json::from_str(text).map_err(|e| RemoteError::MalformedResponse(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| RemoteError::MalformedResponse("missing `choices`".into()))?;
    choices
        .first()
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| RemoteError::MalformedResponse("missing `choices[0].message.content`".into()))
}

/// First decimal number in `reply`, clamped to `[min, max]`.
pub fn parse_score(reply: &str, min: f64, max: f64) -> Result<f64, RemoteError> {
    static NUMBER: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)").expect("valid regex"));
    let m = re.find(reply).ok_or_else(|| RemoteError::Unparsable(reply.to_owned()))?;
    let value: f64 = m.as_str().parse().map_err(|_| RemoteError::Unparsable(reply.to_owned()))?;
    Ok(value.clamp(min, max))
}

pub const DEFAULT_RUBRIC: &str = "Rate how good the final reply is for the person receiving it, \
on a scale from {min} to {max}. Answer with a single number.\n\nConversation:\n{transcript}\n\nReply:\n{reply}";

fn default_rubric() -> String {
    DEFAULT_RUBRIC.to_owned()
}
fn default_min() -> f64 {
    0.0
}
fn default_max() -> f64 {
    1.0
}

/// Prompt template for remote scoring. `{transcript}`, `{reply}`, `{min}`
/// and `{max}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRubric {
    #[serde(default = "default_rubric")]
    pub template: String,
    #[serde(default = "default_min")]
    pub min: f64,
    #[serde(default = "default_max")]
    pub max: f64,
}

impl Default for ScoreRubric {
    fn default() -> Self {
        Self {
            template: default_rubric(),
            min: default_min(),
            max: default_max(),
        }
    }
}

impl ScoreRubric {
    pub fn render(&self, state: &ConversationState, action: &Action) -> String {
        let transcript = state
            .messages()
            .iter()
            .map(|m| format!("{}: {}", m.author, m.content))
            .collect::<Vec<_>>()
            .join("\n");
        self.template
            .replace("{min}", &self.min.to_string())
            .replace("{max}", &self.max.to_string())
            .replace("{transcript}", &transcript)
            .replace("{reply}", action.content())
    }
}

/// Hosted chat model as a generate-only policy.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    client: Arc<RemoteClient>,
}

impl RemotePolicy {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        Self { client }
    }
}

impl Policy for RemotePolicy {
    fn kind(&self) -> &'static str {
        "remote"
    }

    /// Sampling happens server-side; `seed` is not forwarded.
    fn generate(&self, state: &ConversationState, _seed: u64) -> Result<Action, PolicyError> {
        self.client
            .generate(state, state.next_speaker())
            .map_err(|e| PolicyError::GenerationFailure(e.to_string()))
    }
}

/// Hosted chat model prompted to rate a reply.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    client: Arc<RemoteClient>,
    rubric: ScoreRubric,
}

impl RemoteScorer {
    pub fn new(client: Arc<RemoteClient>, rubric: ScoreRubric) -> Self {
        Self { client, rubric }
    }
}

impl ExtrinsicScorer for RemoteScorer {
    fn kind(&self) -> &'static str {
        "remote"
    }

    fn score(&self, action: &Action, state: &ConversationState) -> Result<f64, RewardError> {
        Ok(self.client.score(&self.rubric, action, state)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_score_rules() {
        assert_eq!(parse_score("Score: 0.8", 0.0, 1.0).unwrap(), 0.8);
        assert_eq!(parse_score("-3", 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(parse_score("7 out of 10", 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(parse_score("about .25", 0.0, 1.0).unwrap(), 0.25);
        assert!(matches!(parse_score("great answer!", 0.0, 1.0), Err(RemoteError::Unparsable(_))));
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b":1,"a":{"z":[{"y":1,"x":2}],"c":null}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":null,"z":[{"x":2,"y":1}]},"b":1}"#);
    }

    #[test]
    fn api_key_is_redacted_in_debug() {
        let cfg = RemoteEndpointConfig {
            base_url: "http://localhost:1".into(),
            api_key: ApiKey::new("sk-sentinel"),
            model_name: "m".into(),
            timeout: Duration::from_secs(1),
            max_retries: 0,
            temperature: 0.0,
            system_prompt: String::new(),
            backoff_base: Duration::from_millis(1),
            max_in_flight: 1,
        };
        assert!(!format!("{cfg:?}").contains("sk-sentinel"));
    }

    #[test]
    fn settings_validation() {
        let settings: RemoteSettings =
            serde_json::from_str(r#"{"base_url": "ftp://x", "model_name": "m"}"#).unwrap();
        assert!(matches!(
            RemoteEndpointConfig::from_settings(&settings, ApiKey::default()),
            Err(RemoteError::Config(_))
        ));
        let zero: RemoteSettings =
            serde_json::from_str(r#"{"base_url": "http://x", "model_name": "m", "timeout_secs": 0}"#).unwrap();
        assert!(RemoteEndpointConfig::from_settings(&zero, ApiKey::default()).is_err());
        assert!(serde_json::from_str::<RemoteSettings>(r#"{"base_url": "http://x", "model_name": "m", "api_key": "k"}"#).is_err());
    }
}
