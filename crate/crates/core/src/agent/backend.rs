//! Policy backends: where the next model response comes from.

use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::TokenRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Execution feedback; sent as a user turn on chat endpoints.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    /// Sampled tokens with log-probabilities; never empty.
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("scripted fixture exhausted after {0} responses")]
    Exhausted(usize),
}

pub trait PolicyBackend: Send {
    fn respond(&mut self, history: &[Message], params: &SamplingParams) -> Result<BackendResponse, BackendError>;
}

impl<B: PolicyBackend + ?Sized> PolicyBackend for Box<B> {
    fn respond(&mut self, history: &[Message], params: &SamplingParams) -> Result<BackendResponse, BackendError> {
        (**self).respond(history, params)
    }
}

/// Placeholder tokens for text that came without log-probabilities: one per
/// whitespace-separated chunk, each with probability one.
pub fn pseudo_tokens(text: &str) -> Vec<TokenRecord> {
    let n = text.split_whitespace().count().max(1);
    (0..n).map(|i| TokenRecord { token_id: i as u32, logprob_old: 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedStep {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

impl From<&str> for ScriptedStep {
    fn from(text: &str) -> Self {
        Self { text: text.to_string(), logprobs: None }
    }
}

/// Replays a fixed list of responses, one per call.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    steps: VecDeque<ScriptedStep>,
    served: usize,
}

impl ScriptedBackend {
    pub fn new(steps: impl IntoIterator<Item = ScriptedStep>) -> Self {
        Self { steps: steps.into_iter().collect(), served: 0 }
    }

    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| ScriptedStep::from(t.as_ref())))
    }

    pub fn remaining(&self) -> usize {
        self.steps.len()
    }
}

impl PolicyBackend for ScriptedBackend {
    fn respond(&mut self, _history: &[Message], _params: &SamplingParams) -> Result<BackendResponse, BackendError> {
        let step = self.steps.pop_front().ok_or(BackendError::Exhausted(self.served))?;
        self.served += 1;
        let tokens = match &step.logprobs {
            Some(lps) if !lps.is_empty() => lps
                .iter()
                .enumerate()
                .map(|(i, &lp)| TokenRecord { token_id: i as u32, logprob_old: lp })
                .collect(),
            _ => pseudo_tokens(&step.text),
        };
        Ok(BackendResponse { text: step.text, tokens })
    }
}

/// Scripted responses keyed by task id, one line per task in JSONL:
/// `{"task_id": "...", "responses": [{"text": "..."}, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedFixture {
    pub episodes: HashMap<String, Vec<ScriptedStep>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureLine {
    task_id: String,
    responses: Vec<ScriptedStep>,
}

impl ScriptedFixture {
    pub fn from_jsonl(text: &str) -> Result<Self, crate::jsonl::JsonlError> {
        let lines: Vec<FixtureLine> = crate::jsonl::read_from(text.as_bytes())?;
        Ok(Self { episodes: lines.into_iter().map(|l| (l.task_id, l.responses)).collect() })
    }

    /// Backend for one task; unknown tasks get an empty script.
    pub fn backend_for(&self, task_id: &str) -> ScriptedBackend {
        ScriptedBackend::new(self.episodes.get(task_id).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Full chat-completions endpoint URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset or empty means no auth header.
    pub api_key_env: String,
    pub request_logprobs: bool,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "tablemind".into(),
            api_key_env: "TABLEMIND_API_KEY".into(),
            request_logprobs: true,
            max_retries: 3,
            timeout_secs: 120,
        }
    }
}

/// Chat-completions client over blocking HTTP.
pub struct HttpBackend {
    cfg: HttpBackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self { cfg, client, api_key })
    }

    fn request_body(&self, history: &[Message], params: &SamplingParams) -> Value {
        let messages: Vec<Value> = history
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User | Role::Observation => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if self.cfg.request_logprobs {
            body["logprobs"] = Value::Bool(true);
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.client.post(&self.cfg.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let text = resp.text().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {text}")));
        }
        resp.json::<Value>().map_err(|e| (false, format!("invalid JSON body: {e}")))
    }
}

/// Extracts text and token log-probabilities from a chat-completions reply.
pub fn parse_chat_response(body: &Value) -> Result<BackendResponse, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Unavailable("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))?
        .to_string();
    let tokens: Vec<TokenRecord> = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|item| {
                    let lp = item.get("logprob")?.as_f64()?;
                    let token = item.get("token").and_then(Value::as_str).unwrap_or("");
                    Some(TokenRecord { token_id: fnv1a(token), logprob_old: lp.min(0.0) })
                })
                .collect()
        })
        .unwrap_or_default();
    let tokens = if tokens.is_empty() { pseudo_tokens(&text) } else { tokens };
    Ok(BackendResponse { text, tokens })
}

/// Stable 32-bit id for an opaque token string.
fn fnv1a(s: &str) -> u32 {
    s.bytes().fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

impl PolicyBackend for HttpBackend {
    fn respond(&mut self, history: &[Message], params: &SamplingParams) -> Result<BackendResponse, BackendError> {
        let body = self.request_body(history, params);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(reply) => return parse_chat_response(&reply),
                Err((retryable, msg)) => {
                    if !retryable || attempt >= self.cfg.max_retries {
                        return Err(BackendError::Unavailable(msg));
                    }
                    log::warn!("chat request failed (attempt {}): {msg}", attempt + 1);
                    std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
                    attempt += 1;
                }
            }
        }
    }
}
