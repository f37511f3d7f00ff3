//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps a [`ChatBackend`] (an OpenAI-compatible HTTP endpoint or
//! a deterministic script) and keeps per-session token accounting. Transport
//! failures are retried with exponential backoff; usage is recorded once per
//! successful call.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::types::{sha256_hex, StageUsage, UsageStats};

pub const ENV_API_BASE: &str = "A2W_API_BASE";
pub const ENV_API_KEY: &str = "A2W_API_KEY";
pub const ENV_MODEL: &str = "A2W_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    /// Correlates a Tool-role message with the call it answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Tool,
            content: content.into(),
            tool_call: None,
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.role != Role::Tool || self.tool_call_id.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            temperature: 0.0,
            top_p: 1.0,
            max_output_tokens: None,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Precondition("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Precondition("top_p must lie in (0, 1]".into()));
        }
        if self.max_output_tokens == Some(0) {
            return Err(GatewayError::Precondition("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Name and description of a tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub reply: ChatMessage,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session token budget of {cap} exceeded")]
    BudgetExceeded { cap: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no script entry matches prompt {prompt_hash}")]
    UnmatchedPrompt { prompt_hash: String },
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("script parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("gateway not configured: {0}")]
    NotConfigured(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], cfg: &DecodingConfig, tools: &[ToolSpec]) -> Result<Completion, GatewayError>;

    /// Whether replies may carry structured tool calls.
    fn supports_tool_calls(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Waits between consecutive attempts; one retry per entry.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            backoff: vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)],
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: usize) -> Self {
        RetryPolicy {
            backoff: vec![Duration::ZERO; retries],
        }
    }
}

/// Shareable gateway handle with its own usage session.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    usage: Arc<Mutex<UsageStats>>,
    token_cap: Option<u64>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("token_cap", &self.token_cap).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            usage: Arc::default(),
            token_cap: None,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn scripted(script: ScriptedGateway) -> Self {
        Gateway::new(Arc::new(script))
    }

    pub fn with_token_cap(mut self, cap: u64) -> Self {
        self.token_cap = Some(cap);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Same backend and policy, fresh usage accounting.
    pub fn new_session(&self) -> Self {
        Gateway {
            usage: Arc::default(),
            ..self.clone()
        }
    }

    pub fn supports_tool_calls(&self) -> bool {
        self.backend.supports_tool_calls()
    }

    pub fn usage(&self) -> UsageStats {
        self.usage.lock().expect("usage lock").clone()
    }

    pub fn complete(&self, messages: &[ChatMessage], cfg: &DecodingConfig) -> Result<Completion, GatewayError> {
        self.complete_for("default", messages, cfg, &[])
    }

    /// Runs one completion and books its usage under `stage`.
    pub fn complete_for(
        &self,
        stage: &str,
        messages: &[ChatMessage],
        cfg: &DecodingConfig,
        tools: &[ToolSpec],
    ) -> Result<Completion, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::Precondition("messages must be non-empty".into()));
        }
        if let Some(bad) = messages.iter().find(|m| !m.is_valid()) {
            return Err(GatewayError::Precondition(format!("{:?} message without call id", bad.role)));
        }
        cfg.validate()?;
        if let Some(cap) = self.token_cap {
            let used = {
                let u = self.usage.lock().expect("usage lock");
                u.total.input_tokens + u.total.output_tokens
            };
            if used >= cap {
                return Err(GatewayError::BudgetExceeded { cap });
            }
        }

        let start = Instant::now();
        let mut attempt = 0;
        let completion = loop {
            match self.backend.complete(messages, cfg, tools) {
                Ok(c) => break c,
                Err(e) if e.is_retryable() && attempt < self.retry.backoff.len() => {
                    log::warn!("gateway attempt {} failed: {e}", attempt + 1);
                    std::thread::sleep(self.retry.backoff[attempt]);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if completion.reply.role != Role::Assistant {
            return Err(GatewayError::Protocol("reply role is not assistant".into()));
        }
        let delta = StageUsage {
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
            wall_time_seconds: self.clock.elapsed_since(start),
        };
        self.usage.lock().expect("usage lock").record(stage, delta);
        Ok(completion)
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptUsage {
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
}

/// One canned reply. `match` is a substring of the last user message, or `*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ScriptToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<ScriptUsage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

impl ScriptEntry {
    pub fn new(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        ScriptEntry {
            pattern: pattern.into(),
            reply: reply.into(),
            tool_call: None,
            usage: None,
        }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Some(ScriptUsage { input_tokens, output_tokens });
        self
    }

    pub fn with_tool_call(mut self, name: impl Into<String>, arguments: Value) -> Self {
        self.tool_call = Some(ScriptToolCall {
            name: name.into(),
            arguments,
        });
        self
    }

    fn is_wildcard(&self) -> bool {
        self.pattern == "*"
    }
}

/// Deterministic backend answering from an ordered script.
///
/// Entries are tried in file order; the first unconsumed entry whose pattern
/// occurs in the last user message answers and is consumed. Wildcard entries
/// are never consumed.
pub struct ScriptedGateway {
    entries: Vec<ScriptEntry>,
    consumed: Mutex<Vec<bool>>,
    calls: Mutex<u64>,
}

impl ScriptedGateway {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let n = entries.len();
        ScriptedGateway {
            entries,
            consumed: Mutex::new(vec![false; n]),
            calls: Mutex::new(0),
        }
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("//") {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(trimmed).map_err(|e| GatewayError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        let consumed = self.consumed.lock().expect("script lock");
        self.entries
            .iter()
            .zip(consumed.iter())
            .filter(|(e, c)| !e.is_wildcard() && !**c)
            .count()
    }
}

/// Reads a JSON-lines script file.
pub fn load_script(path: &Path) -> Result<ScriptedGateway, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    ScriptedGateway::parse(&text)
}

impl ChatBackend for ScriptedGateway {
    fn complete(&self, messages: &[ChatMessage], _cfg: &DecodingConfig, _tools: &[ToolSpec]) -> Result<Completion, GatewayError> {
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let mut consumed = self.consumed.lock().expect("script lock");
        let mut any_open = false;
        let mut hit = None;
        for (i, entry) in self.entries.iter().enumerate() {
            if consumed[i] {
                continue;
            }
            any_open |= !entry.is_wildcard();
            if entry.is_wildcard() || prompt.contains(&entry.pattern) {
                hit = Some(i);
                break;
            }
        }
        let Some(i) = hit else {
            if !any_open {
                return Err(GatewayError::ScriptExhausted);
            }
            return Err(GatewayError::UnmatchedPrompt {
                prompt_hash: sha256_hex(prompt.as_bytes())[..16].to_string(),
            });
        };
        let entry = &self.entries[i];
        if !entry.is_wildcard() {
            consumed[i] = true;
        }
        drop(consumed);
        let mut calls = self.calls.lock().expect("script lock");
        *calls += 1;
        let mut reply = ChatMessage::assistant(entry.reply.clone());
        if let Some(tc) = &entry.tool_call {
            reply.tool_call = Some(ToolCall {
                id: format!("call_{}", *calls),
                name: tc.name.clone(),
                arguments: tc.arguments.clone(),
            });
        }
        let usage = entry.usage.clone().unwrap_or(ScriptUsage {
            input_tokens: 0,
            output_tokens: 0,
        });
        Ok(Completion {
            reply,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
        })
    }

    fn supports_tool_calls(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend

#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackend {
    /// Reads `A2W_API_BASE`, `A2W_API_KEY` and `A2W_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let api_base = std::env::var(ENV_API_BASE).map_err(|_| GatewayError::NotConfigured(format!("{ENV_API_BASE} unset")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| GatewayError::NotConfigured(format!("{ENV_MODEL} unset")))?;
        Ok(HttpBackend {
            api_base,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model,
            timeout: Duration::from_secs(300),
        })
    }

    /// Request body in chat-completions wire format.
    pub fn request_body(&self, messages: &[ChatMessage], cfg: &DecodingConfig, tools: &[ToolSpec]) -> Value {
        let msgs: Vec<Value> = messages.iter().map(wire_message).collect();
        let mut body = json!({
            "model": self.model,
            "messages": msgs,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
        });
        if let Some(max) = cfg.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        if !tools.is_empty() {
            body["tools"] = Value::Array(
                tools
                    .iter()
                    .map(|t| {
                        json!({
                            "type": "function",
                            "function": {
                                "name": t.name,
                                "description": t.description,
                                "parameters": {"type": "object", "additionalProperties": true},
                            }
                        })
                    })
                    .collect(),
            );
        }
        body
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut v = json!({"role": role, "content": m.content});
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    if let Some(tc) = &m.tool_call {
        v["tool_calls"] = json!([{
            "id": tc.id,
            "type": "function",
            "function": {"name": tc.name, "arguments": tc.arguments.to_string()},
        }]);
    }
    v
}

/// Parses a chat-completions response body.
pub fn parse_completion(body: &Value) -> Result<Completion, GatewayError> {
    let msg = body
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::Protocol("missing choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let mut reply = ChatMessage::assistant(content);
    if let Some(tc) = msg.pointer("/tool_calls/0") {
        let name = tc
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Protocol("tool call without function name".into()))?;
        let raw = tc.pointer("/function/arguments").and_then(Value::as_str).unwrap_or("{}");
        // Malformed arguments are passed through as a string so the agent loop
        // can report them back to the model.
        let arguments = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        reply.tool_call = Some(ToolCall {
            id: tc.get("id").and_then(Value::as_str).unwrap_or("call_0").to_string(),
            name: name.to_string(),
            arguments,
        });
    }
    let usage = body.get("usage");
    let tokens = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        reply,
        input_tokens: tokens("prompt_tokens"),
        output_tokens: tokens("completion_tokens"),
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], cfg: &DecodingConfig, tools: &[ToolSpec]) -> Result<Completion, GatewayError> {
        let url = format!("{}/chat/completions", self.api_base.trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = self.request_body(messages, cfg, tools);
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => GatewayError::Transport(format!("HTTP {code}")),
            ureq::Error::StatusCode(code) => GatewayError::Protocol(format!("HTTP {code}")),
            other => GatewayError::Transport(other.to_string()),
        })?;
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Protocol(format!("invalid JSON body: {e}")))?;
        parse_completion(&value)
    }

    fn supports_tool_calls(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn user(s: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::user(s)]
    }

    #[test]
    fn scripted_reply_is_returned() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("*", "OK")]));
        let c = gw.complete(&user("hello"), &DecodingConfig::default()).unwrap();
        assert_eq!(c.reply.content, "OK");
        assert_eq!(c.reply.role, Role::Assistant);
    }

    #[test]
    fn empty_messages_are_rejected() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("*", "OK")]));
        assert!(matches!(gw.complete(&[], &DecodingConfig::default()), Err(GatewayError::Precondition(_))));
    }

    #[test]
    fn usage_accumulates_across_calls() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![
            ScriptEntry::new("a", "1").with_usage(10, 5),
            ScriptEntry::new("a", "2").with_usage(7, 3),
        ]));
        gw.complete(&user("a"), &DecodingConfig::default()).unwrap();
        gw.complete(&user("a"), &DecodingConfig::default()).unwrap();
        let u = gw.usage();
        assert_eq!((u.total.input_tokens, u.total.output_tokens), (17, 8));
    }

    #[test]
    fn wildcard_answers_every_call() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("*", "always")]));
        for i in 0..20 {
            let c = gw.complete(&user(&format!("prompt {i}")), &DecodingConfig::default()).unwrap();
            assert_eq!(c.reply.content, "always");
        }
    }

    #[test]
    fn unmatched_prompt_names_hash() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("needle", "x")]));
        match gw.complete(&user("haystack"), &DecodingConfig::default()) {
            Err(GatewayError::UnmatchedPrompt { prompt_hash }) => {
                assert_eq!(prompt_hash, sha256_hex(b"haystack")[..16]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exhausted_script_is_reported() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("a", "x")]));
        gw.complete(&user("a"), &DecodingConfig::default()).unwrap();
        assert_eq!(gw.complete(&user("a"), &DecodingConfig::default()), Err(GatewayError::ScriptExhausted));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "{\"match\":\"*\",\"reply\":\"ok\"}\n\nnot json\n";
        match ScriptedGateway::parse(text) {
            Err(GatewayError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn token_cap_stops_the_session() {
        let gw = Gateway::scripted(ScriptedGateway::new(vec![ScriptEntry::new("*", "x").with_usage(50, 50)])).with_token_cap(100);
        gw.complete(&user("a"), &DecodingConfig::default()).unwrap();
        assert_eq!(
            gw.complete(&user("a"), &DecodingConfig::default()),
            Err(GatewayError::BudgetExceeded { cap: 100 })
        );
    }

    #[test]
    fn invalid_decoding_config_rejected() {
        let cfg = DecodingConfig {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(DecodingConfig { temperature: -1.0, ..Default::default() }.validate().is_err());
    }

    struct Flaky {
        failures: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, _: &[ChatMessage], _: &DecodingConfig, _: &[ToolSpec]) -> Result<Completion, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(GatewayError::Transport("reset".into()));
            }
            Ok(Completion {
                reply: ChatMessage::assistant("fine"),
                input_tokens: 4,
                output_tokens: 2,
            })
        }
    }

    #[test]
    fn retries_do_not_duplicate_usage() {
        let backend = Arc::new(Flaky {
            failures: AtomicUsize::new(2),
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(backend.clone()).with_retry(RetryPolicy::immediate(3));
        gw.complete(&user("x"), &DecodingConfig::default()).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.usage().total.input_tokens, 4);
    }

    #[test]
    fn retries_are_bounded() {
        let backend = Arc::new(Flaky {
            failures: AtomicUsize::new(10),
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(backend.clone()).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(gw.complete(&user("x"), &DecodingConfig::default()), Err(GatewayError::Transport(_))));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
        assert_eq!(gw.usage().total.input_tokens, 0);
    }

    #[test]
    fn wire_format_round_trip() {
        let backend = HttpBackend {
            api_base: "http://localhost".into(),
            api_key: None,
            model: "m".into(),
            timeout: Duration::from_secs(1),
        };
        let mut asst = ChatMessage::assistant("");
        asst.tool_call = Some(ToolCall {
            id: "c1".into(),
            name: "file_tool".into(),
            arguments: json!({"action": "list"}),
        });
        let body = backend.request_body(
            &[ChatMessage::user("hi"), asst, ChatMessage::tool("c1", "[]")],
            &DecodingConfig::default(),
            &[ToolSpec {
                name: "file_tool".into(),
                description: "files".into(),
            }],
        );
        assert_eq!(body["messages"][2]["tool_call_id"], "c1");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["tools"][0]["function"]["name"], "file_tool");

        let resp = json!({
            "choices": [{"message": {"role": "assistant", "content": null,
                "tool_calls": [{"id": "c9", "type": "function",
                    "function": {"name": "run_code", "arguments": "{\"command\":\"ls\"}"}}]}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let c = parse_completion(&resp).unwrap();
        let tc = c.reply.tool_call.unwrap();
        assert_eq!(tc.name, "run_code");
        assert_eq!(tc.arguments["command"], "ls");
        assert_eq!((c.input_tokens, c.output_tokens), (12, 3));
        assert!(parse_completion(&json!({"nope": 1})).is_err());
    }
}
