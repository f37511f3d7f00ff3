//! ReAct loop: think, call a tool, observe, repeat until the model emits a
//! `<final>` block or the step cap is hit.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, DecodingConfig, Gateway, GatewayError, ToolCall, ToolSpec};

pub const DEFAULT_MAX_STEPS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleName {
    DeepResearcher,
    ModelDeveloper,
    UnitTester,
    SimulationTester,
}

impl RoleName {
    pub const ALL: [RoleName; 4] = [
        RoleName::DeepResearcher,
        RoleName::ModelDeveloper,
        RoleName::SimulationTester,
        RoleName::UnitTester,
    ];

    /// The only tools this role may call.
    pub fn tools(self) -> &'static [&'static str] {
        match self {
            RoleName::DeepResearcher => &["browser_search", "browser_open"],
            RoleName::ModelDeveloper => &["file_tool", "sandbox", "run_code"],
            RoleName::SimulationTester => &["play_env", "file_tool"],
            RoleName::UnitTester => &["run_code", "run_bash", "file_tool"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleName::DeepResearcher => "DeepResearcher",
            RoleName::ModelDeveloper => "ModelDeveloper",
            RoleName::UnitTester => "UnitTester",
            RoleName::SimulationTester => "SimulationTester",
        }
    }
}

impl fmt::Display for RoleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRole {
    pub name: RoleName,
    pub allowed_tools: BTreeSet<String>,
    pub system_prompt: String,
    pub max_steps: u32,
}

impl AgentRole {
    pub fn new(name: RoleName, system_prompt: impl Into<String>) -> Self {
        AgentRole {
            name,
            allowed_tools: name.tools().iter().map(|s| s.to_string()).collect(),
            system_prompt: system_prompt.into(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    /// Allowed tools equal the fixed per-role set and the step cap is positive.
    pub fn is_valid(&self) -> bool {
        let expected: BTreeSet<String> = self.name.tools().iter().map(|s| s.to_string()).collect();
        self.allowed_tools == expected && self.max_steps >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Thought { text: String },
    ToolCall { call_id: String, name: String, args: Value },
    Observation { call_id: Option<String>, text: String },
    Final { text: String },
    StepCapReached { steps: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub role: RoleName,
    pub events: Vec<TranscriptEvent>,
    pub step_count: u32,
}

impl Transcript {
    /// One JSON object per event, newline terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.events.iter().filter_map(|e| match e {
            TranscriptEvent::ToolCall { name, args, .. } => Some((name.as_str(), args)),
            _ => None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("path escapes the working directory: {0}")]
    PathEscape(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("host is denylisted: {0}")]
    DenylistedHost(String),
    #[error("fetch failed: {0}")]
    Fetch(String),
    #[error("search backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("search quota exceeded")]
    QuotaExceeded,
    #[error("could not spawn process: {0}")]
    Spawn(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("harness failure: {0}")]
    Harness(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can execute named tool calls for an agent.
pub trait ToolExecutor {
    fn has_tool(&self, name: &str) -> bool;
    fn invoke(&mut self, name: &str, args: &Value) -> Result<String, ToolError>;
    fn describe(&self, name: &str) -> String {
        name.to_string()
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("role misconfigured: {0}")]
    Misconfigured(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    /// Contents of the declared final block; `None` when the cap was hit.
    pub final_output: Option<String>,
    /// Raw text of the last assistant reply (best-effort output).
    pub last_reply: String,
    pub step_cap_reached: bool,
    pub transcript: Transcript,
}

const FINAL_OPEN: &str = "<final>";
const FINAL_CLOSE: &str = "</final>";

/// Contents of the single `<final>` block in `reply`, or `None` when there
/// are zero blocks or more than one.
pub fn extract_final(reply: &str) -> Option<String> {
    if reply.matches(FINAL_OPEN).count() != 1 || reply.matches(FINAL_CLOSE).count() != 1 {
        return None;
    }
    let start = reply.find(FINAL_OPEN)? + FINAL_OPEN.len();
    let end = reply.find(FINAL_CLOSE)?;
    if end < start {
        return None;
    }
    Some(reply[start..end].trim().to_string())
}

/// Result of scanning assistant text for a fenced `tool_call` block.
#[derive(Debug, Clone, PartialEq)]
pub enum FencedCall {
    Call { name: String, arguments: Value },
    Malformed(String),
}

/// Finds the first ```` ```tool_call ```` fence and parses its JSON payload
/// `{"name": ..., "arguments": {...}}`.
pub fn parse_fenced_tool_call(text: &str) -> Option<FencedCall> {
    const FENCE: &str = "```tool_call";
    let start = text.find(FENCE)? + FENCE.len();
    let rest = &text[start..];
    let Some(end) = rest.find("```") else {
        return Some(FencedCall::Malformed("unterminated tool_call fence".into()));
    };
    let body = rest[..end].trim();
    let value: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return Some(FencedCall::Malformed(format!("tool_call JSON invalid: {e}"))),
    };
    let Some(name) = value.get("name").and_then(Value::as_str) else {
        return Some(FencedCall::Malformed("tool_call missing \"name\"".into()));
    };
    Some(FencedCall::Call {
        name: name.to_string(),
        arguments: value.get("arguments").cloned().unwrap_or(Value::Object(Default::default())),
    })
}

fn tool_instructions(role: &AgentRole) -> String {
    let tools: Vec<&str> = role.allowed_tools.iter().map(String::as_str).collect();
    format!(
        "\n\n<Tools>\nAvailable tools: {}.\nTo call a tool, reply with a fenced block:\n```tool_call\n{{\"name\": \"<tool>\", \"arguments\": {{...}}}}\n```\nWhen finished, return exactly one <final>...</final> block.\n</Tools>",
        tools.join(", ")
    )
}

enum Action {
    Tool(ToolCall),
    Malformed(String),
    Final(String),
    Nothing(&'static str),
}

/// Runs one agent role to completion or to its step cap.
pub fn run_agent(
    role: &AgentRole,
    task_context: &str,
    gateway: &Gateway,
    tools: &mut dyn ToolExecutor,
    decoding: &DecodingConfig,
) -> Result<AgentRun, AgentError> {
    if role.max_steps == 0 {
        return Err(AgentError::Misconfigured("max_steps must be positive".into()));
    }
    if let Some(missing) = role.allowed_tools.iter().find(|t| !tools.has_tool(t)) {
        return Err(AgentError::Misconfigured(format!("tool {missing} is not registered")));
    }
    let specs: Vec<ToolSpec> = role
        .allowed_tools
        .iter()
        .map(|t| ToolSpec {
            name: t.clone(),
            description: tools.describe(t),
        })
        .collect();

    let mut messages = vec![
        ChatMessage::system(format!("{}{}", role.system_prompt, tool_instructions(role))),
        ChatMessage::user(task_context),
    ];
    let mut transcript = Transcript {
        role: role.name,
        events: Vec::new(),
        step_count: 0,
    };
    let mut last_reply = String::new();
    let mut synthetic_ids = 0u32;

    for step in 1..=role.max_steps {
        let completion = gateway.complete_for(role.name.as_str(), &messages, decoding, &specs)?;
        transcript.step_count = step;
        let reply = completion.reply;
        last_reply = reply.content.clone();

        let action = if let Some(tc) = reply.tool_call.clone() {
            Action::Tool(tc)
        } else if let Some(fenced) = parse_fenced_tool_call(&reply.content) {
            match fenced {
                FencedCall::Call { name, arguments } => {
                    synthetic_ids += 1;
                    Action::Tool(ToolCall {
                        id: format!("fenced_{synthetic_ids}"),
                        name,
                        arguments,
                    })
                }
                FencedCall::Malformed(msg) => Action::Malformed(msg),
            }
        } else if let Some(text) = extract_final(&reply.content) {
            Action::Final(text)
        } else if reply.content.contains(FINAL_OPEN) {
            Action::Nothing("Observation: ambiguous output; return exactly one <final> block.")
        } else {
            Action::Nothing("Observation: no tool call or <final> block found; call a tool or finish with one <final> block.")
        };

        match action {
            Action::Final(text) => {
                if let Some(thought) = thought_before_final(&reply.content) {
                    transcript.events.push(TranscriptEvent::Thought { text: thought });
                }
                transcript.events.push(TranscriptEvent::Final { text: text.clone() });
                return Ok(AgentRun {
                    final_output: Some(text),
                    last_reply,
                    step_cap_reached: false,
                    transcript,
                });
            }
            Action::Tool(tc) => {
                if !reply.content.trim().is_empty() {
                    transcript.events.push(TranscriptEvent::Thought {
                        text: reply.content.clone(),
                    });
                }
                transcript.events.push(TranscriptEvent::ToolCall {
                    call_id: tc.id.clone(),
                    name: tc.name.clone(),
                    args: tc.arguments.clone(),
                });
                let observation = if !role.allowed_tools.contains(&tc.name) {
                    format!("ToolDenied: {} is not available to {}", tc.name, role.name)
                } else if !tc.arguments.is_object() {
                    format!("ToolError: arguments for {} must be a JSON object", tc.name)
                } else {
                    match tools.invoke(&tc.name, &tc.arguments) {
                        Ok(text) => text,
                        Err(e) => format!("ToolError: {e}"),
                    }
                };
                transcript.events.push(TranscriptEvent::Observation {
                    call_id: Some(tc.id.clone()),
                    text: observation.clone(),
                });
                let mut asst = ChatMessage::assistant(reply.content);
                asst.tool_call = Some(tc.clone());
                messages.push(asst);
                messages.push(ChatMessage::tool(tc.id, observation));
            }
            Action::Malformed(msg) => {
                transcript.events.push(TranscriptEvent::Thought {
                    text: reply.content.clone(),
                });
                let text = format!("ToolError: {msg}");
                transcript.events.push(TranscriptEvent::Observation {
                    call_id: None,
                    text: text.clone(),
                });
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(format!("Observation: {text}")));
            }
            Action::Nothing(note) => {
                transcript.events.push(TranscriptEvent::Thought {
                    text: reply.content.clone(),
                });
                transcript.events.push(TranscriptEvent::Observation {
                    call_id: None,
                    text: note.to_string(),
                });
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(note));
            }
        }
    }

    transcript.events.push(TranscriptEvent::StepCapReached { steps: role.max_steps });
    Ok(AgentRun {
        final_output: None,
        last_reply,
        step_cap_reached: true,
        transcript,
    })
}

fn thought_before_final(reply: &str) -> Option<String> {
    let head = reply[..reply.find(FINAL_OPEN)?].trim();
    (!head.is_empty()).then(|| head.to_string())
}
