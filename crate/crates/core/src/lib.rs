//! Multi-agent generation of symbolic world models (PDDL domains, executable
//! environments, text games) with test-driven refinement, plus the metric
//! suites used to score them.

pub mod agent;
pub mod clock;
pub mod config;
pub mod data;
pub mod cwm;
pub mod gateway;
pub mod pddl;
pub mod pipeline;
pub mod schema;
pub mod textgame;
pub mod tools;
pub mod types;

pub use agent::{extract_final, run_agent, AgentError, AgentRole, AgentRun, RoleName, ToolError, ToolExecutor, Transcript};
pub use clock::{Clock, FrozenClock, SystemClock};
pub use gateway::{ChatMessage, DecodingConfig, Gateway, GatewayError, ScriptEntry, ScriptedGateway};
pub use types::*;
