//! Domain records shared by every stage of the pipeline.
//!
//! All of these are plain values: they validate and (de)serialize, nothing
//! more. Persistent records use snake_case JSON keys.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Target formalism of a generated world model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum Representation {
    PddlDomain,
    CodeEnv,
    TextGame,
}

impl Representation {
    /// Default number of refinement turns for this representation.
    pub fn default_turns(self) -> u32 {
        match self {
            Representation::PddlDomain | Representation::TextGame => 2,
            Representation::CodeEnv => 3,
        }
    }

    /// File name the developer saves its artifact under.
    pub fn default_entrypoint(self) -> &'static str {
        match self {
            Representation::PddlDomain => "domain.pddl",
            Representation::CodeEnv => "environment.py",
            Representation::TextGame => "game.py",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::PddlDomain => "PddlDomain",
            Representation::CodeEnv => "CodeEnv",
            Representation::TextGame => "TextGame",
        }
    }
}

/// A natural-language world-model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub representation: Representation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_name: Option<String>,
    pub turn_budget: u32,
    pub research_rounds: u32,
}

impl TaskSpec {
    /// Builds a task with the representation's default turn budget and no research.
    pub fn new(task_id: impl Into<String>, description: impl Into<String>, representation: Representation) -> Self {
        TaskSpec {
            task_id: task_id.into(),
            description: description.into(),
            representation,
            gold_ref: None,
            env_name: None,
            turn_budget: representation.default_turns(),
            research_rounds: 0,
        }
    }
}

/// Returns every invariant violation of `spec`; empty means the task is well formed.
pub fn validate_task(spec: &TaskSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.task_id.trim().is_empty() {
        out.push("task_id empty".to_string());
    }
    if spec.description.trim().is_empty() {
        out.push("description empty".to_string());
    }
    if spec.turn_budget < 1 {
        out.push("turn_budget must be at least 1".to_string());
    }
    if let Some(path) = &spec.gold_ref {
        if std::fs::File::open(path).is_err() {
            out.push("gold_ref unreadable".to_string());
        }
    }
    out
}

/// True when `path` is relative and never climbs above its base directory.
pub fn is_contained_relative(path: &Path) -> bool {
    !path.as_os_str().is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// A generated world model: PDDL source or a single-file program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct WorldModelArtifact {
    pub artifact_id: String,
    pub representation: Representation,
    pub source: String,
    pub entrypoint_path: PathBuf,
    pub turn_index: u32,
    pub parent_task: String,
}

impl WorldModelArtifact {
    /// Hex SHA-256 of the source text.
    pub fn source_hash(&self) -> String {
        sha256_hex(self.source.as_bytes())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.source.is_empty() {
            out.push("source empty".to_string());
        }
        if !is_contained_relative(&self.entrypoint_path) {
            out.push("entrypoint_path escapes the working directory".to_string());
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// One opened source backing the research report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvidenceEntry {
    pub title: String,
    pub url: String,
    pub retrieved_at: DateTime<Utc>,
    pub snippet: String,
    pub confidence: Confidence,
}

/// Output of knowledge synthesis: the enriched specification plus its evidence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct ResearchReport {
    pub questions: Vec<String>,
    pub evidence_log: Vec<EvidenceEntry>,
    pub report_text: String,
    pub rounds_used: u32,
}

/// One half of a test report (unit or simulation).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct SubReport {
    pub pass: bool,
    pub analysis: String,
    pub suggest_fix: String,
    pub raw_log_tail: String,
}

/// Upper bound on `SubReport::raw_log_tail`, in bytes.
pub const LOG_TAIL_BYTES: usize = 4096;

impl SubReport {
    pub fn passed(analysis: impl Into<String>) -> Self {
        SubReport {
            pass: true,
            analysis: analysis.into(),
            ..Default::default()
        }
    }

    /// A failing report; an empty fix suggestion is replaced by a generic one.
    pub fn failed(analysis: impl Into<String>, suggest_fix: impl Into<String>, log: &str) -> Self {
        let mut fix: String = suggest_fix.into();
        if fix.trim().is_empty() {
            fix = "- Address the failure described in the analysis.".to_string();
        }
        SubReport {
            pass: false,
            analysis: analysis.into(),
            suggest_fix: fix,
            raw_log_tail: tail_utf8(log, LOG_TAIL_BYTES).to_string(),
        }
    }
}

/// Last `max_bytes` of `s`, cut on a char boundary.
pub fn tail_utf8(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut start = s.len() - max_bytes;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

/// First `max_bytes` of `s`, cut on a char boundary.
pub fn head_utf8(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut end = max_bytes;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Merged Testing Team output for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct TestReport {
    pub unit: SubReport,
    pub simulation: SubReport,
    pub merged_feedback: String,
}

impl TestReport {
    pub fn both_pass(&self) -> bool {
        self.unit.pass && self.simulation.pass
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.both_pass() && self.merged_feedback.trim().is_empty() {
            out.push("merged_feedback empty on a failing report".to_string());
        }
        for (name, sub) in [("unit", &self.unit), ("simulation", &self.simulation)] {
            if !sub.pass && sub.suggest_fix.trim().is_empty() {
                out.push(format!("{name}: suggest_fix empty on failure"));
            }
            if sub.raw_log_tail.len() > LOG_TAIL_BYTES {
                out.push(format!("{name}: raw_log_tail exceeds bound"));
            }
        }
        out
    }
}

/// Token and time accounting for a single stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct StageUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_time_seconds: f64,
}

impl StageUsage {
    pub fn add(&mut self, other: &StageUsage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.wall_time_seconds += other.wall_time_seconds;
    }
}

/// Per-stage usage plus the running total.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct UsageStats {
    pub stages: BTreeMap<String, StageUsage>,
    pub total: StageUsage,
}

impl UsageStats {
    pub fn record(&mut self, stage: &str, delta: StageUsage) {
        self.stages.entry(stage.to_string()).or_default().add(&delta);
        self.total.add(&delta);
    }

    pub fn merge(&mut self, other: &UsageStats) {
        for (stage, usage) in &other.stages {
            self.record(stage, *usage);
        }
    }

    /// Totals equal the per-stage sums (time compared to 1e-9 s).
    pub fn is_consistent(&self) -> bool {
        let mut sum = StageUsage::default();
        for u in self.stages.values() {
            sum.add(u);
        }
        sum.input_tokens == self.total.input_tokens
            && sum.output_tokens == self.total.output_tokens
            && (sum.wall_time_seconds - self.total.wall_time_seconds).abs() < 1e-9
    }
}

/// One developer turn: what the developer saw, what it did, what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct TrajectoryStep {
    pub turn_index: u32,
    /// Feedback the developer was given plus the hash of the artifact it revised.
    pub state_summary: String,
    /// The submitted artifact source, or the empty-turn marker.
    pub developer_action: String,
    /// Merged test feedback produced for this turn.
    pub observation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TestReport>,
}

/// Marker stored as `developer_action` when the developer produced no artifact.
pub const EMPTY_TURN_MARKER: &str = "<empty-turn>";

/// The multi-turn developer/tester trace and its verifier outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct InteractionTrajectory {
    pub task_id: String,
    pub steps: Vec<TrajectoryStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_artifact: Option<WorldModelArtifact>,
    pub verifier: u8,
    pub usage: UsageStats,
}

impl InteractionTrajectory {
    /// Report attached to the last non-empty turn.
    pub fn final_report(&self) -> Option<&TestReport> {
        self.steps.iter().rev().find_map(|s| s.report.as_ref())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.final_artifact.is_some() && self.steps.is_empty() {
            out.push("final artifact without steps".to_string());
        }
        if self.verifier > 1 {
            out.push("verifier must be 0 or 1".to_string());
        }
        if self.verifier == 1 {
            let ok = self
                .steps
                .last()
                .and_then(|s| s.report.as_ref())
                .map(TestReport::both_pass)
                .unwrap_or(false);
            if !ok {
                out.push("verifier=1 without passing final report".to_string());
            }
        }
        if !self.usage.is_consistent() {
            out.push("usage totals inconsistent".to_string());
        }
        out
    }
}
