//! The generate, test, refine loop and its on-disk run layout:
//!
//! ```text
//! runs/<task_id>/research/{report.json, transcripts/round_<r>.jsonl}
//! runs/<task_id>/turn_<k>/{<artifact>, tests/, reports.json, transcripts/<role>.jsonl}
//! runs/<task_id>/trajectory.jsonl
//! runs/<task_id>/run_record.json
//! ```

pub mod prompts;
pub mod research;
pub mod testing;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, AgentRole, RoleName, Transcript, DEFAULT_MAX_STEPS};
use crate::gateway::{DecodingConfig, Gateway};
use crate::tools::{ToolConfig, Toolbelt};
use crate::types::*;

pub use research::{knowledge_synthesis, ResearchOutcome};
pub use testing::{
    merge_feedback, run_simulation_test, run_unit_tests, CheckOutcome, DEFAULT_UNIT_TEST_COMMAND, FEEDBACK_MAX_BYTES,
};

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const REPORTS_FILE: &str = "reports.json";

#[derive(Clone)]
pub struct PipelineConfig {
    pub runs_dir: PathBuf,
    pub decoding: DecodingConfig,
    pub max_steps: u32,
    pub unit_test_command: String,
    pub tools: ToolConfig,
}

impl PipelineConfig {
    pub fn new(runs_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            runs_dir: runs_dir.into(),
            decoding: DecodingConfig::default(),
            max_steps: DEFAULT_MAX_STEPS,
            unit_test_command: DEFAULT_UNIT_TEST_COMMAND.to_string(),
            tools: ToolConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task: {}", .0.join("; "))]
    InvalidTask(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One developer turn as stored in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TurnRecord {
    pub turn_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<WorldModelArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TestReport>,
}

/// Everything one refine run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunRecord {
    pub task_id: String,
    pub task: TaskSpec,
    pub research: ResearchReport,
    pub turns: Vec<TurnRecord>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    pub final_artifact: Option<WorldModelArtifact>,
    pub trajectory: InteractionTrajectory,
    pub converged: bool,
    /// Infrastructure problems met along the way (gateway or tool errors).
    #[serde(default)]
    pub faults: Vec<String>,
}

impl RunRecord {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.trajectory.violations();
        let any_pass = self
            .turns
            .iter()
            .any(|t| t.report.as_ref().is_some_and(TestReport::both_pass));
        if self.converged != any_pass {
            out.push("converged disagrees with turn reports".into());
        }
        if self.converged {
            let last = self.turns.last().and_then(|t| t.report.as_ref());
            if !last.is_some_and(TestReport::both_pass) {
                out.push("converged but last turn did not pass".into());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevelopOutcome {
    pub artifact: Option<WorldModelArtifact>,
    pub transcript: Option<Transcript>,
    pub fault: Option<String>,
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some(&text[start..end])
}

/// Strips one surrounding code fence, if present.
fn unfence(code: &str) -> &str {
    let t = code.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => return "",
    };
    body.strip_suffix("```").unwrap_or(body).trim_end_matches(['\n', ' '])
}

/// Parses the developer's final block into (path, code).
pub fn parse_developer_final(text: &str) -> Option<(Option<String>, String)> {
    let path = between(text, "<code_file_path>", "</code_file_path>")
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty());
    let code = between(text, "<entrypoint_code>", "</entrypoint_code>")
        .map(unfence)
        .or_else(|| text.trim_start().starts_with("```").then(|| unfence(text)))?;
    if code.trim().is_empty() {
        return None;
    }
    let mut code = code.to_string();
    code.push('\n');
    Some((path, code))
}

fn entrypoint_for(task: &TaskSpec, declared: Option<&str>) -> String {
    match declared {
        Some(p) if is_contained_relative(Path::new(p)) && !p.starts_with("tests/") => p.to_string(),
        _ => task.representation.default_entrypoint().to_string(),
    }
}

/// Stage II: one developer run. The artifact is saved in the toolbelt's
/// current working directory; `None` when no usable final block came back.
pub fn generate_model(
    task: &TaskSpec,
    report: &ResearchReport,
    feedback: &str,
    turn: u32,
    gateway: &Gateway,
    tools: &mut Toolbelt,
    cfg: &PipelineConfig,
) -> DevelopOutcome {
    let default_entry = task.representation.default_entrypoint();
    let prompt = prompts::develop(task, &report.report_text, feedback, turn, default_entry);
    let mut role = AgentRole::new(RoleName::ModelDeveloper, prompts::DEVELOPER_SYSTEM);
    role.max_steps = cfg.max_steps;
    let run = match run_agent(&role, &prompt, gateway, tools, &cfg.decoding) {
        Ok(r) => r,
        Err(e) => {
            return DevelopOutcome {
                artifact: None,
                transcript: None,
                fault: Some(format!("developer: {e}")),
            }
        }
    };
    let parsed = run.final_output.as_deref().and_then(parse_developer_final);
    let mut fault = None;
    let artifact = parsed.and_then(|(path, code)| {
        let entry = entrypoint_for(task, path.as_deref());
        match tools.workspace().save(&entry, code.as_bytes()) {
            Ok(_) => Some(WorldModelArtifact {
                artifact_id: format!("{}-turn{turn}", task.task_id),
                representation: task.representation,
                source: code,
                entrypoint_path: PathBuf::from(format!("turn_{turn}")).join(&entry),
                turn_index: turn,
                parent_task: task.task_id.clone(),
            }),
            Err(e) => {
                fault = Some(format!("saving artifact: {e}"));
                None
            }
        }
    });
    DevelopOutcome {
        artifact,
        transcript: Some(run.transcript),
        fault,
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("record serializes");
    text.push('\n');
    write(path, &text)
}

fn write_transcript(dir: &Path, name: &str, t: &Option<Transcript>) -> Result<(), PipelineError> {
    match t {
        Some(t) => write(&dir.join("transcripts").join(format!("{name}.jsonl")), &t.to_jsonl()),
        None => Ok(()),
    }
}

/// Runs the whole loop for one task and persists it under
/// `cfg.runs_dir/<task_id>`, replacing any earlier run of that task.
/// Model-quality failures are data: they end up in the record, not in `Err`.
pub fn refine(task: &TaskSpec, gateway: &Gateway, cfg: &PipelineConfig) -> Result<RunRecord, PipelineError> {
    let problems = validate_task(task);
    if !problems.is_empty() {
        return Err(PipelineError::InvalidTask(problems));
    }
    if !is_contained_relative(Path::new(&task.task_id)) || task.task_id.contains('/') {
        return Err(PipelineError::InvalidTask(vec!["task_id must be a plain name".into()]));
    }
    let gw = gateway.new_session();
    let run_dir = cfg.runs_dir.join(&task.task_id);
    if run_dir.exists() {
        std::fs::remove_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    }
    let research_dir = run_dir.join("research");
    let mut tools = Toolbelt::new(cfg.tools.clone(), &research_dir).map_err(io_err(&research_dir))?;

    let research = knowledge_synthesis(task, &gw, &mut tools, cfg);
    let mut faults = research.faults.clone();
    write_json(&research_dir.join("report.json"), &research.report)?;
    for (i, t) in research.transcripts.iter().enumerate() {
        write_transcript(&research_dir, &format!("round_{}", i + 1), &Some(t.clone()))?;
    }

    let mut feedback = String::new();
    let mut prev_hash = "none".to_string();
    let mut turns = Vec::new();
    let mut steps = Vec::new();
    let mut final_artifact = None;
    let mut converged = false;

    for k in 1..=task.turn_budget {
        let turn_dir = run_dir.join(format!("turn_{k}"));
        tools.set_working_dir(&turn_dir).map_err(io_err(&turn_dir))?;
        let state_summary = format!("feedback:\n{feedback}\nartifact_sha256: {prev_hash}");

        let dev = generate_model(task, &research.report, &feedback, k, &gw, &mut tools, cfg);
        write_transcript(&turn_dir, RoleName::ModelDeveloper.as_str(), &dev.transcript)?;
        faults.extend(dev.fault.iter().map(|f| format!("turn {k}: {f}")));
        let Some(artifact) = dev.artifact else {
            steps.push(TrajectoryStep {
                turn_index: k,
                state_summary,
                developer_action: EMPTY_TURN_MARKER.to_string(),
                observation: "Developer returned no artifact; turn skipped.".into(),
                report: None,
            });
            turns.push(TurnRecord {
                turn_index: k,
                artifact: None,
                report: None,
            });
            continue;
        };

        let unit = run_unit_tests(&artifact, task, k, &gw, &mut tools, cfg);
        write_transcript(&turn_dir, RoleName::UnitTester.as_str(), &unit.transcript)?;
        let sim = run_simulation_test(&artifact, task, k, &gw, &mut tools, cfg);
        write_transcript(&turn_dir, RoleName::SimulationTester.as_str(), &sim.transcript)?;
        faults.extend(unit.fault.iter().chain(sim.fault.iter()).map(|f| format!("turn {k}: {f}")));

        let merged = merge_feedback(&unit.report, &sim.report);
        let report = TestReport {
            unit: unit.report,
            simulation: sim.report,
            merged_feedback: merged.clone(),
        };
        write_json(&turn_dir.join(REPORTS_FILE), &report)?;
        let passed = report.both_pass();
        steps.push(TrajectoryStep {
            turn_index: k,
            state_summary,
            developer_action: artifact.source.clone(),
            observation: merged.clone(),
            report: Some(report.clone()),
        });
        turns.push(TurnRecord {
            turn_index: k,
            artifact: Some(artifact.clone()),
            report: Some(report),
        });
        prev_hash = artifact.source_hash();
        final_artifact = Some(artifact);
        if passed {
            converged = true;
            break;
        }
        feedback = merged;
    }

    let trajectory = InteractionTrajectory {
        task_id: task.task_id.clone(),
        steps,
        final_artifact: final_artifact.clone(),
        verifier: u8::from(converged),
        usage: gw.usage(),
    };
    let mut line = serde_json::to_string(&trajectory).expect("trajectory serializes");
    line.push('\n');
    write(&run_dir.join(TRAJECTORY_FILE), &line)?;
    let record = RunRecord {
        task_id: task.task_id.clone(),
        task: task.clone(),
        research: research.report,
        turns,
        final_artifact,
        trajectory,
        converged,
        faults,
    };
    write_json(&run_dir.join(RUN_RECORD_FILE), &record)?;
    Ok(record)
}

/// Runs `refine` over many tasks with at most `parallel` at a time. Results
/// come back in task order.
pub fn run_batch(
    tasks: &[TaskSpec],
    gateway: &Gateway,
    cfg: &PipelineConfig,
    parallel: usize,
) -> Vec<Result<RunRecord, PipelineError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord, PipelineError>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let out = refine(task, gateway, cfg);
                slots.lock().expect("batch lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("batch lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

/// Reads `run_record.json` from a run directory.
pub fn load_run_record(run_dir: &Path) -> Result<RunRecord, String> {
    let path = run_dir.join(RUN_RECORD_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
