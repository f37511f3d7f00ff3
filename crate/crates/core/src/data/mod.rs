//! Verifier-gated dataset assembly and the analysis reports built on top of
//! finished runs.

pub mod analysis;
pub mod taxonomy;

use std::io::Write;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::TranscriptEvent;
use crate::pipeline::{load_run_record, prompts, RunRecord};
use crate::types::{InteractionTrajectory, Representation, UsageStats, EMPTY_TURN_MARKER};

pub use analysis::{ngram_contamination, pairwise_wtl, pairwise_wtl_by_id, Contamination, WtlOutcome, CONTAMINATION_N};
pub use taxonomy::{
    classify_failure, error_taxonomy, usage_report, write_csv, write_csv_to, write_json, ErrorClass, TaxonomyRow, UsageRow,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("score lists do not line up: {0}")]
    MismatchedInstances(String),
    #[error("both sub-reports passed; nothing to classify")]
    NoFailure,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Recomputes the verifier from stored reports: 1 iff there is a final
/// artifact and the last turn passed both suites. Never re-executes code.
pub fn verify(trajectory: &InteractionTrajectory) -> u8 {
    if trajectory.final_artifact.is_none() {
        return 0;
    }
    let passed = trajectory
        .steps
        .last()
        .and_then(|s| s.report.as_ref())
        .is_some_and(|r| r.unit.pass && r.simulation.pass);
    u8::from(passed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

impl SftMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        SftMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct TurnOutcome {
    pub turn_index: u32,
    pub empty: bool,
    pub unit_pass: bool,
    pub simulation_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SftMeta {
    pub representation: Representation,
    pub turns: u32,
    pub usage: UsageStats,
}

/// One accepted trajectory, flattened into a chat transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SftRecord {
    pub task_id: String,
    pub messages: Vec<SftMessage>,
    pub verifier: u8,
    pub reward_summary: Vec<TurnOutcome>,
    pub meta: SftMeta,
}

/// Builds the SFT record for an accepted run; `None` when `verify` says 0.
///
/// Messages: system, the task with its research report, then for each turn
/// the developer's artifact followed by the test feedback it received. The
/// final turn's feedback is dropped so the record ends on accepted code.
pub fn sft_record(run: &RunRecord) -> Option<SftRecord> {
    if verify(&run.trajectory) != 1 {
        return None;
    }
    let t = &run.trajectory;
    let mut messages = vec![
        SftMessage::new("system", prompts::DEVELOPER_SYSTEM),
        SftMessage::new(
            "user",
            format!("{}\n\n## Research report\n{}", run.task.description, run.research.report_text),
        ),
    ];
    for (i, step) in t.steps.iter().enumerate() {
        messages.push(SftMessage::new("assistant", step.developer_action.clone()));
        if i + 1 < t.steps.len() {
            messages.push(SftMessage::new("user", step.observation.clone()));
        }
    }
    let reward_summary = t
        .steps
        .iter()
        .map(|s| TurnOutcome {
            turn_index: s.turn_index,
            empty: s.developer_action == EMPTY_TURN_MARKER,
            unit_pass: s.report.as_ref().is_some_and(|r| r.unit.pass),
            simulation_pass: s.report.as_ref().is_some_and(|r| r.simulation.pass),
        })
        .collect();
    Some(SftRecord {
        task_id: run.task_id.clone(),
        messages,
        verifier: 1,
        reward_summary,
        meta: SftMeta {
            representation: run.task.representation,
            turns: t.steps.len() as u32,
            usage: t.usage.clone(),
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub exported: usize,
    pub rejected: usize,
    /// Run directories that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Writes one JSON line per accepted run. `filter` is an extra gate applied
/// after the verifier (pass `|_| true` for the verifier alone).
pub fn export_sft_filtered(
    run_dirs: &[PathBuf],
    out_path: &Path,
    filter: &dyn Fn(&RunRecord) -> bool,
) -> Result<ExportSummary, DataError> {
    let mut summary = ExportSummary::default();
    let mut lines = Vec::new();
    for dir in run_dirs {
        let run = match load_run_record(dir) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping run directory: {e}");
                summary.skipped.push((dir.clone(), e));
                continue;
            }
        };
        match sft_record(&run).filter(|_| filter(&run)) {
            Some(rec) => {
                lines.push(serde_json::to_string(&rec).expect("record serializes"));
                summary.exported += 1;
            }
            None => summary.rejected += 1,
        }
    }
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let mut f = std::fs::File::create(out_path).map_err(|e| DataError::io(out_path, e))?;
    for line in &lines {
        writeln!(f, "{line}").map_err(|e| DataError::io(out_path, e))?;
    }
    Ok(summary)
}

pub fn export_sft(run_dirs: &[PathBuf], out_path: &Path) -> Result<ExportSummary, DataError> {
    export_sft_filtered(run_dirs, out_path, &|_| true)
}

/// Immediate subdirectories of `root` that contain a run record, sorted.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    if root.join(crate::pipeline::RUN_RECORD_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| DataError::io(root, e))? {
        let path = entry.map_err(|e| DataError::io(root, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Everything the research stage read for `run`: the report, evidence
/// snippets and every tool observation in the research transcripts.
pub fn retrieved_text(run_dir: &Path, run: &RunRecord) -> String {
    let mut out = run.research.report_text.clone();
    for e in &run.research.evidence_log {
        out.push('\n');
        out.push_str(&e.snippet);
    }
    let dir = run_dir.join("research").join("transcripts");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    files.sort();
    for f in files {
        let Ok(text) = std::fs::read_to_string(&f) else { continue };
        for line in text.lines() {
            if let Ok(TranscriptEvent::Observation { text, .. }) = serde_json::from_str(line) {
                out.push('\n');
                out.push_str(&text);
            }
        }
    }
    out
}

/// Loads every readable run record under `root`, skipping the rest.
pub fn load_runs(root: &Path) -> Result<(Vec<RunRecord>, Vec<(PathBuf, String)>), DataError> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for dir in find_run_dirs(root)? {
        match load_run_record(&dir) {
            Ok(r) => runs.push(r),
            Err(e) => skipped.push((dir, e)),
        }
    }
    Ok((runs, skipped))
}
