//! Rule-based failure taxonomy and token/time accounting over finished runs.
//!
//! The classifier is a keyword heuristic over test reports. It stands in for
//! manual error analysis and every label it emits is marked approximate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::pddl::ErrorCategory;
use crate::pipeline::RunRecord;
use crate::types::{Representation, TestReport};

pub const CODE_ENV_CATEGORIES: &[&str] = &[
    "signature-mismatch",
    "schema-mismatch",
    "dynamics-error",
    "non-deterministic",
    "judgment-bug",
    "invariant-violation",
];

pub const TEXT_GAME_CATEGORIES: &[&str] = &[
    "state-bug",
    "contract-fail",
    "undefined-symbol",
    "invalid-action",
    "syntax-error",
];

/// Closed label set for a benchmark kind.
pub fn categories(rep: Representation) -> Vec<&'static str> {
    match rep {
        Representation::PddlDomain => ErrorCategory::ALL.iter().map(|c| c.as_str()).collect(),
        Representation::CodeEnv => CODE_ENV_CATEGORIES.to_vec(),
        Representation::TextGame => TEXT_GAME_CATEGORIES.to_vec(),
    }
}

fn catch_all(rep: Representation) -> &'static str {
    match rep {
        Representation::PddlDomain => "undefined-constant",
        Representation::CodeEnv => "dynamics-error",
        Representation::TextGame => "state-bug",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorClass {
    pub benchmark: Representation,
    pub category: String,
    pub turn_index: u32,
    /// The text that triggered the rule, or empty for the catch-all.
    pub signal: String,
    /// Set when no rule fired and the catch-all was used.
    pub low_confidence: bool,
    /// Always true: labels come from keyword rules, not manual review.
    pub approximate: bool,
}

const CODE_RULES: &[(&str, &[&str])] = &[
    (
        "signature-mismatch",
        &[
            "positional argument",
            "unexpected keyword",
            "takes ",
            "values to unpack",
            "missing 1 required",
            "is not callable",
            "has no attribute 'reset'",
            "has no attribute 'step'",
            "has no attribute 'set_state'",
        ],
    ),
    (
        "schema-mismatch",
        &[
            "wrong shape",
            "shape mismatch",
            "dtype",
            "must contain observation, reward and done",
            "ProtocolViolation",
            "numeric array",
            "schema",
        ],
    ),
    ("non-deterministic", &["non-deterministic", "nondeterministic", "not reproducible", "differs between runs"]),
    ("invariant-violation", &["invariant", "illegal", "IndexError", "out of bounds"]),
    ("judgment-bug", &["inconsistent with the description", "contradicts the task", "judgment"]),
    ("dynamics-error", &["expected dynamics", "expected observation", "transition", "reward", "AssertionError"]),
];

const GAME_RULES: &[(&str, &[&str])] = &[
    ("syntax-error", &["SyntaxError", "IndentationError", "null bytes", "LoadError", "could not load"]),
    ("undefined-symbol", &["NameError", "is not defined", "AttributeError", "ImportError", "ModuleNotFoundError"]),
    ("invalid-action", &["invalid action", "unknown action", "KeyError", "not a valid action"]),
    ("contract-fail", &["NotImplementedError", "TypeError", "must return", "contract", "missing method"]),
    ("state-bug", &["state", "inventory", "score"]),
];

fn failing_text(report: &TestReport) -> String {
    let mut s = String::new();
    for sub in [&report.unit, &report.simulation] {
        if !sub.pass {
            s.push_str(&sub.analysis);
            s.push('\n');
            s.push_str(&sub.raw_log_tail);
            s.push('\n');
        }
    }
    s
}

/// Maps a failing report to one label from the benchmark's closed set.
pub fn classify_failure(report: &TestReport, rep: Representation, turn_index: u32) -> Result<ErrorClass, DataError> {
    if report.both_pass() {
        return Err(DataError::NoFailure);
    }
    let text = failing_text(report);
    let found: Option<(&str, &str)> = match rep {
        Representation::PddlDomain => ErrorCategory::ALL
            .iter()
            .map(|c| c.as_str())
            .find(|c| text.contains(&format!("[{c}]")) || text.contains(c))
            .map(|c| (c, c)),
        Representation::CodeEnv => first_rule(CODE_RULES, &text),
        Representation::TextGame => first_rule(GAME_RULES, &text),
    };
    let (category, signal, low) = match found {
        Some((c, s)) => (c, s.to_string(), false),
        None => (catch_all(rep), String::new(), true),
    };
    Ok(ErrorClass {
        benchmark: rep,
        category: category.to_string(),
        turn_index,
        signal,
        low_confidence: low,
        approximate: true,
    })
}

fn first_rule(rules: &[(&'static str, &[&'static str])], text: &str) -> Option<(&'static str, &'static str)> {
    rules
        .iter()
        .find_map(|(cat, keys)| keys.iter().find(|k| text.contains(*k)).map(|k| (*cat, *k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TaxonomyRow {
    pub benchmark: Representation,
    pub error_type: String,
    pub turn: u32,
    pub count: usize,
    /// Share of the benchmark's runs with this label at this turn.
    pub percent: f64,
}

/// Label counts per (benchmark, category, turn) over every failing turn.
/// Every closed-set label appears for every observed turn, zero or not.
pub fn error_taxonomy(runs: &[RunRecord]) -> Vec<TaxonomyRow> {
    let mut runs_per: BTreeMap<Representation, usize> = BTreeMap::new();
    let mut max_turn: BTreeMap<Representation, u32> = BTreeMap::new();
    let mut counts: BTreeMap<(Representation, String, u32), usize> = BTreeMap::new();
    for run in runs {
        let rep = run.task.representation;
        *runs_per.entry(rep).or_default() += 1;
        for turn in &run.turns {
            let m = max_turn.entry(rep).or_default();
            *m = (*m).max(turn.turn_index);
            if let Some(class) = turn.report.as_ref().and_then(|r| classify_failure(r, rep, turn.turn_index).ok()) {
                *counts.entry((rep, class.category, turn.turn_index)).or_default() += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for (rep, n) in runs_per {
        for cat in categories(rep) {
            for turn in 1..=max_turn.get(&rep).copied().unwrap_or(0) {
                let count = counts.get(&(rep, cat.to_string(), turn)).copied().unwrap_or(0);
                rows.push(TaxonomyRow {
                    benchmark: rep,
                    error_type: cat.to_string(),
                    turn,
                    count,
                    percent: 100.0 * count as f64 / n as f64,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct UsageRow {
    pub stage: String,
    pub runs: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_time_seconds: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_wall_time_seconds: f64,
}

/// Per-stage token and time totals across runs, plus a final "total" row.
pub fn usage_report(runs: &[RunRecord]) -> Vec<UsageRow> {
    let mut stages: BTreeMap<String, (u64, u64, f64)> = BTreeMap::new();
    let mut total = (0u64, 0u64, 0.0f64);
    for run in runs {
        for (stage, u) in &run.trajectory.usage.stages {
            let e = stages.entry(stage.clone()).or_default();
            e.0 += u.input_tokens;
            e.1 += u.output_tokens;
            e.2 += u.wall_time_seconds;
            total.0 += u.input_tokens;
            total.1 += u.output_tokens;
            total.2 += u.wall_time_seconds;
        }
    }
    let n = runs.len();
    let row = |stage: String, (i, o, w): (u64, u64, f64)| {
        let d = n.max(1) as f64;
        UsageRow {
            stage,
            runs: n,
            input_tokens: i,
            output_tokens: o,
            wall_time_seconds: w,
            mean_input_tokens: i as f64 / d,
            mean_output_tokens: o as f64 / d,
            mean_wall_time_seconds: w / d,
        }
    };
    let mut rows: Vec<UsageRow> = stages.into_iter().map(|(s, v)| row(s, v)).collect();
    rows.push(row("total".into(), total));
    rows
}

/// Writes rows as CSV with a header derived from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    write_csv_to(f, rows).map_err(|e| DataError::io(path, e))
}

pub fn write_csv_to<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    writeln!(f, "{text}").map_err(|e| DataError::io(path, e))
}
