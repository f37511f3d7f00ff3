//! Stage III checks: unit tests, play-testing and feedback merging.

use serde_json::Value;

use crate::agent::{run_agent, AgentRole, RoleName, Transcript};
use crate::gateway::Gateway;
use crate::pddl;
use crate::tools::play::InteractionLog;
use crate::tools::Toolbelt;
use crate::types::{head_utf8, Representation, SubReport, TaskSpec, WorldModelArtifact};

use super::prompts;
use super::PipelineConfig;

pub const TEST_FILE: &str = "tests/test_env.py";
pub const DEFAULT_UNIT_TEST_COMMAND: &str = "python3 -m pytest -q -p no:cacheprovider tests/test_env.py";
/// Upper bound on merged feedback, in bytes.
pub const FEEDBACK_MAX_BYTES: usize = 8000;
pub const FEEDBACK_TRUNCATION_MARKER: &str = "\n[feedback truncated]";

/// Result of one testing agent plus the transcript it left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub report: SubReport,
    pub transcript: Option<Transcript>,
    pub fault: Option<String>,
}

impl CheckOutcome {
    fn bare(report: SubReport) -> Self {
        CheckOutcome {
            report,
            transcript: None,
            fault: None,
        }
    }
}

/// First `{ ... }` span of `text` parsed as JSON.
pub fn parse_json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok().filter(Value::is_object)
}

fn field(v: Option<&Value>, key: &str) -> String {
    v.and_then(|v| v.get(key))
        .and_then(Value::as_str)
        .unwrap_or("")
        .trim()
        .to_string()
}

/// Replaces run times such as "in 0.12s" with a fixed token so test logs
/// are reproducible.
pub fn mask_durations(log: &str) -> String {
    let mut out = String::with_capacity(log.len());
    let mut rest = log;
    while let Some(i) = rest.find(" in ") {
        out.push_str(&rest[..i + 4]);
        rest = &rest[i + 4..];
        let num: usize = rest
            .char_indices()
            .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
            .map(|(i, c)| i + c.len_utf8())
            .last()
            .unwrap_or(0);
        if num > 0 && rest[..num].contains('.') && rest[num..].starts_with('s') {
            out.push_str("<t>s");
            rest = &rest[num + 1..];
        }
    }
    out.push_str(rest);
    out
}

/// The line a developer most needs to see from a failing test log.
fn key_line(log: &str) -> Option<&str> {
    let lines = || log.lines().map(str::trim);
    lines()
        .find(|l| l.contains("Error:") || l.contains("Exception:"))
        .or_else(|| lines().find(|l| l.starts_with("FAILED") || l.starts_with("ERROR")))
        .map(|l| l.trim_start_matches("E ").trim())
}

fn file_name(artifact: &WorldModelArtifact) -> String {
    artifact
        .entrypoint_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn pddl_unit(artifact: &WorldModelArtifact) -> SubReport {
    match pddl::parse_domain(&artifact.source) {
        Ok(_) => SubReport::passed("Domain parses and validates."),
        Err(e) => SubReport::failed(
            format!("Domain does not validate [{}]: {e}", e.category().as_str()),
            format!("- Fix the {} error reported by the validator.", e.category().as_str()),
            &e.to_string(),
        ),
    }
}

/// Unit-test stage. Code artifacts get an agent-written pytest file that is
/// then run here; the verdict is the exit code alone. PDDL artifacts are
/// parsed and validated instead.
pub fn run_unit_tests(
    artifact: &WorldModelArtifact,
    task: &TaskSpec,
    turn: u32,
    gateway: &Gateway,
    tools: &mut Toolbelt,
    cfg: &PipelineConfig,
) -> CheckOutcome {
    if artifact.representation == Representation::PddlDomain {
        return CheckOutcome::bare(pddl_unit(artifact));
    }
    let mut role = AgentRole::new(RoleName::UnitTester, prompts::UNIT_TESTER_SYSTEM);
    role.max_steps = cfg.max_steps;
    let prompt = prompts::unit_test(task, turn, &file_name(artifact));
    let (verdict, transcript, fault) = match run_agent(&role, &prompt, gateway, tools, &cfg.decoding) {
        Ok(run) => {
            let text = run.final_output.unwrap_or(run.last_reply);
            (parse_json_object(&text), Some(run.transcript), None)
        }
        Err(e) => (None, None, Some(format!("unit tester: {e}"))),
    };
    let suggest = field(verdict.as_ref(), "suggest_fix");

    let report = if tools.workspace().read(TEST_FILE).is_err() {
        SubReport::failed(
            format!("No test file was written at {TEST_FILE}."),
            "- The unit tester must save exactly one pytest file at tests/test_env.py.",
            "",
        )
    } else {
        match tools.exec("run_code", &cfg.unit_test_command) {
            Ok(r) => {
                let log = mask_durations(&format!("{}\n{}", r.stdout_tail, r.stderr_tail));
                if r.success() {
                    SubReport {
                        pass: true,
                        analysis: "All unit tests passed (exit code 0).".into(),
                        suggest_fix: String::new(),
                        raw_log_tail: crate::types::tail_utf8(log.trim(), crate::types::LOG_TAIL_BYTES).to_string(),
                    }
                } else {
                    let mut analysis = if r.timed_out {
                        "Unit tests timed out.".to_string()
                    } else {
                        format!("Unit tests failed (exit code {}).", r.exit_code)
                    };
                    if let Some(line) = key_line(&log) {
                        analysis.push_str(&format!(" {line}"));
                    }
                    let tester = field(verdict.as_ref(), "analysis");
                    if !tester.is_empty() {
                        analysis.push_str(&format!("\nTester notes: {tester}"));
                    }
                    SubReport::failed(analysis, suggest.clone(), log.trim())
                }
            }
            Err(e) => SubReport::failed(format!("Unit tests could not run: {e}"), suggest.clone(), ""),
        }
    };
    CheckOutcome {
        report,
        transcript,
        fault,
    }
}

fn describe_failure(log: &InteractionLog) -> Option<String> {
    let f = log.failure.as_ref()?;
    Some(format!("Simulation failed with {}: {}", f.error_type, f.message))
}

fn describe_mismatches(log: &InteractionLog) -> String {
    let mut lines = vec![format!(
        "{} of {} checked transitions disagree with the expected dynamics.",
        log.mismatches, log.reference_checked
    )];
    for step in log.steps.iter().filter(|s| s.reference.as_ref().is_some_and(|r| !r.matches)).take(3) {
        let r = step.reference.as_ref().expect("filtered");
        lines.push(format!(
            "step {} action {}: got observation {} reward {} done {:?}; expected observation {:?} reward {} done {}",
            step.index,
            step.action,
            step.observation.clone().unwrap_or(Value::Null),
            step.reward.clone().unwrap_or(Value::Null),
            step.done,
            r.expected_observation,
            r.expected_reward,
            r.expected_done
        ));
    }
    lines.join("\n")
}

/// Simulation stage. PDDL artifacts get the empty-goal solvability probe.
/// Code artifacts are played through the harness; exceptions and non-finite
/// numbers fail outright, reference comparisons decide when available, and
/// otherwise the tester's verdict decides.
pub fn run_simulation_test(
    artifact: &WorldModelArtifact,
    task: &TaskSpec,
    turn: u32,
    gateway: &Gateway,
    tools: &mut Toolbelt,
    cfg: &PipelineConfig,
) -> CheckOutcome {
    if artifact.representation == Representation::PddlDomain {
        let report = match pddl::solvability_probe(&artifact.source) {
            Ok(()) => SubReport::passed("Empty-goal probe problem is accepted and solved."),
            Err(e) => SubReport::failed(
                format!("Solvability probe failed: {e}"),
                "- Make the domain usable by a planner on a trivial problem.",
                &e,
            ),
        };
        return CheckOutcome::bare(report);
    }

    tools.set_artifact(Some(artifact.clone()), task.env_name.clone());
    let mut role = AgentRole::new(RoleName::SimulationTester, prompts::SIMULATION_TESTER_SYSTEM);
    role.max_steps = cfg.max_steps;
    let prompt = prompts::simulation_test(task, turn, &file_name(artifact));
    let (verdict, transcript, fault) = match run_agent(&role, &prompt, gateway, tools, &cfg.decoding) {
        Ok(run) => {
            let text = run.final_output.unwrap_or(run.last_reply);
            (parse_json_object(&text), Some(run.transcript), None)
        }
        Err(e) => (None, None, Some(format!("simulation tester: {e}"))),
    };

    let log = match tools.last_play().cloned() {
        Some(log) => Ok(log),
        None => {
            let path = tools.workspace().root().join(file_name(artifact));
            tools.play(artifact, &path)
        }
    };
    let tester_analysis = field(verdict.as_ref(), "analysis");
    let tester_fix = field(verdict.as_ref(), "suggest_fix");
    let with_notes = |mut s: String| {
        if !tester_analysis.is_empty() {
            s.push_str(&format!("\nTester notes: {tester_analysis}"));
        }
        s
    };
    let log_text = |log: &InteractionLog| serde_json::to_string(log).expect("log serializes");

    let report = match log {
        Err(e) => SubReport::failed(format!("Simulation could not start: {e}"), tester_fix.clone(), ""),
        Ok(log) => {
            if let Some(msg) = describe_failure(&log) {
                let tail = log.failure.as_ref().map(|f| f.log_tail.clone()).unwrap_or_default();
                SubReport::failed(with_notes(msg), tester_fix.clone(), &tail)
            } else if log.nonfinite {
                SubReport::failed(
                    with_notes("Simulation produced non-finite values (NaN or infinity) in observations or rewards.".into()),
                    if tester_fix.is_empty() {
                        "- Guard every arithmetic path so observations and rewards stay finite.".into()
                    } else {
                        tester_fix.clone()
                    },
                    &log_text(&log),
                )
            } else if log.reference_checked > 0 {
                if log.mismatches == 0 {
                    SubReport::passed(format!(
                        "{} transitions played; all match the expected dynamics within tolerance.",
                        log.reference_checked
                    ))
                } else {
                    SubReport::failed(with_notes(describe_mismatches(&log)), tester_fix.clone(), &log_text(&log))
                }
            } else {
                match verdict.as_ref().and_then(|v| v.get("success")).and_then(Value::as_bool) {
                    Some(true) => SubReport::passed(if tester_analysis.is_empty() {
                        "Simulation tester reports no violations.".to_string()
                    } else {
                        tester_analysis.clone()
                    }),
                    Some(false) => SubReport::failed(
                        if tester_analysis.is_empty() {
                            "Simulation tester reports a violation.".to_string()
                        } else {
                            tester_analysis.clone()
                        },
                        tester_fix.clone(),
                        &log_text(&log),
                    ),
                    None => SubReport::failed(
                        "Simulation tester returned no verdict.",
                        tester_fix.clone(),
                        &log_text(&log),
                    ),
                }
            }
        }
    };
    CheckOutcome {
        report,
        transcript,
        fault,
    }
}

fn section(label: &str, sub: &super::SubReport, budget: usize) -> String {
    let mut s = if sub.pass {
        format!("## {label}: PASSED\n{}", sub.analysis.trim())
    } else {
        format!(
            "## {label}: FAILED\n{}\nSuggested fixes:\n{}",
            sub.analysis.trim(),
            sub.suggest_fix.trim()
        )
    };
    if s.len() > budget {
        let keep = head_utf8(&s, budget - FEEDBACK_TRUNCATION_MARKER.len()).len();
        s.truncate(keep);
        s.push_str(FEEDBACK_TRUNCATION_MARKER);
    }
    s
}

/// Unit section then simulation section, each held to half the bound.
pub fn merge_feedback(unit: &SubReport, sim: &SubReport) -> String {
    if unit.pass && sim.pass {
        return "Both suites passed: unit tests and simulation test.".to_string();
    }
    let half = FEEDBACK_MAX_BYTES / 2 - 1;
    format!("{}\n\n{}", section("Unit tests", unit, half), section("Simulation test", sim, half))
}
