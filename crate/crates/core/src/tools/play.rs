//! Bounded interactive session against a harness, with optional step-level
//! comparison to a native reference environment.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cwm::{Action, ActionSpace, EnvSpace, WorldModel};
use crate::tools::harness::{action_to_wire, wire_to_array, wire_to_num, HarnessError, HarnessOp, HarnessSession};
use crate::types::Representation;

pub const DEFAULT_PLAY_STEPS: usize = 50;
pub const DEFAULT_PLAY_SECONDS: u64 = 120;
pub const MATCH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayConfig {
    pub budget: usize,
    pub session_timeout: Duration,
    pub seed: u64,
    /// Scripted actions used before falling back to seeded sampling.
    pub probes: Vec<Value>,
    pub tolerance: f64,
}

impl Default for PlayConfig {
    fn default() -> Self {
        PlayConfig {
            budget: DEFAULT_PLAY_STEPS,
            session_timeout: Duration::from_secs(DEFAULT_PLAY_SECONDS),
            seed: 0,
            probes: Vec::new(),
            tolerance: MATCH_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    HarnessCrash,
    ProtocolViolation,
    Exception,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayFailure {
    pub kind: FailureKind,
    pub error_type: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub log_tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub expected_observation: Vec<f64>,
    pub expected_reward: f64,
    pub expected_done: bool,
    pub max_abs_error: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayRecord {
    pub index: usize,
    pub action: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub representation: Representation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spaces: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset_observation: Option<Value>,
    pub steps: Vec<PlayRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<PlayFailure>,
    pub nonfinite: bool,
    pub reference_checked: usize,
    pub mismatches: usize,
}

impl InteractionLog {
    fn new(representation: Representation) -> Self {
        InteractionLog {
            representation,
            spaces: None,
            reset_observation: None,
            steps: Vec::new(),
            failure: None,
            nonfinite: false,
            reference_checked: 0,
            mismatches: 0,
        }
    }

    pub fn healthy(&self) -> bool {
        self.failure.is_none() && !self.nonfinite && self.mismatches == 0
    }
}

fn failure_from(e: HarnessError, during: &str) -> PlayFailure {
    match e {
        HarnessError::Remote(r) => PlayFailure {
            kind: if during == "reset" || during == "game_init" {
                FailureKind::HarnessCrash
            } else {
                FailureKind::Exception
            },
            error_type: r.kind.clone(),
            message: format!("{} during {during}: {}", r.kind, r.message),
            log_tail: r.traceback_tail,
        },
        HarnessError::Crash { message, log_tail } => PlayFailure {
            kind: FailureKind::HarnessCrash,
            error_type: "HarnessCrash".into(),
            message: format!("{message} during {during}"),
            log_tail,
        },
        HarnessError::Protocol(m) => PlayFailure {
            kind: FailureKind::ProtocolViolation,
            error_type: "ProtocolViolation".into(),
            message: m,
            log_tail: String::new(),
        },
        HarnessError::Timeout(d) => PlayFailure {
            kind: FailureKind::Timeout,
            error_type: "Timeout".into(),
            message: format!("no answer within {d:?} during {during}"),
            log_tail: String::new(),
        },
        HarnessError::Spawn(m) => PlayFailure {
            kind: FailureKind::HarnessCrash,
            error_type: "SpawnError".into(),
            message: m,
            log_tail: String::new(),
        },
    }
}

fn value_nonfinite(v: &Value) -> bool {
    match v {
        Value::String(s) => matches!(s.as_str(), "nan" | "inf" | "-inf" | "NaN" | "Infinity" | "-Infinity"),
        Value::Array(a) => a.iter().any(value_nonfinite),
        Value::Object(m) => {
            m.get("nonfinite").and_then(Value::as_bool).unwrap_or(false) || m.values().any(value_nonfinite)
        }
        _ => false,
    }
}

fn sample_action(space: &ActionSpace, rng: &mut ChaCha8Rng) -> Action {
    match space {
        ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
        ActionSpace::Box { low, high, .. } => Action::Continuous(
            low.iter()
                .zip(high)
                .map(|(l, h)| if l < h { rng.random_range(*l..=*h) } else { *l })
                .collect(),
        ),
    }
}

/// Drives one session. Never returns an error: harness failures end the
/// session and are recorded in `failure`.
pub fn play_env(
    session: &mut dyn HarnessSession,
    representation: Representation,
    cfg: &PlayConfig,
    reference: Option<&mut dyn WorldModel>,
) -> InteractionLog {
    match representation {
        Representation::TextGame => play_game(session, cfg),
        _ => play_code_env(session, cfg, reference),
    }
}

fn play_code_env(
    session: &mut dyn HarnessSession,
    cfg: &PlayConfig,
    mut reference: Option<&mut dyn WorldModel>,
) -> InteractionLog {
    let mut log = InteractionLog::new(Representation::CodeEnv);
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let space: Option<EnvSpace> = match session.request(HarnessOp::Spaces) {
        Ok(v) => {
            log.spaces = Some(v.clone());
            serde_json::from_value(v).ok()
        }
        Err(HarnessError::Remote(_)) => None,
        Err(e) => {
            log.failure = Some(failure_from(e, "spaces"));
            return log;
        }
    };
    let space = space.or_else(|| reference.as_ref().map(|r| r.space()));

    let mut episode = 0u64;
    let mut obs = match session.request(HarnessOp::Reset { seed: Some(cfg.seed) }) {
        Ok(v) => {
            log.nonfinite |= value_nonfinite(&v);
            let o = v.get("observation").cloned().unwrap_or(Value::Null);
            log.reset_observation = Some(o.clone());
            wire_to_array(&o)
        }
        Err(e) => {
            log.failure = Some(failure_from(e, "reset"));
            return log;
        }
    };

    for index in 0..cfg.budget {
        if started.elapsed() > cfg.session_timeout {
            log.failure = Some(failure_from(HarnessError::Timeout(cfg.session_timeout), "session"));
            break;
        }
        let action = match cfg.probes.get(index) {
            Some(v) => v.clone(),
            None => match &space {
                Some(s) => action_to_wire(&sample_action(&s.action_space, &mut rng)),
                None => Value::from(0),
            },
        };
        let mut record = PlayRecord {
            index,
            action: action.clone(),
            observation: None,
            reward: None,
            done: None,
            error: None,
            reference: None,
        };
        match session.request(HarnessOp::Step { action: action.clone() }) {
            Ok(v) => {
                log.nonfinite |= value_nonfinite(&v);
                let next = v.get("observation").and_then(wire_to_array);
                let reward = v.get("reward").and_then(wire_to_num);
                let done = v.get("done").and_then(Value::as_bool);
                if let (Some(r), Some(prev), Some(next), Some(reward), Some(done)) =
                    (reference.as_deref_mut(), obs.as_ref(), next.as_ref(), reward, done)
                {
                    if let Some(check) = compare_with_reference(r, prev, &action, next, reward, done, cfg.tolerance) {
                        log.reference_checked += 1;
                        if !check.matches {
                            log.mismatches += 1;
                        }
                        record.reference = Some(check);
                    }
                }
                record.observation = v.get("observation").cloned();
                record.reward = v.get("reward").cloned();
                record.done = done;
                log.steps.push(record);
                if next.is_none() || reward.is_none() || done.is_none() {
                    log.failure = Some(failure_from(
                        HarnessError::Protocol("step result must contain observation, reward and done".into()),
                        "step",
                    ));
                    break;
                }
                obs = next;
                if done == Some(true) {
                    episode += 1;
                    match session.request(HarnessOp::Reset { seed: Some(cfg.seed + episode) }) {
                        Ok(v) => obs = v.get("observation").and_then(wire_to_array),
                        Err(e) => {
                            log.failure = Some(failure_from(e, "reset"));
                            break;
                        }
                    }
                }
            }
            Err(e) => {
                let f = failure_from(e, "step");
                record.error = Some(f.message.clone());
                log.steps.push(record);
                log.failure = Some(f);
                break;
            }
        }
    }
    log
}

fn compare_with_reference(
    reference: &mut dyn WorldModel,
    prev: &[f64],
    action: &Value,
    next: &[f64],
    reward: f64,
    done: bool,
    tol: f64,
) -> Option<ReferenceCheck> {
    let a = crate::tools::harness::wire_to_action(action)?;
    reference.set_state(prev).ok()?;
    let exp = reference.step(&a).ok()?;
    let mut max_abs = (exp.reward - reward).abs();
    let mut numeric_ok = within(exp.reward, reward, tol);
    if exp.observation.len() != next.len() {
        numeric_ok = false;
        max_abs = f64::INFINITY;
    } else {
        for (e, g) in exp.observation.iter().zip(next) {
            max_abs = max_abs.max((e - g).abs());
            numeric_ok &= within(*e, *g, tol);
        }
    }
    Some(ReferenceCheck {
        matches: numeric_ok && exp.done == done,
        expected_observation: exp.observation,
        expected_reward: exp.reward,
        expected_done: exp.done,
        max_abs_error: if max_abs.is_nan() { f64::INFINITY } else { max_abs },
    })
}

/// Absolute or relative agreement within `tol`; non-finite never matches.
pub fn within(expected: f64, got: f64, tol: f64) -> bool {
    if !expected.is_finite() || !got.is_finite() {
        return false;
    }
    let diff = (expected - got).abs();
    diff <= tol || diff <= tol * expected.abs().max(got.abs())
}

fn play_game(session: &mut dyn HarnessSession, cfg: &PlayConfig) -> InteractionLog {
    let mut log = InteractionLog::new(Representation::TextGame);
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match session.request(HarnessOp::GameInit) {
        Ok(v) => log.reset_observation = v.get("observation").cloned(),
        Err(e) => {
            log.failure = Some(failure_from(e, "game_init"));
            return log;
        }
    }
    for index in 0..cfg.budget {
        if started.elapsed() > cfg.session_timeout {
            log.failure = Some(failure_from(HarnessError::Timeout(cfg.session_timeout), "session"));
            break;
        }
        let actions: Vec<String> = match session.request(HarnessOp::GameActions) {
            Ok(v) => serde_json::from_value(v.get("actions").cloned().unwrap_or(Value::Null)).unwrap_or_default(),
            Err(e) => {
                log.failure = Some(failure_from(e, "game_actions"));
                break;
            }
        };
        let action = match cfg.probes.get(index).and_then(Value::as_str) {
            Some(a) => a.to_string(),
            None if actions.is_empty() => break,
            None => actions[rng.random_range(0..actions.len())].clone(),
        };
        let mut record = PlayRecord {
            index,
            action: Value::from(action.clone()),
            observation: None,
            reward: None,
            done: None,
            error: None,
            reference: None,
        };
        match session.request(HarnessOp::GameStep { action }) {
            Ok(v) => {
                log.nonfinite |= value_nonfinite(&v);
                record.observation = v.get("observation").cloned();
                record.reward = v.get("reward").cloned();
                record.done = v.get("done").and_then(Value::as_bool);
                let done = record.done == Some(true);
                log.steps.push(record);
                if done {
                    break;
                }
            }
            Err(e) => {
                let f = failure_from(e, "game_step");
                record.error = Some(f.message.clone());
                log.steps.push(record);
                log.failure = Some(f);
                break;
            }
        }
    }
    log
}
