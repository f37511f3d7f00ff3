//! Environment interface shared by native reference envs, harness-backed
//! generated models and planners.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionSpace {
    Discrete { n: usize },
    Box { low: Vec<f64>, high: Vec<f64>, shape: Vec<usize> },
}

impl ActionSpace {
    pub fn is_valid(&self) -> bool {
        match self {
            ActionSpace::Discrete { n } => *n >= 1,
            ActionSpace::Box { low, high, shape } => {
                low.len() == high.len()
                    && shape.iter().product::<usize>() == low.len()
                    && low.iter().zip(high).all(|(l, h)| l <= h)
            }
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        match (self, a) {
            (ActionSpace::Discrete { n }, Action::Discrete(i)) => i < n,
            (ActionSpace::Box { low, high, .. }, Action::Continuous(v)) => {
                v.len() == low.len() && v.iter().zip(low.iter().zip(high)).all(|(x, (l, h))| x >= l && x <= h)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EnvSpace {
    pub action_space: ActionSpace,
    pub observation_shape: Vec<usize>,
    /// Observations are integer-valued (compared exactly).
    #[serde(default)]
    pub discrete_observation: bool,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub frame_skip: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown environment: {0}")]
    UnknownEnv(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("{kind}: {message}")]
    Raised { kind: String, message: String },
    #[error("harness failure: {0}")]
    Harness(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// A steppable environment with externally settable state.
pub trait WorldModel {
    fn space(&self) -> EnvSpace;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;
}

impl<T: WorldModel + ?Sized> WorldModel for Box<T> {
    fn space(&self) -> EnvSpace {
        (**self).space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        (**self).reset(seed)
    }
    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError> {
        (**self).set_state(state)
    }
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        (**self).step(action)
    }
}

pub const CLIFF_ROWS: usize = 4;
pub const CLIFF_COLS: usize = 12;
pub const CLIFF_START: usize = 36;
pub const CLIFF_GOAL: usize = 47;

/// 4x12 cliff grid. Actions: 0 up, 1 right, 2 down, 3 left. Each move costs
/// -1; stepping into the cliff costs -100 and returns to the start without
/// ending the episode; only the goal ends it.
#[derive(Debug, Clone)]
pub struct CliffWalking {
    state: usize,
}

impl Default for CliffWalking {
    fn default() -> Self {
        CliffWalking { state: CLIFF_START }
    }
}

impl CliffWalking {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn is_cliff(s: usize) -> bool {
        (37..=46).contains(&s)
    }

    /// Pure transition function.
    pub fn transition(s: usize, a: usize) -> (usize, f64, bool) {
        let (r, c) = ((s / CLIFF_COLS) as i64, (s % CLIFF_COLS) as i64);
        let (dr, dc) = match a {
            0 => (-1, 0),
            1 => (0, 1),
            2 => (1, 0),
            _ => (0, -1),
        };
        let nr = (r + dr).clamp(0, CLIFF_ROWS as i64 - 1);
        let nc = (c + dc).clamp(0, CLIFF_COLS as i64 - 1);
        let next = (nr as usize) * CLIFF_COLS + nc as usize;
        if Self::is_cliff(next) {
            (CLIFF_START, -100.0, false)
        } else {
            (next, -1.0, next == CLIFF_GOAL)
        }
    }
}

impl WorldModel for CliffWalking {
    fn space(&self) -> EnvSpace {
        EnvSpace {
            action_space: ActionSpace::Discrete { n: 4 },
            observation_shape: vec![],
            discrete_observation: true,
            dt: None,
            frame_skip: None,
        }
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>, EnvError> {
        self.state = CLIFF_START;
        Ok(vec![CLIFF_START as f64])
    }

    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError> {
        match state {
            [s] if s.fract() == 0.0 && *s >= 0.0 && *s < (CLIFF_ROWS * CLIFF_COLS) as f64 => {
                self.state = *s as usize;
                Ok(())
            }
            _ => Err(EnvError::InvalidState(format!(
                "expected a single cell index in [0, 48), got {state:?}"
            ))),
        }
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let a = match action {
            Action::Discrete(a) if *a < 4 => *a,
            other => return Err(EnvError::InvalidAction(format!("{other:?}"))),
        };
        let (next, reward, done) = Self::transition(self.state, a);
        self.state = next;
        Ok(StepOutcome {
            observation: vec![next as f64],
            reward,
            done,
        })
    }
}

pub const REFERENCE_ENVS: &[&str] = &["CliffWalking"];

pub fn reference_env(name: &str) -> Result<Box<dyn WorldModel + Send>, EnvError> {
    match name {
        "CliffWalking" | "CliffWalking-v0" | "CliffWalking-v1" => Ok(Box::new(CliffWalking::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// Wraps an environment and maps every reward `r` to `scale * r + shift`.
pub struct RewardAffine<E> {
    pub inner: E,
    pub scale: f64,
    pub shift: f64,
}

impl<E: WorldModel> WorldModel for RewardAffine<E> {
    fn space(&self) -> EnvSpace {
        self.inner.space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.inner.reset(seed)
    }
    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError> {
        self.inner.set_state(state)
    }
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let mut o = self.inner.step(action)?;
        o.reward = self.scale * o.reward + self.shift;
        Ok(o)
    }
}
