//! Transition-prediction accuracy and planner-based normalized return.

use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::env::{Action, ActionSpace, EnvError, EnvSpace, StepOutcome, WorldModel};
use super::planner::{derive_seed, plan, sample_action, PlannerConfig, PlannerKind};

pub const STATE_TOLERANCE: f64 = 1e-3;
pub const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Error)]
pub enum CwmError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("degenerate baseline: oracle return {r_true} and random return {r_rand} coincide")]
    DegenerateBaseline { r_true: f64, r_rand: f64 },
    #[error("transition file line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub transitions: usize,
    pub state_matches: usize,
    pub reward_matches: usize,
    pub done_matches: usize,
    /// Transitions on which the model raised.
    pub failures: usize,
}

pub fn states_match(expected: &[f64], got: &[f64], discrete: bool, tol: f64) -> bool {
    expected.len() == got.len()
        && expected.iter().zip(got).all(|(e, g)| {
            if discrete {
                e == g
            } else {
                g.is_finite() && (e - g).abs() <= tol
            }
        })
}

/// Mean over transitions of one third each for next state, reward and done.
pub fn prediction_accuracy(
    model: &mut dyn WorldModel,
    data: &[Transition],
    tol: f64,
) -> Result<AccuracyReport, CwmError> {
    if data.is_empty() {
        return Err(EnvError::Precondition("empty transition dataset".into()).into());
    }
    if !(tol >= 0.0) {
        return Err(EnvError::Precondition(format!("tolerance must be non-negative, got {tol}")).into());
    }
    let discrete = model.space().discrete_observation;
    let mut rep = AccuracyReport {
        accuracy: 0.0,
        transitions: data.len(),
        state_matches: 0,
        reward_matches: 0,
        done_matches: 0,
        failures: 0,
    };
    let mut total = 0.0;
    for (i, t) in data.iter().enumerate() {
        let out = model.set_state(&t.s).and_then(|_| model.step(&t.a));
        let o = match out {
            Ok(o) => o,
            Err(e) => {
                warn!("transition {i}: model raised {e}");
                rep.failures += 1;
                continue;
            }
        };
        let s_ok = states_match(&t.s_next, &o.observation, discrete, tol);
        let r_ok = o.reward.is_finite() && (o.reward - t.r).abs() <= tol;
        let d_ok = o.done == t.done;
        rep.state_matches += usize::from(s_ok);
        rep.reward_matches += usize::from(r_ok);
        rep.done_matches += usize::from(d_ok);
        total += (f64::from(u8::from(s_ok)) + f64::from(u8::from(r_ok)) + f64::from(u8::from(d_ok))) / 3.0;
    }
    rep.accuracy = total / data.len() as f64;
    Ok(rep)
}

pub fn load_transitions(path: &Path) -> Result<Vec<Transition>, CwmError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| CwmError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_transitions(path: &Path, data: &[Transition]) -> Result<(), CwmError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in data {
        serde_json::to_writer(&mut f, t).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Uniform-random rollouts in `env`, resetting on termination or after
/// `max_episode_steps`. Episode `k` resets with `derive_seed(seed, k)`.
pub fn generate_transitions(
    env: &mut dyn WorldModel,
    count: usize,
    max_episode_steps: usize,
    seed: u64,
) -> Result<Vec<Transition>, EnvError> {
    let space = env.space().action_space;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut episode = 0u64;
    while out.len() < count {
        let mut s = env.reset(derive_seed(seed, episode))?;
        episode += 1;
        for _ in 0..max_episode_steps.max(1) {
            if out.len() == count {
                break;
            }
            let a = sample_action(&space, &mut rng);
            let o = env.step(&a)?;
            out.push(Transition {
                s: s.clone(),
                a,
                r: o.reward,
                s_next: o.observation.clone(),
                done: o.done,
            });
            if o.done {
                break;
            }
            s = o.observation;
        }
    }
    Ok(out)
}

/// Chooses an action for the current observation. `seed` is fresh per
/// decision.
pub trait Policy {
    fn act(&mut self, env: &mut dyn WorldModel, obs: &[f64], seed: u64) -> Result<Action, EnvError>;
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, env: &mut dyn WorldModel, _obs: &[f64], seed: u64) -> Result<Action, EnvError> {
        Ok(sample_action(&env.space().action_space, &mut ChaCha8Rng::seed_from_u64(seed)))
    }
}

/// Plans in a separate model.
pub struct ModelPlanner<'a> {
    pub model: &'a mut dyn WorldModel,
    pub cfg: PlannerConfig,
}

impl Policy for ModelPlanner<'_> {
    fn act(&mut self, _env: &mut dyn WorldModel, obs: &[f64], seed: u64) -> Result<Action, EnvError> {
        let cfg = PlannerConfig { seed, ..self.cfg.clone() };
        plan(self.model, obs, &cfg)
    }
}

/// Plans inside the environment being executed; its state is restored
/// before the chosen action is applied.
pub struct OraclePlanner {
    pub cfg: PlannerConfig,
}

impl Policy for OraclePlanner {
    fn act(&mut self, env: &mut dyn WorldModel, obs: &[f64], seed: u64) -> Result<Action, EnvError> {
        let cfg = PlannerConfig { seed, ..self.cfg.clone() };
        plan(env, obs, &cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub mean: f64,
    pub returns: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Episodes cut short by an environment error.
    pub aborted: Vec<bool>,
}

/// Mean undiscounted return over seeded episodes truncated at `horizon`.
pub fn rollout_return(
    env: &mut dyn WorldModel,
    policy: &mut dyn Policy,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<RolloutStats, EnvError> {
    if episodes == 0 {
        return Err(EnvError::Precondition("episodes must be positive".into()));
    }
    let mut stats = RolloutStats {
        mean: 0.0,
        returns: Vec::new(),
        seeds: Vec::new(),
        aborted: Vec::new(),
    };
    for k in 0..episodes {
        let ep_seed = derive_seed(seed, k as u64);
        let mut obs = env.reset(ep_seed)?;
        let mut total = 0.0;
        let mut aborted = false;
        for t in 0..horizon {
            let step = policy
                .act(env, &obs, derive_seed(ep_seed, t as u64))
                .and_then(|a| env.set_state(&obs).and_then(|_| env.step(&a)));
            match step {
                Ok(StepOutcome {
                    observation,
                    reward,
                    done,
                }) => {
                    total += reward;
                    obs = observation;
                    if done {
                        break;
                    }
                }
                Err(e) => {
                    warn!("episode {k} aborted at step {t}: {e}");
                    aborted = true;
                    break;
                }
            }
        }
        stats.returns.push(total);
        stats.seeds.push(ep_seed);
        stats.aborted.push(aborted);
    }
    stats.mean = stats.returns.iter().sum::<f64>() / episodes as f64;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NormalizedReturn {
    pub normalized_return: f64,
    pub r_model: f64,
    pub r_true: f64,
    pub r_rand: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

/// `(R_model - R_rand) / (R_true - R_rand)` where the model policy plans in
/// `model` and acts in `true_env`, the oracle plans in `true_env` itself,
/// and the random policy samples uniformly. All three share episode seeds.
pub fn normalized_return(
    model: &mut dyn WorldModel,
    true_env: &mut dyn WorldModel,
    cfg: &PlannerConfig,
) -> Result<NormalizedReturn, CwmError> {
    cfg.validate()?;
    let space = true_env.space().action_space;
    match (&space, cfg.kind) {
        (ActionSpace::Discrete { .. }, PlannerKind::Mcts) | (ActionSpace::Box { .. }, PlannerKind::Cem) => {}
        _ => {
            return Err(EnvError::Precondition(format!(
                "planner {:?} does not fit action space {space:?}",
                cfg.kind
            ))
            .into())
        }
    }
    if model.space().action_space != space {
        return Err(EnvError::Precondition("model and environment declare different action spaces".into()).into());
    }
    let (eps, h, seed) = (cfg.episodes, cfg.max_episode_steps, cfg.seed);
    let r_model = rollout_return(
        true_env,
        &mut ModelPlanner {
            model,
            cfg: cfg.clone(),
        },
        eps,
        h,
        seed,
    )?;
    let r_true = rollout_return(true_env, &mut OraclePlanner { cfg: cfg.clone() }, eps, h, seed)?;
    let r_rand = rollout_return(true_env, &mut RandomPolicy, eps, h, seed)?;
    let denom = r_true.mean - r_rand.mean;
    if denom.abs() < DEGENERATE_EPS {
        return Err(CwmError::DegenerateBaseline {
            r_true: r_true.mean,
            r_rand: r_rand.mean,
        });
    }
    Ok(NormalizedReturn {
        normalized_return: (r_model.mean - r_rand.mean) / denom,
        r_model: r_model.mean,
        r_true: r_true.mean,
        r_rand: r_rand.mean,
        episodes: eps,
        seeds: r_model.seeds,
    })
}

/// Model with uniformly random observations, rewards and terminations.
/// Shares the action space of the environment it imitates.
pub struct RandomModel {
    pub space: EnvSpace,
    /// Observations are drawn from `[obs_low, obs_high]` per dimension,
    /// rounded when the space is discrete.
    pub obs_low: Vec<f64>,
    pub obs_high: Vec<f64>,
    pub reward_range: (f64, f64),
    pub done_probability: f64,
    rng: ChaCha8Rng,
}

impl RandomModel {
    pub fn new(space: EnvSpace, obs_low: Vec<f64>, obs_high: Vec<f64>, reward_range: (f64, f64), seed: u64) -> Self {
        RandomModel {
            space,
            obs_low,
            obs_high,
            reward_range,
            done_probability: 0.05,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn draw(&mut self) -> Vec<f64> {
        let discrete = self.space.discrete_observation;
        self.obs_low
            .iter()
            .zip(&self.obs_high)
            .map(|(l, h)| {
                let x = if l < h { self.rng.random_range(*l..=*h) } else { *l };
                if discrete {
                    x.round()
                } else {
                    x
                }
            })
            .collect()
    }
}

impl WorldModel for RandomModel {
    fn space(&self) -> EnvSpace {
        self.space.clone()
    }
    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>, EnvError> {
        Ok(self.draw())
    }
    fn set_state(&mut self, _state: &[f64]) -> Result<(), EnvError> {
        Ok(())
    }
    fn step(&mut self, _action: &Action) -> Result<StepOutcome, EnvError> {
        let observation = self.draw();
        let (lo, hi) = self.reward_range;
        let reward = if lo < hi { self.rng.random_range(lo..=hi) } else { lo };
        let done = self.rng.random_bool(self.done_probability.clamp(0.0, 1.0));
        Ok(StepOutcome {
            observation,
            reward,
            done,
        })
    }
}
