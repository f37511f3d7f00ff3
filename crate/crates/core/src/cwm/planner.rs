//! MCTS for discrete action spaces, CEM for boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::env::{Action, ActionSpace, EnvError, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Mcts,
    Cem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    /// Simulations per decision (MCTS) or refit iterations (CEM).
    pub budget: usize,
    /// Lookahead depth measured from the decision state.
    pub horizon: usize,
    pub exploration: f64,
    pub population: usize,
    pub elite_fraction: f64,
    pub episodes: usize,
    /// Episode length cap when executing a policy.
    pub max_episode_steps: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::mcts()
    }
}

impl PlannerConfig {
    pub fn mcts() -> Self {
        PlannerConfig {
            kind: PlannerKind::Mcts,
            budget: 200,
            horizon: 100,
            exploration: std::f64::consts::SQRT_2,
            population: 64,
            elite_fraction: 0.1,
            episodes: 10,
            max_episode_steps: 100,
            seed: 0,
        }
    }

    pub fn cem() -> Self {
        PlannerConfig {
            kind: PlannerKind::Cem,
            budget: 8,
            horizon: 30,
            ..Self::mcts()
        }
    }

    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete { .. } => Self::mcts(),
            ActionSpace::Box { .. } => Self::cem(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Precondition(m.to_string()));
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return bad("elite_fraction must lie in (0, 1]");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if self.kind == PlannerKind::Cem && self.population == 0 {
            return bad("population must be at least 1");
        }
        Ok(())
    }
}

/// Mixes a base seed with an index so that episode and decision streams
/// are independent of each other.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_action(space: &ActionSpace, rng: &mut impl Rng) -> Action {
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

struct Node {
    state: Vec<f64>,
    done: bool,
    visits: u32,
    /// Sum of root-relative simulation returns through this node.
    value_sum: f64,
    /// Reward of the edge leading into this node.
    reward: f64,
    children: Vec<Option<usize>>,
}

impl Node {
    fn new(state: Vec<f64>, reward: f64, done: bool, n: usize) -> Self {
        Node {
            state,
            done,
            visits: 0,
            value_sum: 0.0,
            reward,
            children: vec![None; n],
        }
    }
}

/// UCT search from `state`. Q values are min-max normalised over the tree
/// before the exploration bonus is added, so the choice does not depend on
/// the reward scale. Returns the most visited root action (lowest index on
/// ties). Rollout randomness comes from `cfg.seed`; callers vary it per
/// decision.
pub fn mcts_plan(model: &mut dyn WorldModel, state: &[f64], cfg: &PlannerConfig) -> Result<Action, EnvError> {
    let n = match model.space().action_space {
        ActionSpace::Discrete { n } if n >= 1 => n,
        other => {
            return Err(EnvError::Precondition(format!(
                "MCTS needs a discrete action space, got {other:?}"
            )))
        }
    };
    cfg.validate()?;
    if n == 1 {
        return Ok(Action::Discrete(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nodes = vec![Node::new(state.to_vec(), 0.0, false, n)];
    let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);

    for _ in 0..cfg.budget {
        let mut path = vec![0usize];
        let mut cur = 0usize;
        let mut depth = 0usize;
        let mut tail = 0.0;
        // Selection.
        loop {
            let node = &nodes[cur];
            if node.done || depth >= cfg.horizon {
                break;
            }
            if let Some(a) = node.children.iter().position(Option::is_none) {
                // Expansion.
                let parent_state = node.state.clone();
                let child = match model.set_state(&parent_state).and_then(|_| model.step(&Action::Discrete(a))) {
                    Ok(o) if o.reward.is_finite() && o.observation.iter().all(|x| x.is_finite()) => {
                        Node::new(o.observation, o.reward, o.done, n)
                    }
                    _ => Node::new(parent_state, 0.0, true, n),
                };
                let done = child.done;
                nodes.push(child);
                let id = nodes.len() - 1;
                nodes[cur].children[a] = Some(id);
                path.push(id);
                depth += 1;
                if !done {
                    tail = rollout(model, n, cfg.horizon - depth, &mut rng);
                }
                break;
            }
            let parent_visits = f64::from(node.visits.max(1));
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (a, c) in node.children.iter().enumerate() {
                let c = &nodes[c.expect("all children expanded")];
                let q = c.value_sum / f64::from(c.visits.max(1));
                let norm = if q_max - q_min > 1e-12 { (q - q_min) / (q_max - q_min) } else { 0.0 };
                let score = norm + cfg.exploration * (parent_visits.ln() / f64::from(c.visits.max(1))).sqrt();
                if score > best_score {
                    best_score = score;
                    best = a;
                }
            }
            cur = nodes[cur].children[best].unwrap();
            path.push(cur);
            depth += 1;
        }
        // Backup: every node on the path is credited with the full return of
        // the simulation measured from the root. Siblings share their prefix,
        // so their ordering is unaffected, and all Q values live on one scale.
        let g: f64 = path.iter().skip(1).map(|&id| nodes[id].reward).sum::<f64>() + tail;
        for &id in &path {
            let node = &mut nodes[id];
            node.visits += 1;
            if id != 0 {
                node.value_sum += g;
                let q = node.value_sum / f64::from(node.visits);
                q_min = q_min.min(q);
                q_max = q_max.max(q);
            }
        }
    }

    let mut best = 0usize;
    let mut best_visits = 0u32;
    for (a, c) in nodes[0].children.iter().enumerate() {
        let v = c.map_or(0, |id| nodes[id].visits);
        if v > best_visits {
            best_visits = v;
            best = a;
        }
    }
    Ok(Action::Discrete(best))
}

/// Uniform-random continuation from the model's current state.
fn rollout(model: &mut dyn WorldModel, n: usize, steps: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..steps {
        match model.step(&Action::Discrete(rng.random_range(0..n))) {
            Ok(o) if o.reward.is_finite() => {
                total += o.reward;
                if o.done {
                    break;
                }
            }
            _ => break,
        }
    }
    total
}

fn box_bounds(model: &dyn WorldModel) -> Result<(Vec<f64>, Vec<f64>), EnvError> {
    match model.space().action_space {
        ActionSpace::Box { low, high, .. } => Ok((low, high)),
        other => Err(EnvError::Precondition(format!(
            "CEM needs a box action space, got {other:?}"
        ))),
    }
}

/// Cross-entropy search over open-loop action sequences, starting from the
/// box midpoint with half-width standard deviation.
pub fn cem_plan(model: &mut dyn WorldModel, state: &[f64], cfg: &PlannerConfig) -> Result<Vec<f64>, EnvError> {
    let (low, high) = box_bounds(model)?;
    let mean: Vec<f64> = low.iter().zip(&high).map(|(l, h)| (l + h) / 2.0).collect();
    let std: Vec<f64> = low.iter().zip(&high).map(|(l, h)| (h - l) / 2.0).collect();
    cem_plan_from(model, state, cfg, &mean, &std)
}

/// CEM with an explicit per-dimension initial mean and standard deviation
/// (repeated over the horizon).
pub fn cem_plan_from(
    model: &mut dyn WorldModel,
    state: &[f64],
    cfg: &PlannerConfig,
    init_mean: &[f64],
    init_std: &[f64],
) -> Result<Vec<f64>, EnvError> {
    let (low, high) = box_bounds(model)?;
    cfg.validate()?;
    let d = low.len();
    if init_mean.len() != d || init_std.len() != d {
        return Err(EnvError::Precondition(format!("initial mean/std must have {d} entries")));
    }
    let h = cfg.horizon;
    let clip = |i: usize, x: f64| x.clamp(low[i % d], high[i % d]);
    let mut mean: Vec<f64> = (0..h * d).map(|i| clip(i, init_mean[i % d])).collect();
    let mut std: Vec<f64> = (0..h * d).map(|i| init_std[i % d].max(0.0)).collect();
    let n_elite = ((cfg.population as f64 * cfg.elite_fraction).round() as usize).clamp(1, cfg.population);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for _ in 0..cfg.budget {
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.population {
            let seq: Vec<f64> = (0..h * d)
                .map(|i| {
                    let x = if std[i] > 0.0 {
                        Normal::new(mean[i], std[i]).map_or(mean[i], |n| n.sample(&mut rng))
                    } else {
                        mean[i]
                    };
                    clip(i, x)
                })
                .collect();
            let ret = sequence_return(model, state, &seq, d);
            scored.push((ret, seq));
        }
        // Stable sort keeps sampling order among equal returns.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let elites = &scored[..n_elite];
        for i in 0..h * d {
            let m = elites.iter().map(|(_, s)| s[i]).sum::<f64>() / n_elite as f64;
            let v = elites.iter().map(|(_, s)| (s[i] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[i] = m;
            std[i] = v.sqrt();
        }
    }
    Ok((0..d).map(|i| clip(i, mean[i])).collect())
}

/// Summed reward of an open-loop sequence; failures and non-finite rewards
/// end the sequence, and a sequence that cannot even start scores -inf.
fn sequence_return(model: &mut dyn WorldModel, state: &[f64], seq: &[f64], d: usize) -> f64 {
    if model.set_state(state).is_err() {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for a in seq.chunks(d) {
        match model.step(&Action::Continuous(a.to_vec())) {
            Ok(o) if o.reward.is_finite() => {
                total += o.reward;
                if o.done {
                    break;
                }
            }
            _ => break,
        }
    }
    total
}

/// Dispatches on the model's action space.
pub fn plan(model: &mut dyn WorldModel, state: &[f64], cfg: &PlannerConfig) -> Result<Action, EnvError> {
    match cfg.kind {
        PlannerKind::Mcts => mcts_plan(model, state, cfg),
        PlannerKind::Cem => cem_plan(model, state, cfg).map(Action::Continuous),
    }
}
