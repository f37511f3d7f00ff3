use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmforge_core::cwm::*;

/// Moves every reported next state off the grid; reward and done stay
/// correct.
struct WrongState(CliffWalking);

impl WorldModel for WrongState {
    fn space(&self) -> EnvSpace {
        self.0.space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.0.reset(seed)
    }
    fn set_state(&mut self, s: &[f64]) -> Result<(), EnvError> {
        self.0.set_state(s)
    }
    fn step(&mut self, a: &Action) -> Result<StepOutcome, EnvError> {
        let mut o = self.0.step(a)?;
        o.observation[0] += 100.0;
        Ok(o)
    }
}

/// Flips `done` on one specific (state, action) pair.
struct WrongDoneAt(CliffWalking, usize, usize);

impl WorldModel for WrongDoneAt {
    fn space(&self) -> EnvSpace {
        self.0.space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.0.reset(seed)
    }
    fn set_state(&mut self, s: &[f64]) -> Result<(), EnvError> {
        self.0.set_state(s)
    }
    fn step(&mut self, a: &Action) -> Result<StepOutcome, EnvError> {
        let s = self.0.state();
        let mut o = self.0.step(a)?;
        if s == self.1 && *a == Action::Discrete(self.2) {
            o.done = !o.done;
        }
        Ok(o)
    }
}

#[test]
fn accuracy_self_consistency_and_weights() {
    for seed in 0..5 {
        let data = generate_transitions(&mut CliffWalking::new(), 200, 50, seed).unwrap();
        assert_eq!(data.len(), 200);
        let rep = prediction_accuracy(&mut CliffWalking::new(), &data, STATE_TOLERANCE).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        let rep = prediction_accuracy(&mut WrongState(CliffWalking::new()), &data, STATE_TOLERANCE).unwrap();
        assert_eq!(rep.state_matches, 0);
        assert!((rep.accuracy - 2.0 / 3.0).abs() < 1e-12, "{rep:?}");
    }
}

#[test]
fn accuracy_one_wrong_termination_in_four() {
    let data: Vec<Transition> = [(36, 0), (24, 1), (46, 1), (25, 1)]
        .iter()
        .map(|&(s, a)| {
            let (n, r, d) = CliffWalking::transition(s, a);
            Transition {
                s: vec![s as f64],
                a: Action::Discrete(a),
                r,
                s_next: vec![n as f64],
                done: d,
            }
        })
        .collect();
    let mut m = WrongDoneAt(CliffWalking::new(), 46, 1);
    let rep = prediction_accuracy(&mut m, &data, STATE_TOLERANCE).unwrap();
    assert!((rep.accuracy - 11.0 / 12.0).abs() < 1e-12);
    assert_eq!(rep.done_matches, 3);
}

#[test]
fn accuracy_counts_model_errors_as_zero() {
    struct Raises;
    impl WorldModel for Raises {
        fn space(&self) -> EnvSpace {
            CliffWalking::new().space()
        }
        fn reset(&mut self, _: u64) -> Result<Vec<f64>, EnvError> {
            Ok(vec![36.0])
        }
        fn set_state(&mut self, _: &[f64]) -> Result<(), EnvError> {
            Ok(())
        }
        fn step(&mut self, _: &Action) -> Result<StepOutcome, EnvError> {
            Err(EnvError::Raised {
                kind: "ValueError".into(),
                message: "boom".into(),
            })
        }
    }
    let data = generate_transitions(&mut CliffWalking::new(), 10, 10, 1).unwrap();
    let rep = prediction_accuracy(&mut Raises, &data, STATE_TOLERANCE).unwrap();
    assert_eq!((rep.accuracy, rep.failures), (0.0, 10));
    assert!(prediction_accuracy(&mut Raises, &[], STATE_TOLERANCE).is_err());
}

#[test]
fn transitions_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let data = generate_transitions(&mut CliffWalking::new(), 25, 10, 3).unwrap();
    save_transitions(&p, &data).unwrap();
    assert_eq!(load_transitions(&p).unwrap(), data);
    std::fs::write(&p, "{\"s\": [1]}\n").unwrap();
    assert!(matches!(load_transitions(&p), Err(CwmError::Dataset { line: 1, .. })));
}

/// Constant reward -1, never terminates.
struct Treadmill;

impl WorldModel for Treadmill {
    fn space(&self) -> EnvSpace {
        EnvSpace {
            action_space: ActionSpace::Discrete { n: 3 },
            observation_shape: vec![1],
            discrete_observation: true,
            dt: None,
            frame_skip: None,
        }
    }
    fn reset(&mut self, _: u64) -> Result<Vec<f64>, EnvError> {
        Ok(vec![0.0])
    }
    fn set_state(&mut self, _: &[f64]) -> Result<(), EnvError> {
        Ok(())
    }
    fn step(&mut self, _: &Action) -> Result<StepOutcome, EnvError> {
        Ok(StepOutcome {
            observation: vec![0.0],
            reward: -1.0,
            done: false,
        })
    }
}

#[test]
fn rollout_return_basics() {
    let r = rollout_return(&mut Treadmill, &mut RandomPolicy, 3, 10, 0).unwrap();
    assert_eq!(r.returns, vec![-10.0; 3]);
    assert_eq!(r.mean, -10.0);
    let e = rollout_return(&mut Treadmill, &mut RandomPolicy, 0, 10, 0).unwrap_err();
    assert!(matches!(e, EnvError::Precondition(_)));
}

// Independent grid walk that only shares the seed recipe.
fn oracle_random_walk(seed: u64, episodes: usize, horizon: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..episodes {
        let ep = derive_seed(seed, k as u64);
        let (mut row, mut col) = (3i64, 0i64);
        let mut ret = 0.0;
        for t in 0..horizon {
            let a = ChaCha8Rng::seed_from_u64(derive_seed(ep, t as u64)).random_range(0..4usize);
            let (dr, dc) = [(-1, 0), (0, 1), (1, 0), (0, -1)][a];
            let (nr, nc) = ((row + dr).clamp(0, 3), (col + dc).clamp(0, 11));
            if nr == 3 && (1..=10).contains(&nc) {
                ret -= 100.0;
                (row, col) = (3, 0);
                continue;
            }
            ret -= 1.0;
            (row, col) = (nr, nc);
            if row == 3 && col == 11 {
                break;
            }
        }
        total += ret;
    }
    total / episodes as f64
}

#[test]
fn random_policy_matches_co_simulation() {
    for seed in [0, 7, 42] {
        let r = rollout_return(&mut CliffWalking::new(), &mut RandomPolicy, 10, 100, seed).unwrap();
        assert_eq!(r.mean, oracle_random_walk(seed, 10, 100));
    }
}

#[test]
fn normalized_return_of_the_true_model_is_one() {
    let cfg = PlannerConfig {
        episodes: 3,
        ..PlannerConfig::mcts()
    };
    let n = normalized_return(&mut CliffWalking::new(), &mut CliffWalking::new(), &cfg).unwrap();
    assert_eq!(n.r_model, n.r_true);
    assert_eq!(n.normalized_return, 1.0);
    assert_eq!(n.seeds.len(), 3);
}

#[test]
fn degenerate_baseline_is_reported() {
    let cfg = PlannerConfig {
        episodes: 2,
        budget: 10,
        max_episode_steps: 5,
        ..PlannerConfig::mcts()
    };
    let e = normalized_return(&mut Treadmill, &mut Treadmill, &cfg).unwrap_err();
    assert!(matches!(e, CwmError::DegenerateBaseline { r_true, r_rand } if r_true == -5.0 && r_rand == -5.0));
}

#[test]
fn planner_kind_must_fit_space() {
    let e = normalized_return(&mut CliffWalking::new(), &mut CliffWalking::new(), &PlannerConfig::cem());
    assert!(matches!(e, Err(CwmError::Env(EnvError::Precondition(_)))));
}

/// CliffWalking without termination, so every episode and every planning
/// simulation has the same length.
struct Endless(CliffWalking);

impl WorldModel for Endless {
    fn space(&self) -> EnvSpace {
        self.0.space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.0.reset(seed)
    }
    fn set_state(&mut self, s: &[f64]) -> Result<(), EnvError> {
        self.0.set_state(s)
    }
    fn step(&mut self, a: &Action) -> Result<StepOutcome, EnvError> {
        let mut o = self.0.step(a)?;
        o.done = false;
        Ok(o)
    }
}

#[test]
fn normalized_return_ignores_affine_reward_changes() {
    let cfg = PlannerConfig {
        episodes: 3,
        budget: 60,
        horizon: 20,
        max_episode_steps: 30,
        ..PlannerConfig::mcts()
    };
    let mk = |scale: f64, shift: f64| RewardAffine {
        inner: Endless(CliffWalking::new()),
        scale,
        shift,
    };
    let base = normalized_return(&mut mk(1.0, 0.0), &mut mk(1.0, 0.0), &cfg).unwrap();
    for (scale, shift) in [(1.0, 5.0), (1.0, -3.0), (2.0, 0.0), (4.0, 1.0)] {
        let n = normalized_return(&mut mk(scale, shift), &mut mk(scale, shift), &cfg).unwrap();
        assert!((n.normalized_return - base.normalized_return).abs() < 1e-9, "{scale} {shift}: {n:?}");
        assert!((n.r_rand - (scale * base.r_rand + shift * 30.0)).abs() < 1e-9);
    }

    // A model that is wrong everywhere gives a ratio away from 1; it must
    // still be unchanged by the same affine map.
    let garbage = || {
        let mut g = RandomModel::new(CliffWalking::new().space(), vec![0.0], vec![47.0], (-100.0, 0.0), 9);
        g.done_probability = 0.0;
        g
    };
    let base = normalized_return(&mut garbage(), &mut mk(1.0, 0.0), &cfg).unwrap();
    assert!(base.normalized_return < 0.9, "{base:?}");
    for (scale, shift) in [(1.0, 7.0), (2.0, -1.0)] {
        let mut g = RewardAffine {
            inner: garbage(),
            scale,
            shift,
        };
        let n = normalized_return(&mut g, &mut mk(scale, shift), &cfg).unwrap();
        assert!((n.normalized_return - base.normalized_return).abs() < 1e-9, "{n:?} vs {base:?}");
    }
}

/// Two arms: arm 0 pays `low`, arm 1 pays `high`; both end the episode.
struct Bandit {
    low: f64,
    high: f64,
}

impl WorldModel for Bandit {
    fn space(&self) -> EnvSpace {
        EnvSpace {
            action_space: ActionSpace::Discrete { n: 2 },
            observation_shape: vec![1],
            discrete_observation: true,
            dt: None,
            frame_skip: None,
        }
    }
    fn reset(&mut self, _: u64) -> Result<Vec<f64>, EnvError> {
        Ok(vec![0.0])
    }
    fn set_state(&mut self, _: &[f64]) -> Result<(), EnvError> {
        Ok(())
    }
    fn step(&mut self, a: &Action) -> Result<StepOutcome, EnvError> {
        let reward = if *a == Action::Discrete(1) { self.high } else { self.low };
        Ok(StepOutcome {
            observation: vec![1.0],
            reward,
            done: true,
        })
    }
}

#[test]
fn mcts_bandit_and_scale_invariance() {
    let cfg = PlannerConfig {
        budget: 100,
        ..PlannerConfig::mcts()
    };
    for k in [1.0, 0.5, 3.0, 1000.0] {
        let a = mcts_plan(&mut Bandit { low: 0.0, high: k }, &[0.0], &cfg).unwrap();
        assert_eq!(a, Action::Discrete(1), "scale {k}");
    }
    let a = mcts_plan(&mut Bandit { low: 1.0, high: 0.0 }, &[0.0], &cfg).unwrap();
    assert_eq!(a, Action::Discrete(0));
}

#[test]
fn mcts_small_budgets_and_single_action() {
    let cfg = PlannerConfig {
        budget: 1,
        ..PlannerConfig::mcts()
    };
    let a = mcts_plan(&mut CliffWalking::new(), &[36.0], &cfg).unwrap();
    assert!(matches!(a, Action::Discrete(i) if i < 4));

    struct One;
    impl WorldModel for One {
        fn space(&self) -> EnvSpace {
            EnvSpace {
                action_space: ActionSpace::Discrete { n: 1 },
                observation_shape: vec![],
                discrete_observation: true,
                dt: None,
                frame_skip: None,
            }
        }
        fn reset(&mut self, _: u64) -> Result<Vec<f64>, EnvError> {
            Ok(vec![0.0])
        }
        fn set_state(&mut self, _: &[f64]) -> Result<(), EnvError> {
            Ok(())
        }
        fn step(&mut self, _: &Action) -> Result<StepOutcome, EnvError> {
            Err(EnvError::Harness("unreachable".into()))
        }
    }
    assert_eq!(mcts_plan(&mut One, &[0.0], &PlannerConfig::mcts()).unwrap(), Action::Discrete(0));
    assert!(mcts_plan(&mut Quadratic::new(0.3, -1.0, 1.0), &[0.0], &PlannerConfig::mcts()).is_err());
}

/// One-step model with reward -(a - opt)^2.
struct Quadratic {
    opt: f64,
    low: f64,
    high: f64,
}

impl Quadratic {
    fn new(opt: f64, low: f64, high: f64) -> Self {
        Quadratic { opt, low, high }
    }
}

impl WorldModel for Quadratic {
    fn space(&self) -> EnvSpace {
        EnvSpace {
            action_space: ActionSpace::Box {
                low: vec![self.low],
                high: vec![self.high],
                shape: vec![1],
            },
            observation_shape: vec![1],
            discrete_observation: false,
            dt: None,
            frame_skip: None,
        }
    }
    fn reset(&mut self, _: u64) -> Result<Vec<f64>, EnvError> {
        Ok(vec![0.0])
    }
    fn set_state(&mut self, _: &[f64]) -> Result<(), EnvError> {
        Ok(())
    }
    fn step(&mut self, a: &Action) -> Result<StepOutcome, EnvError> {
        let Action::Continuous(v) = a else {
            return Err(EnvError::InvalidAction("expected a vector".into()));
        };
        Ok(StepOutcome {
            observation: vec![0.0],
            reward: -(v[0] - self.opt).powi(2),
            done: true,
        })
    }
}

#[test]
fn cem_finds_interior_and_clipped_optima() {
    let cfg = PlannerConfig::cem();
    let a = cem_plan(&mut Quadratic::new(0.3, -1.0, 1.0), &[0.0], &cfg).unwrap();
    assert!((a[0] - 0.3).abs() < 0.05, "{a:?}");
    let a = cem_plan(&mut Quadratic::new(2.0, -1.0, 1.0), &[0.0], &cfg).unwrap();
    assert!((a[0] - 1.0).abs() < 1e-6, "{a:?}");
    let a = cem_plan_from(&mut Quadratic::new(0.3, -1.0, 1.0), &[0.0], &cfg, &[0.3], &[0.0]).unwrap();
    assert_eq!(a, vec![0.3]);
    assert!(cem_plan(&mut CliffWalking::new(), &[36.0], &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cem_stays_in_bounds(low in -5.0f64..5.0, width in 0.0f64..4.0, opt in -20.0f64..20.0, seed in any::<u64>()) {
        let cfg = PlannerConfig { budget: 3, population: 16, horizon: 2, seed, ..PlannerConfig::cem() };
        let high = low + width;
        let a = cem_plan(&mut Quadratic::new(opt, low, high), &[0.0], &cfg).unwrap();
        prop_assert!(a[0] >= low && a[0] <= high, "{} not in [{low}, {high}]", a[0]);
    }
}

#[test]
fn planner_config_validation() {
    let mut c = PlannerConfig::cem();
    c.elite_fraction = 0.0;
    assert!(c.validate().is_err());
    c.elite_fraction = 1.0;
    assert!(c.validate().is_ok());
    c.horizon = 0;
    assert!(c.validate().is_err());
    let json = serde_json::to_value(PlannerConfig::mcts()).unwrap();
    assert_eq!(json["kind"], "mcts");
    let back: PlannerConfig = serde_json::from_value(serde_json::json!({"kind": "cem", "budget": 4})).unwrap();
    assert_eq!((back.kind, back.budget, back.horizon), (PlannerKind::Cem, 4, 100));
}
