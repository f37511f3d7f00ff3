use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use wmforge_core::config::RunConfig;
use wmforge_core::cwm::{
    generate_transitions, load_transitions, normalized_return, prediction_accuracy, reference_env, RandomModel,
    Transition, WorldModel, STATE_TOLERANCE,
};
use wmforge_core::pddl::{component_f1, parse_domain, similarity, ComponentF1};
use wmforge_core::textgame::{evaluate_game, fixture_game, TextGame};
use wmforge_core::tools::{HarnessEnv, HarnessGame};

use crate::pipeline::build_gateway;
use crate::{emit_json, usage};

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Executability, similarity and component F1 of generated domains.
    Pddl {
        /// Pairs of files: GENERATED GOLD [GENERATED GOLD ...].
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction accuracy and normalized return of code world models.
    Cwm(CwmArgs),
    /// Validity, compliance, alignment and winnability of text games.
    Textgame(GameArgs),
}

#[derive(Args)]
pub struct CwmArgs {
    /// Reference environment name.
    #[arg(long, default_value = "CliffWalking")]
    pub env: String,
    /// `true_env`, `random`, or a Python artifact served by the configured harness.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Transition dataset (JSON Lines); sampled from the reference when absent.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GameArgs {
    /// Built-in game name or a Python game served by the configured harness.
    #[arg(long = "game", required = true)]
    pub games: Vec<String>,
    /// File holding the game's natural-language specification.
    #[arg(long)]
    pub spec: PathBuf,
    /// Game source shown to the compliance judge; defaults to the game file.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Scripted judge; the HTTP endpoint is used when absent.
    #[arg(long)]
    pub judge_script: Option<PathBuf>,
    /// Scripted player; the HTTP endpoint is used when absent.
    #[arg(long)]
    pub agent_script: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalOutput {
    instances: Vec<Value>,
    aggregate: BTreeMap<String, f64>,
    failed: usize,
}

/// Means of every numeric field over instances without an `error`.
fn aggregate(instances: Vec<Value>) -> EvalOutput {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut failed = 0;
    for inst in &instances {
        if inst.get("error").is_some() {
            failed += 1;
            continue;
        }
        for (k, v) in inst.as_object().into_iter().flatten() {
            if let Some(x) = v.as_f64() {
                let e = sums.entry(k.clone()).or_default();
                e.0 += x;
                e.1 += 1;
            }
        }
    }
    EvalOutput {
        instances,
        aggregate: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        failed,
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

pub fn run(cmd: EvalCommand) -> anyhow::Result<u8> {
    match cmd {
        EvalCommand::Pddl { files, out } => {
            if files.len() % 2 != 0 {
                return Err(usage("pddl expects GENERATED GOLD pairs"));
            }
            let mut instances = Vec::new();
            for pair in files.chunks(2) {
                instances.push(pddl_instance(&pair[0], &pair[1])?);
            }
            emit_json(&aggregate(instances), out.as_deref())?;
            Ok(0)
        }
        EvalCommand::Cwm(args) => eval_cwm(args),
        EvalCommand::Textgame(args) => eval_games(args),
    }
}

fn pddl_instance(gen_path: &Path, gold_path: &Path) -> anyhow::Result<Value> {
    let gen = read(gen_path)?;
    let gold = read(gold_path)?;
    let mut rec = Map::new();
    rec.insert("instance".into(), json!(gen_path.display().to_string()));
    rec.insert("gold".into(), json!(gold_path.display().to_string()));
    let gold_ast = match parse_domain(&gold) {
        Ok(a) => a,
        Err(e) => {
            rec.insert("error".into(), json!(format!("gold domain does not parse: {e}")));
            return Ok(Value::Object(rec));
        }
    };
    rec.insert("similarity".into(), json!(similarity(&gen, &gold)));
    let f1 = match parse_domain(&gen) {
        Ok(ast) => {
            rec.insert("executability".into(), json!(1.0));
            component_f1(&ast, &gold_ast)
        }
        Err(e) => {
            rec.insert("executability".into(), json!(0.0));
            rec.insert("error_category".into(), json!(e.category().as_str()));
            rec.insert("parse_error".into(), json!(e.to_string()));
            ComponentF1 {
                f1_pred: 0.0,
                f1_param: 0.0,
                f1_precond: 0.0,
                f1_eff: 0.0,
                f1_avg: 0.0,
            }
        }
    };
    if let Value::Object(m) = serde_json::to_value(f1)? {
        rec.extend(m);
    }
    Ok(Value::Object(rec))
}

fn open_model(name: &str, env: &str, cfg: &RunConfig, data: &[Transition]) -> anyhow::Result<Box<dyn WorldModel>> {
    match name {
        "true_env" => Ok(reference_env(env).map_err(usage)?),
        "random" => {
            let space = reference_env(env).map_err(usage)?.space();
            let dim = data.first().map_or(0, |t| t.s_next.len());
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            let (mut rlo, mut rhi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in data {
                for (i, x) in t.s.iter().chain(&t.s_next).enumerate() {
                    lo[i % dim] = lo[i % dim].min(*x);
                    hi[i % dim] = hi[i % dim].max(*x);
                }
                rlo = rlo.min(t.r);
                rhi = rhi.max(t.r);
            }
            Ok(Box::new(RandomModel::new(space, lo, hi, (rlo, rhi), 0)))
        }
        path => {
            let path = Path::new(path);
            let source = read(path)?;
            let connector = cfg
                .tool_config()
                .map_err(usage)?
                .harness
                .ok_or_else(|| usage("serving a model file needs `harness` in --config"))?;
            let session = connector.connect(path, &source)?;
            Ok(Box::new(HarnessEnv::open(session)?))
        }
    }
}

fn eval_cwm(args: CwmArgs) -> anyhow::Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let mut planner = cfg.planner.clone();
    if let Some(n) = args.episodes {
        planner.episodes = n;
    }
    if let Some(n) = args.budget {
        planner.budget = n;
    }
    if let Some(s) = args.seed {
        planner.seed = s;
    }
    planner.validate().map_err(usage)?;
    let data = match &args.transitions {
        Some(p) => load_transitions(p).map_err(usage)?,
        None => {
            let mut env = reference_env(&args.env).map_err(usage)?;
            generate_transitions(env.as_mut(), args.count, planner.max_episode_steps, planner.seed)?
        }
    };
    let mut instances = Vec::new();
    for name in &args.models {
        let mut rec = Map::new();
        rec.insert("instance".into(), json!(name));
        let result = open_model(name, &args.env, &cfg, &data).and_then(|mut model| {
            let acc = prediction_accuracy(model.as_mut(), &data, STATE_TOLERANCE)?;
            let mut true_env = reference_env(&args.env)?;
            let nr = normalized_return(model.as_mut(), true_env.as_mut(), &planner)?;
            Ok((acc, nr))
        });
        match result {
            Ok((acc, nr)) => {
                rec.insert("accuracy".into(), json!(acc.accuracy));
                rec.insert("transitions".into(), json!(acc.transitions));
                rec.insert("model_failures".into(), json!(acc.failures));
                rec.insert("normalized_return".into(), json!(nr.normalized_return));
                rec.insert("r_model".into(), json!(nr.r_model));
                rec.insert("r_true".into(), json!(nr.r_true));
                rec.insert("r_rand".into(), json!(nr.r_rand));
            }
            Err(e) if e.chain().any(|c| c.is::<crate::UsageError>()) => return Err(e),
            Err(e) => {
                rec.insert("error".into(), json!(format!("{e:#}")));
            }
        }
        instances.push(Value::Object(rec));
    }
    emit_json(&aggregate(instances), args.out.as_deref())?;
    Ok(0)
}

fn open_game(name: &str, cfg: &RunConfig) -> anyhow::Result<(Box<dyn TextGame>, Option<String>)> {
    if let Some(g) = fixture_game(name) {
        return Ok((g, None));
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(usage(format!("{name} is neither a built-in game nor a file")));
    }
    let source = read(path)?;
    let connector = cfg
        .tool_config()
        .map_err(usage)?
        .harness
        .ok_or_else(|| usage("serving a game file needs `harness` in --config"))?;
    let session = connector.connect(path, &source)?;
    Ok((Box::new(HarnessGame::new(session)), Some(source)))
}

fn eval_games(args: GameArgs) -> anyhow::Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let spec = read(&args.spec)?;
    let judge = build_gateway(&cfg, args.judge_script.as_deref())?;
    let agent = build_gateway(&cfg, args.agent_script.as_deref())?;
    let fixed_source = args.source.as_deref().map(read).transpose()?;
    let mut instances = Vec::new();
    for name in &args.games {
        let (mut game, file_source) = open_game(name, &cfg)?;
        let source = fixed_source
            .clone()
            .or(file_source)
            .unwrap_or_else(|| format!("# built-in game `{name}`; no source available\n"));
        let scores = evaluate_game(game.as_mut(), &source, &spec, &judge, &agent, &cfg.crawl);
        let mut rec = Map::new();
        rec.insert("instance".into(), json!(name));
        for (section, value) in [
            ("technical", serde_json::to_value(scores.technical)?),
            ("compliance", serde_json::to_value(scores.compliance)?),
        ] {
            for (k, v) in value.as_object().into_iter().flatten() {
                rec.insert(k.clone(), json!(v.as_f64().with_context(|| format!("{section}.{k}"))?));
            }
        }
        rec.insert("winnable".into(), json!(f64::from(scores.winnable)));
        rec.insert("alignment".into(), json!(scores.alignment));
        instances.push(Value::Object(rec));
    }
    emit_json(&aggregate(instances), args.out.as_deref())?;
    Ok(0)
}
