use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use serde::Serialize;
use wmforge_core::config::RunConfig;
use wmforge_core::gateway::{load_script, HttpBackend};
use wmforge_core::pipeline::{run_batch, PipelineError};
use wmforge_core::Gateway;

use crate::{print_json, usage, EXIT_FAULT};

#[derive(Args)]
pub struct PipelineArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Task id to run, or `all`.
    #[arg(long, default_value = "all")]
    pub task: String,
    /// Override every task's turn budget.
    #[arg(long)]
    pub turns: Option<u32>,
    /// Override every task's research rounds.
    #[arg(long)]
    pub research_rounds: Option<u32>,
    /// Scripted gateway (JSON Lines) instead of the HTTP endpoint.
    #[arg(long)]
    pub mock_gateway: Option<PathBuf>,
    /// Run directory root; overrides `runs_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tasks run concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Serialize)]
struct RunSummary {
    task_id: String,
    converged: bool,
    turns: usize,
    verifier: u8,
    faults: Vec<String>,
}

pub fn build_gateway(cfg: &RunConfig, script: Option<&std::path::Path>) -> anyhow::Result<Gateway> {
    let gw = match script {
        Some(p) => Gateway::scripted(load_script(p).map_err(usage)?),
        None => Gateway::new(Arc::new(HttpBackend::from_env().map_err(usage)?)),
    };
    let gw = gw.with_clock(cfg.clock());
    Ok(match cfg.token_cap {
        Some(cap) => gw.with_token_cap(cap),
        None => gw,
    })
}

pub fn run(args: PipelineArgs) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(&args.config).map_err(usage)?;
    if let Some(out) = args.out {
        cfg.runs_dir = out;
    }
    if args.parallel == 0 {
        return Err(usage("--parallel must be at least 1"));
    }
    let mut tasks = cfg.all_tasks().map_err(usage)?;
    if args.task != "all" {
        tasks.retain(|t| t.task_id == args.task);
    }
    if tasks.is_empty() {
        return Err(usage(format!("no task matches {:?}", args.task)));
    }
    for t in &mut tasks {
        if let Some(n) = args.turns {
            if n == 0 {
                return Err(usage("--turns must be at least 1"));
            }
            t.turn_budget = n;
        }
        if let Some(n) = args.research_rounds {
            t.research_rounds = n;
        }
    }
    let gateway = build_gateway(&cfg, args.mock_gateway.as_deref())?;
    let pcfg = cfg.pipeline_config().map_err(usage)?;

    let mut summaries = Vec::new();
    let mut code = 0;
    for (task, result) in tasks.iter().zip(run_batch(&tasks, &gateway, &pcfg, args.parallel)) {
        match result {
            Ok(rec) => {
                if !rec.faults.is_empty() {
                    code = EXIT_FAULT;
                }
                summaries.push(RunSummary {
                    task_id: rec.task_id,
                    converged: rec.converged,
                    turns: rec.turns.len(),
                    verifier: rec.trajectory.verifier,
                    faults: rec.faults,
                });
            }
            Err(PipelineError::InvalidTask(v)) => return Err(usage(format!("task {}: {}", task.task_id, v.join("; ")))),
            Err(e) => {
                code = EXIT_FAULT;
                summaries.push(RunSummary {
                    task_id: task.task_id.clone(),
                    converged: false,
                    turns: 0,
                    verifier: 0,
                    faults: vec![e.to_string()],
                });
            }
        }
    }
    print_json(&summaries)?;
    Ok(code)
}
