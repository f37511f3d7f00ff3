use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use wmforge_core::data::{
    error_taxonomy, load_runs, ngram_contamination, pairwise_wtl_by_id, retrieved_text, usage_report, write_csv_to,
    CONTAMINATION_N,
};

use crate::{emit_json, usage};

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
pub enum ReportCommand {
    /// Win/tie/loss of system A against B on one metric.
    Wtl {
        #[arg(long)]
        metric: String,
        /// Output of `eval` for system A, or a JSON object of id -> score.
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tie_eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Failure categories per benchmark and turn.
    Errors {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shared n-grams between gold artifacts and what research retrieved.
    Contamination {
        #[arg(long)]
        runs: PathBuf,
        /// Gold text used for every run instead of each task's `gold_ref`.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, default_value_t = CONTAMINATION_N)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token and wall-time totals per stage.
    Usage {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Scores keyed by instance id. Errored or unscored instances count as 0.
fn load_scores(path: &Path, metric: &str) -> anyhow::Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    match v.get("instances").and_then(Value::as_array) {
        Some(instances) => {
            for inst in instances {
                let id = inst
                    .get("instance")
                    .and_then(Value::as_str)
                    .ok_or_else(|| usage(format!("{}: instance without an id", path.display())))?;
                let score = inst.get(metric).and_then(Value::as_f64).unwrap_or(0.0);
                if out.insert(id.to_string(), score).is_some() {
                    return Err(usage(format!("{}: duplicate instance {id}", path.display())));
                }
            }
        }
        None => {
            let obj = v.as_object().ok_or_else(|| usage(format!("{}: expected an object", path.display())))?;
            for (k, s) in obj {
                let s = s.as_f64().ok_or_else(|| usage(format!("{}: score for {k} is not a number", path.display())))?;
                out.insert(k.clone(), s);
            }
        }
    }
    Ok(out)
}

fn emit_table<T: Serialize>(rows: &[T], format: Format, out: Option<&Path>) -> anyhow::Result<()> {
    match format {
        Format::Json => emit_json(&rows, out),
        Format::Csv => {
            match out {
                Some(p) => write_csv_to(std::fs::File::create(p)?, rows)?,
                None => write_csv_to(std::io::stdout().lock(), rows)?,
            }
            Ok(())
        }
    }
}

fn runs_in(dir: &Path) -> anyhow::Result<Vec<(PathBuf, wmforge_core::pipeline::RunRecord)>> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let (runs, skipped) = load_runs(dir)?;
    for (p, why) in skipped {
        log::warn!("skipping {}: {why}", p.display());
    }
    Ok(runs
        .into_iter()
        .map(|r| (dir.join(&r.task_id), r))
        .collect())
}

#[derive(Serialize)]
struct ContaminationRow {
    task_id: String,
    contaminated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<String>,
}

#[derive(Serialize)]
struct ContaminationReport {
    n: usize,
    checked: usize,
    contaminated: usize,
    /// Runs without gold text.
    skipped: Vec<String>,
    instances: Vec<ContaminationRow>,
}

pub fn run(cmd: ReportCommand) -> anyhow::Result<u8> {
    match cmd {
        ReportCommand::Wtl {
            metric,
            a,
            b,
            tie_eps,
            out,
        } => {
            let wtl = pairwise_wtl_by_id(&metric, &load_scores(&a, &metric)?, &load_scores(&b, &metric)?, tie_eps)
                .map_err(usage)?;
            emit_json(&wtl, out.as_deref())?;
        }
        ReportCommand::Errors { runs, format, out } => {
            let records: Vec<_> = runs_in(&runs)?.into_iter().map(|(_, r)| r).collect();
            emit_table(&error_taxonomy(&records), format, out.as_deref())?;
        }
        ReportCommand::Usage { runs, format, out } => {
            let records: Vec<_> = runs_in(&runs)?.into_iter().map(|(_, r)| r).collect();
            emit_table(&usage_report(&records), format, out.as_deref())?;
        }
        ReportCommand::Contamination { runs, gold, n, out } => {
            let fixed = match &gold {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let mut report = ContaminationReport {
                n,
                checked: 0,
                contaminated: 0,
                skipped: Vec::new(),
                instances: Vec::new(),
            };
            for (dir, run) in runs_in(&runs)? {
                let gold_text = match (&fixed, &run.task.gold_ref) {
                    (Some(t), _) => t.clone(),
                    (None, Some(p)) => match std::fs::read_to_string(p) {
                        Ok(t) => t,
                        Err(_) => {
                            report.skipped.push(run.task_id);
                            continue;
                        }
                    },
                    (None, None) => {
                        report.skipped.push(run.task_id);
                        continue;
                    }
                };
                let c = ngram_contamination(&gold_text, &retrieved_text(&dir, &run), n).map_err(usage)?;
                report.checked += 1;
                report.contaminated += usize::from(c.contaminated);
                report.instances.push(ContaminationRow {
                    task_id: run.task_id,
                    contaminated: c.contaminated,
                    witness: c.witness,
                });
            }
            emit_json(&report, out.as_deref())?;
        }
    }
    Ok(0)
}
