mod eval;
mod pipeline;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FAULT: u8 = 3;

/// Bad input or configuration; maps to exit code 2. Everything else that
/// goes wrong is an infrastructure fault.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "wmforge", version, about = "Generate and evaluate world models with a multi-agent pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run research, development and testing for one or more tasks.
    Pipeline(pipeline::PipelineArgs),
    /// Score world models.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Write accepted runs as chat-format fine-tuning records.
    ExportSft {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analysis over finished runs or metric files.
    #[command(subcommand)]
    Report(report::ReportCommand),
    /// Write JSON Schemas for all records.
    Schema {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a built-in environment or game over the harness line protocol.
    #[command(hide = true)]
    HarnessNative {
        #[arg(long, conflicts_with = "game")]
        env: Option<String>,
        #[arg(long)]
        game: Option<String>,
        /// Artifact path appended by the connector; ignored.
        artifact: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_FAULT)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Pipeline(args) => pipeline::run(args),
        Command::Eval(cmd) => eval::run(cmd),
        Command::ExportSft { runs, out } => {
            let dirs = wmforge_core::data::find_run_dirs(&runs).map_err(usage)?;
            let summary = wmforge_core::data::export_sft(&dirs, &out)?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::Report(cmd) => report::run(cmd),
        Command::Schema { out } => {
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            for (name, schema) in wmforge_core::schema::all_schemas() {
                let path = out.join(format!("{name}.schema.json"));
                std::fs::write(&path, wmforge_core::schema::render(&schema)).with_context(|| path.display().to_string())?;
            }
            Ok(0)
        }
        Command::HarnessNative { env, game, .. } => serve_native(env, game),
    }
}

fn serve_native(env: Option<String>, game: Option<String>) -> anyhow::Result<u8> {
    use wmforge_core::tools::{NativeServer, NativeTarget};
    let target = match (env, game) {
        (Some(e), _) => NativeTarget::Env(wmforge_core::cwm::reference_env(&e).map_err(usage)?),
        (None, Some(g)) => NativeTarget::Game(
            wmforge_core::textgame::fixture_game(&g).ok_or_else(|| usage(format!("unknown game {g}")))?,
        ),
        (None, None) => return Err(usage("pass --env or --game")),
    };
    let stdin = std::io::stdin();
    NativeServer::new(target).serve_lines(stdin.lock(), std::io::stdout())?;
    Ok(0)
}

pub fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.to_string()))
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Writes pretty JSON to `out` when given, else to stdout.
pub fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let text = serde_json::to_string_pretty(value)? + "\n";
            std::fs::write(p, text).with_context(|| p.display().to_string())?;
            Ok(())
        }
        None => print_json(value),
    }
}
