//! Subprocess execution with a wall-clock limit and bounded output capture.
//!
//! This is policy, not isolation: commands run as the current user in their
//! own process group. Network denial works by pointing the standard proxy
//! variables at a dead port, which stops well-behaved HTTP clients only.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::agent::ToolError;

/// Exit code reported when the process was killed at the timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;
pub const DEFAULT_TIMEOUT_SECONDS: f64 = 60.0;
pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NetworkPolicy {
    #[default]
    Denied,
    Allowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub wall_clock_timeout_seconds: f64,
    pub max_stdout_bytes: usize,
    pub working_dir: PathBuf,
    pub network: NetworkPolicy,
}

impl SandboxPolicy {
    pub fn new(working_dir: impl Into<PathBuf>) -> Self {
        SandboxPolicy {
            wall_clock_timeout_seconds: DEFAULT_TIMEOUT_SECONDS,
            max_stdout_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            working_dir: working_dir.into(),
            network: NetworkPolicy::Denied,
        }
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.wall_clock_timeout_seconds = seconds;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_code: i32,
    pub timed_out: bool,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub duration_seconds: f64,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    /// Observation text handed back to an agent.
    pub fn render(&self, duration_seconds: f64) -> String {
        let status = if self.timed_out {
            format!("TIMEOUT (exit {})", self.exit_code)
        } else {
            format!("exit_code {}", self.exit_code)
        };
        format!(
            "{status}\nduration_s {duration_seconds:.3}\n--- stdout ---\n{}\n--- stderr ---\n{}",
            self.stdout_tail, self.stderr_tail
        )
    }
}

/// Best-effort lexical check that a shell command does not name paths
/// outside the working directory.
pub fn check_command_paths(command: &str, working_dir: &Path) -> Result<(), ToolError> {
    const SYSTEM_PREFIXES: &[&str] = &["/usr/", "/bin/", "/sbin/", "/lib", "/opt/", "/dev/null", "/dev/zero", "/proc/self"];
    for raw in command.split(|c: char| c.is_whitespace() || matches!(c, ';' | '|' | '&' | '(' | ')' | '<' | '>' | '=' | ',')) {
        let tok = raw.trim_matches(|c| c == '"' || c == '\'' || c == '`');
        if tok.is_empty() {
            continue;
        }
        if tok.split('/').any(|seg| seg == "..") {
            return Err(ToolError::PathEscape(tok.to_string()));
        }
        if tok.starts_with('/') {
            let inside = Path::new(tok).starts_with(working_dir);
            let system = SYSTEM_PREFIXES.iter().any(|p| tok.starts_with(p));
            if !inside && !system {
                return Err(ToolError::PathEscape(tok.to_string()));
            }
        }
        if tok.starts_with('~') {
            return Err(ToolError::PathEscape(tok.to_string()));
        }
    }
    Ok(())
}

/// Runs `command` through `sh -c` inside the policy's working directory.
pub fn run_code(command: &str, policy: &SandboxPolicy) -> Result<ExecResult, ToolError> {
    run_program("sh", command, policy)
}

/// Like [`run_code`] but through `bash`.
pub fn run_bash(script: &str, policy: &SandboxPolicy) -> Result<ExecResult, ToolError> {
    run_program("bash", script, policy)
}

/// Runs a Python snippet with `python3 -c`.
pub fn run_python(code: &str, policy: &SandboxPolicy) -> Result<ExecResult, ToolError> {
    run_argv(&["python3", "-c", code], policy)
}

fn run_program(shell: &str, command: &str, policy: &SandboxPolicy) -> Result<ExecResult, ToolError> {
    check_command_paths(command, &policy.working_dir)?;
    run_argv(&[shell, "-c", command], policy)
}

fn run_argv(argv: &[&str], policy: &SandboxPolicy) -> Result<ExecResult, ToolError> {
    if !policy.working_dir.is_dir() {
        return Err(ToolError::Spawn(format!(
            "working directory {} does not exist",
            policy.working_dir.display()
        )));
    }
    let mut cmd = Command::new(argv[0]);
    cmd.args(&argv[1..])
        .current_dir(&policy.working_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .process_group(0);
    if policy.network == NetworkPolicy::Denied {
        for var in ["http_proxy", "https_proxy", "HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY", "all_proxy"] {
            cmd.env(var, "http://127.0.0.1:9");
        }
        cmd.env_remove("no_proxy").env_remove("NO_PROXY");
    }

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| ToolError::Spawn(e.to_string()))?;
    let pid = child.id() as i32;
    let cap = policy.max_stdout_bytes.max(1);
    let out = child.stdout.take().expect("piped stdout");
    let err = child.stderr.take().expect("piped stderr");
    let out_h = thread::spawn(move || read_tail(out, cap));
    let err_h = thread::spawn(move || read_tail(err, cap));

    let limit = Duration::from_secs_f64(policy.wall_clock_timeout_seconds.max(0.0));
    let status = child.wait_timeout(limit)?;
    let (exit_code, timed_out) = match status {
        Some(s) => (s.code().unwrap_or(-1), false),
        None => {
            kill_group(pid);
            let _ = child.kill();
            let _ = child.wait();
            (TIMEOUT_EXIT_CODE, true)
        }
    };
    // Background children left in the group would keep the pipes open.
    kill_group(pid);
    let duration_seconds = start.elapsed().as_secs_f64();
    let stdout_tail = out_h.join().unwrap_or_default();
    let stderr_tail = err_h.join().unwrap_or_default();
    Ok(ExecResult {
        exit_code,
        timed_out,
        stdout_tail,
        stderr_tail,
        duration_seconds,
    })
}

pub(crate) fn kill_group(pgid: i32) {
    if pgid > 0 {
        // SAFETY: plain syscall on a process group we created.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
}

fn read_tail(mut r: impl Read, cap: usize) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match r.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > 2 * cap {
                    buf.drain(..buf.len() - cap);
                }
            }
        }
    }
    if buf.len() > cap {
        buf.drain(..buf.len() - cap);
    }
    String::from_utf8_lossy(&buf).into_owned()
}
