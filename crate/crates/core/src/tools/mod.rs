//! The tools agents can call, bound to one task's working directory.

pub mod browser;
pub mod denylist;
pub mod files;
pub mod harness;
pub mod play;
pub mod sandbox;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::Value;

use crate::agent::{ToolError, ToolExecutor};
use crate::clock::{Clock, SystemClock};
use crate::cwm::reference_env;
use crate::types::WorldModelArtifact;

pub use browser::{
    browser_open, browser_search, FixturePages, FixtureSearch, HttpFetcher, PageFetcher, RecordingFetcher,
    SearchBackend, SearchHit, SerperSearch,
};
pub use denylist::{default_denylist, Denylist};
pub use files::Workspace;
pub use harness::{
    FixtureConnector, HarnessConnector, HarnessEnv, HarnessError, HarnessGame, HarnessOp, HarnessRequest, HarnessResponse, HarnessSession,
    FixtureResponse, FixtureSession, NativeConnector, NativeServer, NativeSession, NativeTarget, RecordingSession, RemoteError,
    SubprocessConnector,
};
pub use play::{play_env, InteractionLog, PlayConfig};
pub use sandbox::{run_bash, run_code, run_python, ExecResult, NetworkPolicy, SandboxPolicy};

pub const DEFAULT_PAGE_BYTES: usize = 16 * 1024;
pub const DEFAULT_SEARCH_K: usize = 5;

/// Shared, read-only tool configuration.
#[derive(Clone)]
pub struct ToolConfig {
    pub denylist: Denylist,
    pub search: Option<Arc<dyn SearchBackend>>,
    pub fetcher: Option<Arc<dyn PageFetcher>>,
    pub max_page_bytes: usize,
    pub search_k: usize,
    pub sandbox_timeout_seconds: f64,
    pub max_output_bytes: usize,
    pub network: NetworkPolicy,
    pub harness: Option<Arc<dyn HarnessConnector>>,
    pub play: PlayConfig,
    pub clock: Arc<dyn Clock>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            denylist: default_denylist(),
            search: None,
            fetcher: None,
            max_page_bytes: DEFAULT_PAGE_BYTES,
            search_k: DEFAULT_SEARCH_K,
            sandbox_timeout_seconds: sandbox::DEFAULT_TIMEOUT_SECONDS,
            max_output_bytes: sandbox::DEFAULT_MAX_OUTPUT_BYTES,
            network: NetworkPolicy::Denied,
            harness: None,
            play: PlayConfig::default(),
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenedPage {
    pub url: String,
    pub text: String,
}

/// Tool state for one task run. Not shared between tasks.
pub struct Toolbelt {
    cfg: ToolConfig,
    workspace: Workspace,
    page_cache: HashMap<String, String>,
    opened: Vec<OpenedPage>,
    searched: Vec<SearchHit>,
    artifact: Option<WorldModelArtifact>,
    env_name: Option<String>,
    last_play: Option<InteractionLog>,
}

impl Toolbelt {
    pub fn new(cfg: ToolConfig, working_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        Ok(Toolbelt {
            cfg,
            workspace: Workspace::new(working_dir)?,
            page_cache: HashMap::new(),
            opened: Vec::new(),
            searched: Vec::new(),
            artifact: None,
            env_name: None,
            last_play: None,
        })
    }

    pub fn config(&self) -> &ToolConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    /// Moves file and sandbox operations to another directory (created if
    /// needed). The page cache is kept: it is per task, not per turn.
    pub fn set_working_dir(&mut self, dir: impl Into<PathBuf>) -> std::io::Result<()> {
        self.workspace = Workspace::new(dir)?;
        Ok(())
    }

    /// The artifact `play_env` should drive, and the native reference env
    /// (if any) it is compared against.
    pub fn set_artifact(&mut self, artifact: Option<WorldModelArtifact>, env_name: Option<String>) {
        self.artifact = artifact;
        self.env_name = env_name;
        self.last_play = None;
    }

    pub fn last_play(&self) -> Option<&InteractionLog> {
        self.last_play.as_ref()
    }

    /// Pages opened since the last call, in order.
    pub fn take_opened(&mut self) -> Vec<OpenedPage> {
        std::mem::take(&mut self.opened)
    }

    pub fn take_search_hits(&mut self) -> Vec<SearchHit> {
        std::mem::take(&mut self.searched)
    }

    pub fn policy(&self) -> SandboxPolicy {
        SandboxPolicy {
            wall_clock_timeout_seconds: self.cfg.sandbox_timeout_seconds,
            max_stdout_bytes: self.cfg.max_output_bytes,
            working_dir: self.workspace.root().to_path_buf(),
            network: self.cfg.network,
        }
    }

    pub fn search(&mut self, query: &str, k: usize) -> Result<Vec<SearchHit>, ToolError> {
        let backend = self
            .cfg
            .search
            .clone()
            .ok_or_else(|| ToolError::BackendUnavailable("no search backend configured".into()))?;
        let hits = browser_search(backend.as_ref(), &self.cfg.denylist, query, k)?;
        self.searched.extend(hits.iter().cloned());
        Ok(hits)
    }

    pub fn open(&mut self, url: &str) -> Result<String, ToolError> {
        if self.cfg.denylist.is_blocked_str(url) {
            return Err(ToolError::DenylistedHost(url.to_string()));
        }
        let text = match self.page_cache.get(url) {
            Some(t) => t.clone(),
            None => {
                let fetcher = self
                    .cfg
                    .fetcher
                    .clone()
                    .ok_or_else(|| ToolError::Fetch("no page fetcher configured".into()))?;
                let t = browser_open(fetcher.as_ref(), &self.cfg.denylist, url, self.cfg.max_page_bytes)?;
                self.page_cache.insert(url.to_string(), t.clone());
                t
            }
        };
        self.opened.push(OpenedPage {
            url: url.to_string(),
            text: text.clone(),
        });
        Ok(text)
    }

    pub fn exec(&self, kind: &str, text: &str) -> Result<ExecResult, ToolError> {
        let policy = self.policy();
        match kind {
            "run_bash" => run_bash(text, &policy),
            "sandbox" => run_python(text, &policy),
            _ => run_code(text, &policy),
        }
    }

    fn render_exec(&self, r: &ExecResult, started: Instant) -> String {
        r.render(self.cfg.clock.elapsed_since(started))
    }

    /// Plays the given artifact (saved at `path`) through the configured
    /// harness and records the log.
    pub fn play(&mut self, artifact: &WorldModelArtifact, path: &Path) -> Result<InteractionLog, ToolError> {
        let connector = self
            .cfg
            .harness
            .clone()
            .ok_or_else(|| ToolError::Harness("no harness configured".into()))?;
        let log = match connector.connect(path, &artifact.source) {
            Ok(mut session) => {
                let mut reference = self.env_name.as_deref().and_then(|n| reference_env(n).ok());
                let reference = reference.as_deref_mut().map(|r| r as &mut dyn crate::cwm::WorldModel);
                play_env(session.as_mut(), artifact.representation, &self.cfg.play, reference)
            }
            Err(e) => {
                let mut log = play_env(&mut FailedSession(Some(e)), artifact.representation, &PlayConfig {
                    budget: 0,
                    ..self.cfg.play.clone()
                }, None);
                log.steps.clear();
                log
            }
        };
        self.last_play = Some(log.clone());
        Ok(log)
    }

    fn play_tool(&mut self, args: &Value) -> Result<String, ToolError> {
        let mut artifact = self
            .artifact
            .clone()
            .ok_or_else(|| ToolError::Harness("no artifact under test".into()))?;
        let rel = args
            .get("path")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| file_name(&artifact.entrypoint_path));
        let bytes = self.workspace.read(&rel)?;
        artifact.source = String::from_utf8_lossy(&bytes).into_owned();
        let path = self.workspace.resolve(&rel)?;
        let log = self.play(&artifact, &path)?;
        Ok(serde_json::to_string_pretty(&log).expect("log serializes"))
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.to_string_lossy().into_owned())
}

/// Stand-in session that reports a connection failure on first use.
struct FailedSession(Option<HarnessError>);

impl HarnessSession for FailedSession {
    fn request(&mut self, _op: HarnessOp) -> Result<Value, HarnessError> {
        Err(self.0.take().unwrap_or(HarnessError::Crash {
            message: "harness unavailable".into(),
            log_tail: String::new(),
        }))
    }
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::InvalidArguments(format!("missing string argument \"{key}\"")))
}

pub const TOOL_NAMES: &[&str] = &[
    "browser_search",
    "browser_open",
    "file_tool",
    "run_code",
    "run_bash",
    "sandbox",
    "play_env",
];

impl ToolExecutor for Toolbelt {
    fn has_tool(&self, name: &str) -> bool {
        TOOL_NAMES.contains(&name)
    }

    fn describe(&self, name: &str) -> String {
        match name {
            "browser_search" => "Web search. Arguments: {query, k?}. Returns a JSON list of {title, url, snippet}.",
            "browser_open" => "Open a URL and return its readable text. Arguments: {url}.",
            "file_tool" => "Files in the working directory. Arguments: {action: save|read|list, path, content?}.",
            "run_code" => "Run a shell command in the working directory. Arguments: {command}.",
            "run_bash" => "Run a bash script in the working directory. Arguments: {command}.",
            "sandbox" => "Run a Python snippet. Arguments: {code}.",
            "play_env" => "Play the environment under test and return the interaction log. Arguments: {path?}.",
            other => other,
        }
        .to_string()
    }

    fn invoke(&mut self, name: &str, args: &Value) -> Result<String, ToolError> {
        match name {
            "browser_search" => {
                let query = str_arg(args, "query")?;
                let k = args.get("k").and_then(Value::as_u64).map(|k| k as usize).unwrap_or(self.cfg.search_k);
                let hits = self.search(query, k)?;
                Ok(serde_json::to_string_pretty(&hits).expect("hits serialize"))
            }
            "browser_open" => self.open(str_arg(args, "url")?),
            "file_tool" => {
                let action = str_arg(args, "action")?;
                let path = args.get("path").and_then(Value::as_str).unwrap_or(".");
                match action {
                    "save" => {
                        let content = str_arg(args, "content")?;
                        self.workspace.save(path, content.as_bytes())?;
                        Ok(format!("saved {path} ({} bytes)", content.len()))
                    }
                    "read" => Ok(String::from_utf8_lossy(&self.workspace.read(path)?).into_owned()),
                    "list" => Ok(self.workspace.list(path)?.join("\n")),
                    other => Err(ToolError::InvalidArguments(format!("unknown file_tool action {other}"))),
                }
            }
            "run_code" | "run_bash" => {
                let cmd = args
                    .get("command")
                    .or_else(|| args.get("script"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| ToolError::InvalidArguments("missing string argument \"command\"".into()))?;
                let started = Instant::now();
                let r = self.exec(name, cmd)?;
                Ok(self.render_exec(&r, started))
            }
            "sandbox" => {
                let code = str_arg(args, "code")?;
                let started = Instant::now();
                let r = self.exec("sandbox", code)?;
                Ok(self.render_exec(&r, started))
            }
            "play_env" => self.play_tool(args),
            other => Err(ToolError::UnknownTool(other.to_string())),
        }
    }
}
