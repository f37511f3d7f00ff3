//! Declarative run configuration, loaded from a single JSON file.
//!
//! Relative paths inside the file resolve against the file's directory.
//! Command-line flags override fields after loading.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, FrozenClock, SystemClock};
use crate::cwm::PlannerConfig;
use crate::gateway::DecodingConfig;
use crate::pipeline::PipelineConfig;
use crate::textgame::CrawlConfig;
use crate::tools::{
    default_denylist, Denylist, FixtureConnector, FixturePages, FixtureSearch, HttpFetcher, SerperSearch,
    SubprocessConnector, ToolConfig,
};
use crate::types::{validate_task, TaskSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchSource {
    #[default]
    None,
    /// Canned result lists keyed by query hash.
    Fixtures { dir: PathBuf },
    /// Serper API; the key comes from `SERPER_API_KEY`.
    Serper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PageSource {
    #[default]
    None,
    Fixtures { dir: PathBuf },
    Http { timeout_seconds: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarnessSource {
    #[default]
    None,
    /// Recorded sessions replayed by artifact hash.
    Fixture { path: PathBuf },
    /// A process speaking the line protocol; the artifact path is appended
    /// to `command`.
    Subprocess {
        command: Vec<String>,
        #[serde(default = "default_request_timeout")]
        request_timeout_seconds: u64,
    },
}

fn default_request_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<TaskSpec>,
    /// JSON Lines file of additional tasks.
    pub tasks_file: Option<PathBuf>,
    pub runs_dir: PathBuf,
    pub decoding: DecodingConfig,
    pub max_steps: Option<u32>,
    pub unit_test_command: Option<String>,
    /// Hosts file replacing the built-in denylist.
    pub denylist_path: Option<PathBuf>,
    pub sandbox_timeout_seconds: Option<f64>,
    pub search: SearchSource,
    pub pages: PageSource,
    pub harness: HarnessSource,
    /// Steps per play_env session.
    pub play_steps: Option<usize>,
    pub token_cap: Option<u64>,
    /// Pin every timestamp to the epoch, for reproducible run directories.
    pub frozen_clock: bool,
    pub planner: PlannerConfig,
    pub crawl: CrawlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tasks: Vec::new(),
            tasks_file: None,
            runs_dir: PathBuf::from("runs"),
            decoding: DecodingConfig::default(),
            max_steps: None,
            unit_test_command: None,
            denylist_path: None,
            sandbox_timeout_seconds: None,
            search: SearchSource::None,
            pages: PageSource::None,
            harness: HarnessSource::None,
            play_steps: None,
            token_cap: None,
            frozen_clock: false,
            planner: PlannerConfig::default(),
            crawl: CrawlConfig::default(),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.runs_dir);
        for p in [&mut self.tasks_file, &mut self.denylist_path].into_iter().flatten() {
            rebase(base, p);
        }
        if let SearchSource::Fixtures { dir } = &mut self.search {
            rebase(base, dir);
        }
        if let PageSource::Fixtures { dir } = &mut self.pages {
            rebase(base, dir);
        }
        if let HarnessSource::Fixture { path } = &mut self.harness {
            rebase(base, path);
        }
        for t in &mut self.tasks {
            if let Some(g) = &mut t.gold_ref {
                rebase(base, g);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.decoding.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.planner.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.crawl.validate().map_err(ConfigError::Invalid)?;
        if self.sandbox_timeout_seconds.is_some_and(|t| !(t > 0.0)) {
            return Err(ConfigError::Invalid("sandbox_timeout_seconds must be positive".into()));
        }
        if let HarnessSource::Subprocess { command, .. } = &self.harness {
            if command.is_empty() {
                return Err(ConfigError::Invalid("harness command is empty".into()));
            }
        }
        Ok(())
    }

    /// Inline tasks followed by those in `tasks_file`. Duplicate ids and
    /// malformed tasks are rejected.
    pub fn all_tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        let mut tasks = self.tasks.clone();
        if let Some(path) = &self.tasks_file {
            for (i, line) in read(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let t: TaskSpec = serde_json::from_str(line).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                tasks.push(t);
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate task_id {}", t.task_id)));
            }
            let v = validate_task(t);
            if !v.is_empty() {
                return Err(ConfigError::Invalid(format!("task {}: {}", t.task_id, v.join("; "))));
            }
        }
        Ok(tasks)
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        if self.frozen_clock {
            Arc::new(FrozenClock::default())
        } else {
            Arc::new(SystemClock)
        }
    }

    pub fn denylist(&self) -> Result<Denylist, ConfigError> {
        match &self.denylist_path {
            Some(p) => Ok(Denylist::parse(&read(p)?)),
            None => Ok(default_denylist()),
        }
    }

    pub fn tool_config(&self) -> Result<ToolConfig, ConfigError> {
        let mut tools = ToolConfig {
            denylist: self.denylist()?,
            clock: self.clock(),
            ..ToolConfig::default()
        };
        tools.search = match &self.search {
            SearchSource::None => None,
            SearchSource::Fixtures { dir } => Some(Arc::new(FixtureSearch { dir: dir.clone() })),
            SearchSource::Serper => Some(Arc::new(
                SerperSearch::from_env().ok_or_else(|| ConfigError::Invalid("SERPER_API_KEY unset".into()))?,
            )),
        };
        tools.fetcher = match &self.pages {
            PageSource::None => None,
            PageSource::Fixtures { dir } => Some(Arc::new(FixturePages { dir: dir.clone() })),
            PageSource::Http { timeout_seconds } => Some(Arc::new(HttpFetcher {
                timeout: Duration::from_secs(*timeout_seconds),
            })),
        };
        tools.harness = match &self.harness {
            HarnessSource::None => None,
            HarnessSource::Fixture { path } => Some(Arc::new(
                FixtureConnector::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )),
            HarnessSource::Subprocess {
                command,
                request_timeout_seconds,
            } => Some(Arc::new(SubprocessConnector {
                command: command.clone(),
                working_dir: std::env::temp_dir(),
                request_timeout: Duration::from_secs(*request_timeout_seconds),
            })),
        };
        if let Some(t) = self.sandbox_timeout_seconds {
            tools.sandbox_timeout_seconds = t;
        }
        if let Some(n) = self.play_steps {
            tools.play.budget = n;
        }
        Ok(tools)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::new(&self.runs_dir);
        cfg.decoding = self.decoding.clone();
        cfg.tools = self.tool_config()?;
        if let Some(n) = self.max_steps {
            cfg.max_steps = n;
        }
        if let Some(c) = &self.unit_test_command {
            cfg.unit_test_command = c.clone();
        }
        Ok(cfg)
    }
}
