//! Fixture builders shared by the pipeline and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use wmforge_core::cwm::{Action, CliffWalking, EnvError, EnvSpace, StepOutcome, WorldModel};
use wmforge_core::gateway::ScriptEntry;
use wmforge_core::pipeline::PipelineConfig;
use wmforge_core::tools::play::{play_env, PlayConfig};
use wmforge_core::tools::browser::fixture_key;
use wmforge_core::tools::{
    default_denylist, FixtureConnector, FixturePages, FixtureSearch, FixtureSession, NativeSession, NativeTarget,
    RecordingFetcher, RecordingSession, ToolConfig,
};
use wmforge_core::{sha256_hex, FrozenClock, Gateway, Representation, ScriptedGateway, TaskSpec};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap()
}

/// CliffWalking that forgot the cliff penalty, like `environment_buggy.py`.
pub struct NoPenaltyCliff(pub CliffWalking);

impl WorldModel for NoPenaltyCliff {
    fn space(&self) -> EnvSpace {
        self.0.space()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.0.reset(seed)
    }
    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError> {
        self.0.set_state(state)
    }
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let mut out = self.0.step(action)?;
        if out.reward == -100.0 {
            out.reward = -1.0;
        }
        Ok(out)
    }
}

/// Plays `env` natively with the default play configuration and keeps the
/// responses, keyed by the hash of `source`.
pub fn record_session(env: Box<dyn WorldModel + Send>, source: &str) -> FixtureSession {
    let mut session = RecordingSession::new(Box::new(NativeSession::new(NativeTarget::Env(env))));
    let responses = session.responses();
    play_env(&mut session, Representation::CodeEnv, &PlayConfig::default(), None);
    let responses = responses.lock().unwrap().clone();
    FixtureSession {
        artifact_sha256: sha256_hex(source.as_bytes()),
        responses,
    }
}

pub fn harness_fixture() -> FixtureConnector {
    FixtureConnector {
        sessions: vec![
            record_session(Box::new(CliffWalking::new()), &read_fixture("environment_good.py")),
            record_session(Box::new(NoPenaltyCliff(CliffWalking::new())), &read_fixture("environment_buggy.py")),
        ],
    }
}

fn develop_reply(code: &str) -> String {
    format!(
        "<final><code_file_path>environment.py</code_file_path><entrypoint_code>```python\n{code}```</entrypoint_code></final>"
    )
}

/// Script entries for one developer turn followed by both testers.
pub fn turn_entries(turn: u32, code: Option<&str>, judged_ok: bool) -> Vec<ScriptEntry> {
    let develop = format!("DEVELOP (turn {turn} of");
    let Some(code) = code else {
        return vec![ScriptEntry::new(develop, "I could not finish the implementation this turn.")];
    };
    let unit = format!("UNIT TEST (turn {turn})");
    let sim = format!("SIMULATION TEST (turn {turn})");
    let verdict = if judged_ok {
        json!({"success": true, "analysis": "Transitions look right.", "suggest_fix": ""})
    } else {
        json!({"success": false, "analysis": "Cliff steps cost -1.", "suggest_fix": "- Stepping into the cliff must cost -100."})
    };
    vec![
        ScriptEntry::new(develop, develop_reply(code)).with_usage(900, 400),
        ScriptEntry::new(unit.clone(), "Writing the suite.")
            .with_tool_call(
                "file_tool",
                json!({"action": "save", "path": "tests/test_env.py", "content": read_fixture("test_env.py")}),
            )
            .with_usage(600, 300),
        ScriptEntry::new(unit, "<final>{\"analysis\": \"Suite covers reset, cliff and goal.\", \"suggest_fix\": \"- Keep the cliff penalty at -100.\"}</final>")
            .with_usage(700, 50),
        ScriptEntry::new(sim.clone(), "Playing the environment.")
            .with_tool_call("play_env", json!({}))
            .with_usage(500, 20),
        ScriptEntry::new(sim, format!("<final>{verdict}</final>")).with_usage(2500, 80),
    ]
}

pub fn script_jsonl(entries: &[ScriptEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect()
}

/// Turn 1 forgets the cliff penalty, turn 2 fixes it.
pub fn converging_script() -> Vec<ScriptEntry> {
    let buggy = read_fixture("environment_buggy.py");
    let good = read_fixture("environment_good.py");
    let mut v = turn_entries(1, Some(&buggy), false);
    v.extend(turn_entries(2, Some(&good), true));
    v
}

/// The buggy file on every turn.
pub fn failing_script() -> Vec<ScriptEntry> {
    let buggy = read_fixture("environment_buggy.py");
    (1..=3).flat_map(|t| turn_entries(t, Some(&buggy), false)).collect()
}

pub fn gateway_from(file: &str) -> Gateway {
    let script = ScriptedGateway::parse(&read_fixture(file)).unwrap();
    Gateway::scripted(script).with_clock(Arc::new(FrozenClock::default()))
}

pub fn cliff_task(id: &str) -> TaskSpec {
    let mut t = TaskSpec::new(
        id,
        "Cliff walking: a 4x12 grid. The agent starts at the bottom-left cell and must reach the bottom-right cell. \
Moving costs -1; stepping into the cliff between them costs -100 and sends the agent back to the start.",
        Representation::CodeEnv,
    );
    t.env_name = Some("CliffWalking-v0".into());
    t
}

pub fn dry_run_config(runs_dir: &Path) -> PipelineConfig {
    let harness = FixtureConnector::load(&fixture_dir().join("harness.json")).unwrap();
    let mut cfg = PipelineConfig::new(runs_dir);
    cfg.tools = ToolConfig {
        harness: Some(Arc::new(harness)),
        clock: Arc::new(FrozenClock::default()),
        ..ToolConfig::default()
    };
    cfg
}

pub const RESEARCH_QUESTIONS: [&str; 3] = ["What are the rewards?", "When does an episode end?", "Where does the agent start?"];

/// A denylisted source that every search returns first.
pub const BLOCKED_URL: &str = "https://github.com/openai/gym/blob/master/gym/envs/toy_text/cliffwalking.py";

pub struct ResearchFixture {
    pub task: TaskSpec,
    pub config: PipelineConfig,
    pub fetcher: Arc<RecordingFetcher<FixturePages>>,
    /// Three research rounds, each trying the blocked URL before a fixture
    /// page, then one converging development turn.
    pub entries: Vec<ScriptEntry>,
}

/// Search results, pages and a script under `dir`; runs go to `dir/runs`.
pub fn research_fixture(dir: &Path) -> ResearchFixture {
    let fx = dir.join("fixtures");
    std::fs::create_dir_all(fx.join("search")).unwrap();
    std::fs::create_dir_all(fx.join("pages")).unwrap();
    let fetcher = Arc::new(RecordingFetcher::new(FixturePages { dir: fx.join("pages") }));
    let mut config = dry_run_config(&dir.join("runs"));
    config.tools.search = Some(Arc::new(FixtureSearch { dir: fx.join("search") }));
    config.tools.fetcher = Some(fetcher.clone());
    config.tools.denylist = default_denylist();

    let mut entries = vec![ScriptEntry::new(
        "EXTRACT QUESTIONS",
        RESEARCH_QUESTIONS.map(|q| format!("- {q}")).join("\n"),
    )];
    for (i, q) in RESEARCH_QUESTIONS.iter().enumerate() {
        let url = format!("https://docs.example.org/cliff/{i}");
        std::fs::write(
            fx.join("pages").join(format!("{}.html", fixture_key(&url))),
            format!("<html><body><p>Answer {i} about cliffs.</p></body></html>"),
        )
        .unwrap();
        let hits = json!([
            {"title": "Gym source", "url": BLOCKED_URL, "snippet": "reference code"},
            {"title": format!("Docs {i}"), "url": url, "snippet": "docs"}
        ]);
        std::fs::write(fx.join("search").join(format!("{}.json", fixture_key(q))), hits.to_string()).unwrap();
        entries.push(ScriptEntry::new("SELECT QUESTION", *q));
        let rq = format!("RESEARCH QUESTION: {q}");
        entries.push(ScriptEntry::new(rq.clone(), "").with_tool_call("browser_search", json!({"query": q})));
        entries.push(ScriptEntry::new(rq.clone(), "").with_tool_call("browser_open", json!({"url": BLOCKED_URL})));
        entries.push(ScriptEntry::new(rq.clone(), "").with_tool_call("browser_open", json!({"url": url})));
        entries.push(ScriptEntry::new(rq, format!("<final>Finding {i}: see {url}</final>")));
    }
    entries.extend(turn_entries(1, Some(&read_fixture("environment_good.py")), true));

    let mut task = cliff_task("researched");
    task.research_rounds = 3;
    ResearchFixture {
        task,
        config,
        fetcher,
        entries,
    }
}
