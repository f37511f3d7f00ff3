mod common;

use std::path::Path;
use std::sync::Arc;

use common::*;
use serde_json::json;
use wmforge_core::cwm::{Action, CliffWalking, EnvError, EnvSpace, StepOutcome, WorldModel};
use wmforge_core::data::{export_sft, find_run_dirs, verify};
use wmforge_core::gateway::ScriptEntry;
use wmforge_core::pipeline::*;
use wmforge_core::tools::harness::{wire_to_array, wire_to_num};
use wmforge_core::tools::{
    default_denylist, play_env, NativeConnector, NativeSession, NativeTarget, PlayConfig, ToolConfig,
};
use wmforge_core::*;

fn regenerate() -> bool {
    std::env::var_os("WMFORGE_REGENERATE_FIXTURES").is_some()
}

fn check_fixture(name: &str, fresh: &str) {
    let path = fixture_dir().join(name);
    if regenerate() {
        std::fs::write(&path, fresh).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), fresh, "{name} is stale; rerun with WMFORGE_REGENERATE_FIXTURES=1");
}

#[test]
fn fixtures_match_their_generators() {
    let harness = serde_json::to_string_pretty(&harness_fixture()).unwrap() + "\n";
    check_fixture("harness.json", &harness);
    check_fixture("converge.jsonl", &script_jsonl(&converging_script()));
    check_fixture("fail_all.jsonl", &script_jsonl(&failing_script()));
}

/// The recorded sessions come from native envs; replaying the same actions
/// through the Python files must give the same transitions.
#[test]
fn python_artifacts_agree_with_recorded_sessions() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let cases: [(&str, Box<dyn WorldModel + Send>); 2] = [
        ("environment_good.py", Box::new(CliffWalking::new())),
        ("environment_buggy.py", Box::new(NoPenaltyCliff(CliffWalking::new()))),
    ];
    for (file, env) in cases {
        let mut session = NativeSession::new(NativeTarget::Env(env));
        let log = play_env(&mut session, Representation::CodeEnv, &PlayConfig::default(), None);
        let actions: Vec<u64> = log.steps.iter().map(|s| s.action.as_u64().unwrap()).collect();
        let expected: Vec<(f64, f64, bool)> = log
            .steps
            .iter()
            .map(|s| {
                let o = wire_to_array(s.observation.as_ref().unwrap()).unwrap()[0];
                (o, wire_to_num(s.reward.as_ref().unwrap()).unwrap(), s.done.unwrap())
            })
            .collect();
        let path = fixture_dir().join(file).display().to_string();
        let script = [
            "import json, importlib.util".to_string(),
            format!("spec = importlib.util.spec_from_file_location('m', {path:?})"),
            "m = importlib.util.module_from_spec(spec)".into(),
            "spec.loader.exec_module(m)".into(),
            "env = m.Environment()".into(),
            "env.reset(seed=0)".into(),
            "out = []".into(),
            format!("for a in {actions:?}:"),
            "    o, r, d = env.step(a)".into(),
            "    out.append([float(o[0]), float(r), bool(d)])".into(),
            "    if d:".into(),
            "        env.reset()".into(),
            "print(json.dumps(out))".into(),
        ]
        .join("\n");
        let out = std::process::Command::new("python3")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .arg("-c")
            .arg(script)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let got: Vec<(f64, f64, bool)> = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(got, expected, "{file}");
    }
}

#[test]
fn dry_run_converges_on_second_turn() {
    let dir = tempfile::tempdir().unwrap();
    let rec = refine(&cliff_task("cliff"), &gateway_from("converge.jsonl"), &dry_run_config(dir.path())).unwrap();
    assert!(rec.converged, "{:#?}", rec.turns);
    assert_eq!(rec.turns.len(), 2);
    assert_eq!(rec.trajectory.verifier, 1);
    assert_eq!(verify(&rec.trajectory), 1);
    assert!(rec.faults.is_empty(), "{:?}", rec.faults);
    assert!(rec.violations().is_empty(), "{:?}", rec.violations());

    let t1 = rec.turns[0].report.as_ref().unwrap();
    assert!(!t1.unit.pass && !t1.simulation.pass);
    assert!(t1.unit.analysis.contains("exit code 1"), "{}", t1.unit.analysis);
    assert!(t1.simulation.analysis.contains("expected dynamics"), "{}", t1.simulation.analysis);
    let t2 = rec.turns[1].report.as_ref().unwrap();
    assert!(t2.unit.pass && t2.simulation.pass, "{t2:#?}");

    // Turn 2 saw turn 1's merged feedback verbatim.
    let steps = &rec.trajectory.steps;
    assert!(steps[1].state_summary.contains(&t1.merged_feedback));
    assert!(steps[1].state_summary.contains(&rec.turns[0].artifact.as_ref().unwrap().source_hash()));
    assert_eq!(rec.final_artifact.as_ref().unwrap().turn_index, 2);
    assert_eq!(rec.final_artifact.as_ref().unwrap().source, read_fixture("environment_good.py"));

    let run = dir.path().join("cliff");
    for p in [
        "turn_1/environment.py",
        "turn_1/tests/test_env.py",
        "turn_1/reports.json",
        "turn_1/transcripts/ModelDeveloper.jsonl",
        "turn_1/transcripts/UnitTester.jsonl",
        "turn_1/transcripts/SimulationTester.jsonl",
        "turn_2/environment.py",
        "trajectory.jsonl",
        "run_record.json",
    ] {
        assert!(run.join(p).is_file(), "missing {p}");
    }
    assert!(!run.join("turn_3").exists());
    let traj = std::fs::read_to_string(run.join("trajectory.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 1);
    let usage = &rec.trajectory.usage;
    assert_eq!(usage.stages["ModelDeveloper"].input_tokens, 1800);
    assert!(usage.is_consistent());
}

#[test]
fn failing_fixture_is_rejected_and_keeps_last_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let rec = refine(&cliff_task("cliff_bad"), &gateway_from("fail_all.jsonl"), &dry_run_config(dir.path())).unwrap();
    assert!(!rec.converged);
    assert_eq!(rec.turns.len(), 3);
    assert_eq!(rec.trajectory.verifier, 0);
    assert_eq!(rec.final_artifact.as_ref().unwrap().turn_index, 3);
    assert!(rec.faults.is_empty(), "{:?}", rec.faults);
}

#[test]
fn dry_run_is_byte_identical_and_export_keeps_only_accepted() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        refine(&cliff_task("good"), &gateway_from("converge.jsonl"), &dry_run_config(d)).unwrap();
        refine(&cliff_task("bad"), &gateway_from("fail_all.jsonl"), &dry_run_config(d)).unwrap();
    }
    for id in ["good", "bad"] {
        for f in ["trajectory.jsonl", "run_record.json", "turn_1/reports.json"] {
            let x = std::fs::read(a.path().join(id).join(f)).unwrap();
            let y = std::fs::read(b.path().join(id).join(f)).unwrap();
            assert!(x == y, "{id}/{f} differs between runs");
        }
    }
    let out = a.path().join("sft.jsonl");
    let summary = export_sft(&find_run_dirs(a.path()).unwrap(), &out).unwrap();
    assert_eq!((summary.exported, summary.rejected), (1, 1));
    let text = std::fs::read_to_string(&out).unwrap();
    let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(rec["task_id"], "good");
    assert_eq!(rec["verifier"], 1);
}

#[test]
fn empty_turn_then_success() {
    let mut entries = turn_entries(1, None, false);
    entries.extend(turn_entries(2, Some(&read_fixture("environment_good.py")), true));
    let gw = Gateway::scripted(ScriptedGateway::new(entries)).with_clock(Arc::new(FrozenClock::default()));
    let dir = tempfile::tempdir().unwrap();
    let rec = refine(&cliff_task("gap"), &gw, &dry_run_config(dir.path())).unwrap();
    assert!(rec.converged);
    let steps = &rec.trajectory.steps;
    assert_eq!(steps.len(), 2);
    assert_eq!(steps[0].developer_action, EMPTY_TURN_MARKER);
    assert!(steps[0].report.is_none());
    assert_eq!(rec.turns[0].artifact, None);
    assert_eq!(rec.final_artifact.as_ref().unwrap().turn_index, 2);
}

#[test]
fn invalid_task_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = cliff_task("x");
    t.description.clear();
    let gw = Gateway::scripted(ScriptedGateway::new(vec![]));
    assert!(matches!(refine(&t, &gw, &dry_run_config(dir.path())), Err(PipelineError::InvalidTask(_))));
    let t = cliff_task("../escape");
    assert!(matches!(refine(&t, &gw, &dry_run_config(dir.path())), Err(PipelineError::InvalidTask(_))));
}

#[test]
fn exhausted_script_is_a_fault_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::scripted(ScriptedGateway::new(vec![]));
    let rec = refine(&cliff_task("dry"), &gw, &dry_run_config(dir.path())).unwrap();
    assert!(!rec.converged);
    assert_eq!(rec.turns.len(), 3);
    assert_eq!(rec.faults.len(), 3);
    assert!(rec.final_artifact.is_none());
    assert_eq!(verify(&rec.trajectory), 0);
}

fn pddl_task() -> TaskSpec {
    TaskSpec::new("blocks", "Blocks world with a single gripper arm.", Representation::PddlDomain)
}

fn pddl_dev(turn: u32, domain: &str) -> ScriptEntry {
    ScriptEntry::new(
        format!("DEVELOP (turn {turn} of"),
        format!("<final><code_file_path>domain.pddl</code_file_path><entrypoint_code>```pddl\n{domain}\n```</entrypoint_code></final>"),
    )
}

#[test]
fn pddl_turns_use_validator_and_probe() {
    let gold = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pddl/blocksworld.pddl")).unwrap();
    let broken = gold.trim_end().trim_end_matches(')').to_string();
    let gw = Gateway::scripted(ScriptedGateway::new(vec![pddl_dev(1, &broken), pddl_dev(2, &gold)]));
    let dir = tempfile::tempdir().unwrap();
    let rec = refine(&pddl_task(), &gw, &PipelineConfig::new(dir.path())).unwrap();
    assert!(rec.converged);
    assert_eq!(rec.turns.len(), 2);
    let r1 = rec.turns[0].report.as_ref().unwrap();
    assert!(r1.unit.analysis.contains("incorrect-parentheses"), "{}", r1.unit.analysis);
    assert!(rec.trajectory.steps[1].state_summary.contains("incorrect-parentheses"));
    assert!(dir.path().join("blocks/turn_2/domain.pddl").is_file());
}

/// Reward turns NaN after the first step.
struct NanEnv(CliffWalking, usize);
impl WorldModel for NanEnv {
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
        self.1 += 1;
        let mut o = self.0.step(a)?;
        if self.1 > 1 {
            o.reward = f64::NAN;
        }
        Ok(o)
    }
}

fn sim_only_config(dir: &Path, connector: NativeConnector) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(dir);
    cfg.tools = ToolConfig {
        harness: Some(Arc::new(connector)),
        play: PlayConfig {
            budget: 10,
            ..Default::default()
        },
        ..ToolConfig::default()
    };
    cfg
}

fn sim_check(task: &TaskSpec, cfg: &PipelineConfig, verdict: &str) -> SubReport {
    let gw = Gateway::scripted(ScriptedGateway::new(vec![
        ScriptEntry::new("SIMULATION TEST", "").with_tool_call("play_env", json!({})),
        ScriptEntry::new("SIMULATION TEST", format!("<final>{verdict}</final>")),
    ]));
    let mut tools = wmforge_core::tools::Toolbelt::new(cfg.tools.clone(), cfg.runs_dir.join("turn_1")).unwrap();
    tools.workspace().save("environment.py", b"# stand-in\n").unwrap();
    let artifact = WorldModelArtifact {
        artifact_id: "a".into(),
        representation: task.representation,
        source: "# stand-in\n".into(),
        entrypoint_path: "turn_1/environment.py".into(),
        turn_index: 1,
        parent_task: task.task_id.clone(),
    };
    run_simulation_test(&artifact, task, 1, &gw, &mut tools, cfg).report
}

#[test]
fn simulation_rejects_non_finite_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_only_config(dir.path(), NativeConnector::new(|| NativeTarget::Env(Box::new(NanEnv(CliffWalking::new(), 0)))));
    let mut task = cliff_task("nan");
    task.env_name = None;
    let r = sim_check(&task, &cfg, r#"{"success": true}"#);
    assert!(!r.pass);
    assert!(r.analysis.contains("non-finite"), "{}", r.analysis);
}

/// Rewards off by 1e-5 from the reference.
struct Nudged(CliffWalking);
impl WorldModel for Nudged {
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
        o.reward += 1e-5;
        Ok(o)
    }
}

#[test]
fn simulation_tolerates_tiny_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_only_config(dir.path(), NativeConnector::new(|| NativeTarget::Env(Box::new(Nudged(CliffWalking::new())))));
    let r = sim_check(&cliff_task("nudge"), &cfg, r#"{"success": true}"#);
    assert!(r.pass, "{r:?}");
}

#[test]
fn simulation_without_reference_follows_the_tester() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_only_config(dir.path(), NativeConnector::new(|| NativeTarget::Game(Box::new(textgame::PeaGarden::new()))));
    let task = TaskSpec::new("pea", "Grow a pea plant in a garden.", Representation::TextGame);
    assert!(sim_check(&task, &cfg, r#"{"success": true, "analysis": "fine"}"#).pass);
    let r = sim_check(&task, &cfg, r#"{"success": false, "analysis": "watering never changes the soil", "suggest_fix": "- track soil moisture"}"#);
    assert!(!r.pass);
    assert!(r.analysis.contains("soil"));
    assert!(!sim_check(&task, &cfg, "no json here").pass);
}

#[test]
fn research_rounds_collect_evidence_and_never_touch_blocked_hosts() {
    let dir = tempfile::tempdir().unwrap();
    let fx = research_fixture(dir.path());
    let gw = Gateway::scripted(ScriptedGateway::new(fx.entries.clone())).with_clock(Arc::new(FrozenClock::default()));
    let rec = refine(&fx.task, &gw, &fx.config).unwrap();

    let r = &rec.research;
    assert_eq!(r.rounds_used, 3);
    assert_eq!(r.questions, RESEARCH_QUESTIONS.map(String::from).to_vec());
    let urls: Vec<&str> = r.evidence_log.iter().map(|e| e.url.as_str()).collect();
    assert_eq!(urls, ["https://docs.example.org/cliff/0", "https://docs.example.org/cliff/1", "https://docs.example.org/cliff/2"]);
    assert!(r.evidence_log.iter().all(|e| e.snippet.starts_with("Answer")));
    assert_eq!(r.evidence_log[1].title, "Docs 1");
    assert!(r.report_text.find("Finding 0").unwrap() < r.report_text.find("Finding 2").unwrap());
    assert!(rec.converged, "{:?}", rec.faults);

    let fetched = fx.fetcher.fetched();
    assert_eq!(fetched.len(), 3);
    assert!(fetched.iter().all(|u| !default_denylist().is_blocked_str(u)), "{fetched:?}");
    let transcript = std::fs::read_to_string(dir.path().join("runs/researched/research/transcripts/round_1.jsonl")).unwrap();
    assert!(transcript.contains("denylisted"), "{transcript}");
    assert!(transcript.contains(BLOCKED_URL));
}

#[test]
fn research_stops_when_no_question_is_selected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = research_fixture(dir.path()).config;
    let entries = vec![
        ScriptEntry::new("EXTRACT QUESTIONS", "1. a?\n2. b?"),
        ScriptEntry::new("SELECT QUESTION", "a?"),
        ScriptEntry::new("RESEARCH QUESTION: a?", "<final>nothing found</final>"),
        ScriptEntry::new("SELECT QUESTION", "NONE"),
    ];
    let gw = Gateway::scripted(ScriptedGateway::new(entries));
    let mut task = cliff_task("short");
    task.research_rounds = 5;
    task.turn_budget = 1;
    let mut tools = wmforge_core::tools::Toolbelt::new(cfg.tools.clone(), dir.path().join("r")).unwrap();
    let out = knowledge_synthesis(&task, &gw, &mut tools, &cfg);
    assert_eq!(out.report.rounds_used, 1);
    assert!(out.report.evidence_log.is_empty());
    assert_eq!(out.transcripts.len(), 1);
    assert!(out.faults.is_empty());

    task.research_rounds = 0;
    let out = knowledge_synthesis(&task, &Gateway::scripted(ScriptedGateway::new(vec![])), &mut tools, &cfg);
    assert_eq!(out.report.rounds_used, 0);
    assert!(out.report.report_text.contains(&task.description));
    assert!(out.report.questions.is_empty() && out.report.evidence_log.is_empty());
}

#[test]
fn developer_prompt_carries_feedback_verbatim() {
    let task = cliff_task("p");
    let fb = "## Unit tests: FAILED\nline one\n  indented";
    let p = prompts::develop(&task, "report", fb, 2, "environment.py");
    assert!(p.contains(fb));
    assert!(p.starts_with("DEVELOP (turn 2 of 3)"));
}

#[test]
fn batch_runs_tasks_concurrently_in_isolated_dirs() {
    let good = read_fixture("environment_good.py");
    let mut entries = Vec::new();
    let mut tasks = Vec::new();
    for name in ["alpha", "beta", "gamma"] {
        let mut t = cliff_task(name);
        t.description = format!("{} Variant {name}.", t.description);
        tasks.push(t);
        for mut e in turn_entries(1, Some(&good), true) {
            e.pattern = format!("Variant {name}.");
            entries.push(e);
        }
    }
    let gw = Gateway::scripted(ScriptedGateway::new(entries)).with_clock(Arc::new(FrozenClock::default()));
    let dir = tempfile::tempdir().unwrap();
    let out = run_batch(&tasks, &gw, &dry_run_config(dir.path()), 2);
    assert_eq!(out.len(), 3);
    for (r, name) in out.iter().zip(["alpha", "beta", "gamma"]) {
        let r = r.as_ref().unwrap();
        assert_eq!(r.task_id, name);
        assert!(r.converged, "{name}: {:?}", r.faults);
        assert!(dir.path().join(name).join("turn_1/tests/test_env.py").is_file());
    }
}
