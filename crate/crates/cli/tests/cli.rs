use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wmforge"))
}

fn core_fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn cliff_task(id: &str) -> Value {
    json!({
        "task_id": id,
        "description": "Cliff walking: a 4x12 grid. The agent starts at the bottom-left cell and must reach the bottom-right cell. \
Moving costs -1; stepping into the cliff between them costs -100 and sends the agent back to the start.",
        "representation": "CodeEnv",
        "env_name": "CliffWalking-v0",
        "turn_budget": 3,
        "research_rounds": 0
    })
}

fn write_config(dir: &Path, tasks: Vec<Value>) -> PathBuf {
    let cfg = json!({
        "tasks": tasks,
        "runs_dir": "runs",
        "harness": {"kind": "fixture", "path": core_fixture("pipeline/harness.json")},
        "frozen_clock": true
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn pipeline(config: &Path, script: &str, out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .arg("pipeline")
        .arg("--config")
        .arg(config)
        .arg("--mock-gateway")
        .arg(core_fixture(&format!("pipeline/{script}")))
        .arg("--out")
        .arg(out)
        .args(extra))
}

#[test]
fn pipeline_with_mock_gateway_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), vec![cliff_task("cliff")]);
    let out = dir.path().join("runs");
    let o = pipeline(&cfg, "converge.jsonl", &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let summary = stdout_json(&o);
    assert_eq!(summary[0]["converged"], true);
    assert_eq!(summary[0]["verifier"], 1);
    for p in ["turn_1", "turn_2", "trajectory.jsonl", "run_record.json"] {
        assert!(out.join("cliff").join(p).exists(), "{p}");
    }
    let first = std::fs::read(out.join("cliff/trajectory.jsonl")).unwrap();
    let o = pipeline(&cfg, "converge.jsonl", &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("cliff/trajectory.jsonl")).unwrap(), first);
}

#[test]
fn turns_flag_caps_the_loop_and_failures_are_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), vec![cliff_task("cliff")]);
    let out = dir.path().join("runs");
    let o = pipeline(&cfg, "converge.jsonl", &out, &["--turns", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let rec: Value = serde_json::from_str(&std::fs::read_to_string(out.join("cliff/run_record.json")).unwrap()).unwrap();
    assert_eq!(rec["turns"].as_array().unwrap().len(), 1);
    assert_eq!(rec["converged"], false);
}

#[test]
fn missing_config_is_a_config_error() {
    let o = run(bin().args(["pipeline", "--config", "/nonexistent/run.json", "--mock-gateway", "x.jsonl"]));
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), vec![cliff_task("cliff")]);
    let o = run(bin().arg("pipeline").arg("--config").arg(&cfg).args(["--task", "nope", "--mock-gateway"]).arg(core_fixture("pipeline/converge.jsonl")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exhausted_gateway_is_an_infrastructure_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), vec![cliff_task("cliff")]);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(bin()
        .arg("pipeline")
        .arg("--config")
        .arg(&cfg)
        .arg("--mock-gateway")
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("runs")));
    assert_eq!(o.status.code(), Some(3));
    assert!(!stdout_json(&o)[0]["faults"].as_array().unwrap().is_empty());
}

#[test]
fn export_and_reports_over_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let good = write_config(dir.path(), vec![cliff_task("good")]);
    assert_eq!(pipeline(&good, "converge.jsonl", &runs, &[]).status.code(), Some(0));
    let bad = write_config(dir.path(), vec![cliff_task("bad")]);
    assert_eq!(pipeline(&bad, "fail_all.jsonl", &runs, &[]).status.code(), Some(0));

    let sft = dir.path().join("sft.jsonl");
    let o = run(bin().arg("export-sft").arg("--runs").arg(&runs).arg("--out").arg(&sft));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["exported"], 1);
    assert_eq!(std::fs::read_to_string(&sft).unwrap().lines().count(), 1);

    let o = run(bin().arg("report").arg("usage").arg("--runs").arg(&runs));
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("stage,runs,input_tokens"), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("ModelDeveloper,2,")), "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("total,2,"), "{csv}");

    let o = run(bin().arg("report").arg("errors").arg("--runs").arg(&runs).args(["--format", "json"]));
    assert_eq!(o.status.code(), Some(0));
    let rows = stdout_json(&o);
    let dyn_turn1 = rows
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["error_type"] == "dynamics-error" && r["turn"] == 1)
        .unwrap();
    assert_eq!(dyn_turn1["count"], 2);

    let gold = dir.path().join("gold.py");
    std::fs::write(&gold, std::fs::read_to_string(core_fixture("pipeline/environment_good.py")).unwrap()).unwrap();
    let o = run(bin().arg("report").arg("contamination").arg("--runs").arg(&runs).arg("--gold").arg(&gold));
    assert_eq!(o.status.code(), Some(0));
    let rep = stdout_json(&o);
    assert_eq!(rep["checked"], 2);
    assert_eq!(rep["contaminated"], 0);
}

#[test]
fn report_wtl_counts_sum_to_instances() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(&a, json!({"instances": [
        {"instance": "x", "f1_avg": 0.9}, {"instance": "y", "f1_avg": 0.5}, {"instance": "z", "error": "boom"}
    ]}).to_string()).unwrap();
    std::fs::write(&b, json!({"x": 0.4, "y": 0.5, "z": 0.2}).to_string()).unwrap();
    let o = run(bin().args(["report", "wtl", "--metric", "f1_avg"]).arg(&a).arg(&b));
    assert_eq!(o.status.code(), Some(0));
    let w = stdout_json(&o);
    assert_eq!((w["wins"].as_u64(), w["ties"].as_u64(), w["losses"].as_u64()), (Some(1), Some(1), Some(1)));
}

#[test]
fn eval_pddl_gold_against_itself_is_all_ones() {
    let gold = core_fixture("pddl/child_snack_generated.pddl");
    let o = run(bin().args(["eval", "pddl"]).arg(&gold).arg(&gold));
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    for k in ["executability", "similarity", "f1_pred", "f1_param", "f1_precond", "f1_eff", "f1_avg"] {
        assert_eq!(v["instances"][0][k], 1.0, "{k}");
        assert_eq!(v["aggregate"][k], 1.0, "{k}");
    }
    let o = run(bin().args(["eval", "pddl"]).arg(&gold));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_pddl_records_unparsable_generation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pddl");
    std::fs::write(&bad, "(define (domain d) (:predicates (p ?x)").unwrap();
    let gold = core_fixture("pddl/gripper.pddl");
    let o = run(bin().args(["eval", "pddl"]).arg(&bad).arg(&gold));
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["instances"][0]["executability"], 0.0);
    assert_eq!(v["instances"][0]["error_category"], "incorrect-parentheses");
    assert_eq!(v["instances"][0]["f1_avg"], 0.0);
}

#[test]
fn eval_cwm_true_model_scores_one() {
    let o = run(bin().args(["eval", "cwm", "--model", "true_env", "--episodes", "3", "--budget", "60"]));
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let nr = v["instances"][0]["normalized_return"].as_f64().unwrap();
    assert!((nr - 1.0).abs() < 1e-9, "{nr}");
    assert_eq!(v["instances"][0]["accuracy"], 1.0);
}

/// A model file served by a subprocess harness: the native server stands in
/// for the Python harness.
#[test]
fn eval_cwm_through_subprocess_harness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        json!({"harness": {"kind": "subprocess", "command": [env!("CARGO_BIN_EXE_wmforge"), "harness-native", "--env", "CliffWalking"]}})
            .to_string(),
    )
    .unwrap();
    let model = dir.path().join("environment.py");
    std::fs::copy(core_fixture("pipeline/environment_good.py"), &model).unwrap();
    let o = run(bin()
        .args(["eval", "cwm", "--episodes", "2", "--budget", "30", "--count", "50", "--config"])
        .arg(&cfg)
        .arg("--model")
        .arg(&model)
        .args(["--model", "random"]));
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["instances"][0]["accuracy"], 1.0, "{v}");
    assert!(v["instances"][1]["accuracy"].as_f64().unwrap() < 0.9, "{v}");
}

#[test]
fn eval_textgame_crashing_game_is_gated() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    std::fs::write(&spec, "Grow a pea plant in a garden.").unwrap();
    let judge = dir.path().join("judge.jsonl");
    std::fs::write(&judge, "{\"match\": \"*\", \"reply\": \"No\"}\n").unwrap();
    let o = run(bin()
        .args(["eval", "textgame", "--game", "crashing", "--spec"])
        .arg(&spec)
        .arg("--judge-script")
        .arg(&judge)
        .arg("--agent-script")
        .arg(&judge));
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let inst = &v["instances"][0];
    for k in ["init", "possible_actions", "runnable", "winnable", "alignment"] {
        assert_eq!(inst[k], 0.0, "{k}: {v}");
    }
}

#[test]
fn schema_command_writes_every_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("schema").arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    for name in ["task_spec", "run_record", "run_config", "sft_record"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.schema.json"))).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("$schema").is_some());
    }
}
