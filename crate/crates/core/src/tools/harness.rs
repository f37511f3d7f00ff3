//! Client side of the JSON-lines harness protocol, plus an in-process server
//! for native environments and a replay fixture for offline tests.
//!
//! Requests: `{"id": 1, "op": "step", "action": 1}`.
//! Responses: `{"id": 1, "ok": true, "result": {...}}` or
//! `{"id": 1, "ok": false, "error": {"type", "message", "traceback_tail"}}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cwm::{Action, EnvError, EnvSpace, StepOutcome, WorldModel};
use crate::textgame::{GameError, GameStep, TextGame};
use crate::types::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HarnessOp {
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    SetState {
        state: Value,
    },
    Step {
        action: Value,
    },
    Spaces,
    GameInit,
    GameActions,
    GameStep {
        action: String,
    },
    RunTests {
        paths: Vec<String>,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HarnessRequest {
    pub id: u64,
    #[serde(flatten)]
    pub op: HarnessOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RemoteError {
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub traceback_tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HarnessResponse {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteError>,
}

impl HarnessResponse {
    pub fn success(id: Option<u64>, result: Value) -> Self {
        HarnessResponse {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: Option<u64>, kind: &str, message: impl Into<String>) -> Self {
        HarnessResponse {
            id,
            ok: false,
            result: None,
            error: Some(RemoteError {
                kind: kind.to_string(),
                message: message.into(),
                traceback_tail: String::new(),
            }),
        }
    }

    /// Exactly one of result/error, consistent with `ok`.
    pub fn is_well_formed(&self) -> bool {
        match self.ok {
            true => self.result.is_some() && self.error.is_none(),
            false => self.result.is_none() && self.error.is_some(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HarnessError {
    #[error("{}: {}", .0.kind, .0.message)]
    Remote(RemoteError),
    #[error("harness crashed: {message}")]
    Crash { message: String, log_tail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("harness did not answer within {0:?}")]
    Timeout(Duration),
    #[error("could not start harness: {0}")]
    Spawn(String),
}

// ---------------------------------------------------------------------------
// Wire encoding of numbers and arrays

/// Finite numbers as JSON numbers; NaN and infinities as tagged strings.
pub fn num_to_wire(x: f64) -> Value {
    if x.is_nan() {
        json!("nan")
    } else if x == f64::INFINITY {
        json!("inf")
    } else if x == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        json!(x)
    }
}

pub fn wire_to_num(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "nan" | "NaN" => Some(f64::NAN),
            "inf" | "Infinity" => Some(f64::INFINITY),
            "-inf" | "-Infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

/// `{"data": [...], "shape": [...]}`.
pub fn array_to_wire(data: &[f64], shape: &[usize]) -> Value {
    json!({
        "data": data.iter().map(|x| num_to_wire(*x)).collect::<Vec<_>>(),
        "shape": shape,
    })
}

/// Accepts the `{data, shape}` form, a bare number, or a flat list.
pub fn wire_to_array(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::Object(m) => m.get("data").and_then(wire_to_array),
        Value::Array(items) => {
            let mut out = Vec::new();
            for it in items {
                match it {
                    Value::Array(_) => out.extend(wire_to_array(it)?),
                    _ => out.push(wire_to_num(it)?),
                }
            }
            Some(out)
        }
        other => wire_to_num(other).map(|x| vec![x]),
    }
}

pub fn action_to_wire(a: &Action) -> Value {
    match a {
        Action::Discrete(i) => json!(i),
        Action::Continuous(v) => array_to_wire(v, &[v.len()]),
    }
}

pub fn wire_to_action(v: &Value) -> Option<Action> {
    if let Some(i) = v.as_u64() {
        return Some(Action::Discrete(i as usize));
    }
    wire_to_array(v).map(Action::Continuous)
}

// ---------------------------------------------------------------------------
// Sessions

pub trait HarnessSession: Send {
    fn request(&mut self, op: HarnessOp) -> Result<Value, HarnessError>;
}

/// Opens sessions against a saved artifact file.
pub trait HarnessConnector: Send + Sync {
    fn connect(&self, artifact_path: &Path, artifact_source: &str) -> Result<Box<dyn HarnessSession>, HarnessError>;
}

fn interpret(expected_id: u64, resp: HarnessResponse) -> Result<Value, HarnessError> {
    if resp.id != Some(expected_id) {
        return Err(HarnessError::Protocol(format!(
            "response id {:?} does not match request id {expected_id}",
            resp.id
        )));
    }
    if !resp.is_well_formed() {
        return Err(HarnessError::Protocol("response must carry exactly one of result/error".into()));
    }
    match (resp.ok, resp.result, resp.error) {
        (true, Some(r), _) => Ok(r),
        (false, _, Some(e)) => Err(HarnessError::Remote(e)),
        _ => unreachable!("checked by is_well_formed"),
    }
}

/// A harness process speaking the protocol over stdin/stdout.
pub struct SubprocessHarness {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr: Arc<Mutex<Vec<u8>>>,
    next_id: u64,
    timeout: Duration,
    closed: bool,
}

const STDERR_KEEP: usize = 4096;

impl SubprocessHarness {
    /// Runs `command[0] command[1..] artifact_path` in `working_dir`.
    pub fn spawn(
        command: &[String],
        artifact_path: &Path,
        working_dir: &Path,
        timeout: Duration,
    ) -> Result<Self, HarnessError> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| HarnessError::Spawn("empty harness command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .arg(artifact_path)
            .current_dir(working_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .process_group(0)
            .spawn()
            .map_err(|e| HarnessError::Spawn(format!("{prog}: {e}")))?;
        let stdout = child.stdout.take().expect("piped");
        let stderr = child.stderr.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let err_buf = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&err_buf);
        thread::spawn(move || {
            let mut r = BufReader::new(stderr);
            let mut chunk = Vec::new();
            while r.read_until(b'\n', &mut chunk).map(|n| n > 0).unwrap_or(false) {
                let mut b = sink.lock().unwrap();
                b.extend_from_slice(&chunk);
                if b.len() > 2 * STDERR_KEEP {
                    let cut = b.len() - STDERR_KEEP;
                    b.drain(..cut);
                }
                chunk.clear();
            }
        });
        Ok(SubprocessHarness {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            stderr: err_buf,
            next_id: 1,
            timeout,
            closed: false,
        })
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    fn stderr_tail(&self) -> String {
        let b = self.stderr.lock().unwrap();
        let start = b.len().saturating_sub(STDERR_KEEP);
        String::from_utf8_lossy(&b[start..]).into_owned()
    }

    fn crash(&mut self, message: &str) -> HarnessError {
        // Let the stderr reader drain before snapshotting.
        thread::sleep(Duration::from_millis(50));
        HarnessError::Crash {
            message: message.to_string(),
            log_tail: self.stderr_tail(),
        }
    }

    /// Terminates the process group and reaps the child.
    pub fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        if let Some(mut stdin) = self.stdin.take() {
            let line = serde_json::to_string(&HarnessRequest {
                id: self.next_id,
                op: HarnessOp::Shutdown,
            })
            .unwrap_or_default();
            let _ = writeln!(stdin, "{line}");
        }
        crate::tools::sandbox::kill_group(self.child.id() as i32);
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl HarnessSession for SubprocessHarness {
    fn request(&mut self, op: HarnessOp) -> Result<Value, HarnessError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&HarnessRequest { id, op }).expect("request serializes");
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(HarnessError::Protocol("session closed".into()));
        };
        if writeln!(stdin, "{line}").and_then(|_| stdin.flush()).is_err() {
            return Err(self.crash("harness stdin closed"));
        }
        // Poll so that a dead child is noticed even if a stray grandchild
        // still holds its stdout open.
        let deadline = std::time::Instant::now() + self.timeout;
        let raw = loop {
            match self.lines.recv_timeout(Duration::from_millis(25)) {
                Ok(l) => break l,
                Err(RecvTimeoutError::Disconnected) => return Err(self.crash("harness exited")),
                Err(RecvTimeoutError::Timeout) => {
                    if let Ok(Some(status)) = self.child.try_wait() {
                        if let Ok(l) = self.lines.recv_timeout(Duration::from_millis(25)) {
                            break l;
                        }
                        return Err(self.crash(&format!("harness exited with {status}")));
                    }
                    if std::time::Instant::now() >= deadline {
                        self.close();
                        return Err(HarnessError::Timeout(self.timeout));
                    }
                }
            }
        };
        let resp: HarnessResponse = serde_json::from_str(&raw)
            .map_err(|e| HarnessError::Protocol(format!("unparseable response {raw:?}: {e}")))?;
        interpret(id, resp)
    }
}

impl Drop for SubprocessHarness {
    fn drop(&mut self) {
        self.close();
    }
}

#[derive(Debug, Clone)]
pub struct SubprocessConnector {
    pub command: Vec<String>,
    pub working_dir: PathBuf,
    pub request_timeout: Duration,
}

impl HarnessConnector for SubprocessConnector {
    fn connect(&self, artifact_path: &Path, _source: &str) -> Result<Box<dyn HarnessSession>, HarnessError> {
        let wd = artifact_path.parent().unwrap_or(&self.working_dir);
        Ok(Box::new(SubprocessHarness::spawn(
            &self.command,
            artifact_path,
            wd,
            self.request_timeout,
        )?))
    }
}

// ---------------------------------------------------------------------------
// Replay fixtures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSession {
    /// sha256 of the artifact source, or `*` for any artifact.
    pub artifact_sha256: String,
    pub responses: Vec<FixtureResponse>,
}

/// Replays recorded responses, in order, for artifacts identified by hash.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureConnector {
    pub sessions: Vec<FixtureSession>,
}

impl FixtureConnector {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Spawn(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Spawn(format!("{}: {e}", path.display())))
    }
}

struct ReplaySession {
    responses: std::vec::IntoIter<FixtureResponse>,
    next_id: u64,
}

impl HarnessSession for ReplaySession {
    fn request(&mut self, _op: HarnessOp) -> Result<Value, HarnessError> {
        let id = self.next_id;
        self.next_id += 1;
        let r = self
            .responses
            .next()
            .ok_or_else(|| HarnessError::Crash {
                message: "recorded session exhausted".into(),
                log_tail: String::new(),
            })?;
        interpret(
            id,
            HarnessResponse {
                id: Some(id),
                ok: r.ok,
                result: r.result,
                error: r.error,
            },
        )
    }
}

impl HarnessConnector for FixtureConnector {
    fn connect(&self, _path: &Path, source: &str) -> Result<Box<dyn HarnessSession>, HarnessError> {
        let hash = sha256_hex(source.as_bytes());
        let session = self
            .sessions
            .iter()
            .find(|s| s.artifact_sha256 == hash)
            .or_else(|| self.sessions.iter().find(|s| s.artifact_sha256 == "*"))
            .ok_or_else(|| HarnessError::Spawn(format!("no recorded session for artifact {hash}")))?;
        Ok(Box::new(ReplaySession {
            responses: session.responses.clone().into_iter(),
            next_id: 1,
        }))
    }
}

/// Wraps a live session and keeps every answer so it can be replayed later
/// through [`FixtureConnector`]. Transport failures are not recorded.
pub struct RecordingSession {
    inner: Box<dyn HarnessSession>,
    responses: Arc<Mutex<Vec<FixtureResponse>>>,
}

impl RecordingSession {
    pub fn new(inner: Box<dyn HarnessSession>) -> Self {
        RecordingSession {
            inner,
            responses: Arc::default(),
        }
    }

    /// Handle to the recorded responses; stays valid after the session is dropped.
    pub fn responses(&self) -> Arc<Mutex<Vec<FixtureResponse>>> {
        self.responses.clone()
    }
}

impl HarnessSession for RecordingSession {
    fn request(&mut self, op: HarnessOp) -> Result<Value, HarnessError> {
        let out = self.inner.request(op);
        let recorded = match &out {
            Ok(v) => Some(FixtureResponse {
                ok: true,
                result: Some(v.clone()),
                error: None,
            }),
            Err(HarnessError::Remote(e)) => Some(FixtureResponse {
                ok: false,
                result: None,
                error: Some(e.clone()),
            }),
            Err(_) => None,
        };
        if let Some(r) = recorded {
            self.responses.lock().expect("recording lock").push(r);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Native server

pub enum NativeTarget {
    Env(Box<dyn WorldModel + Send>),
    Game(Box<dyn TextGame + Send>),
}

/// Serves a native environment or game with the same request/response
/// semantics as an external harness.
pub struct NativeServer {
    target: NativeTarget,
}

fn env_err(e: EnvError) -> (String, String) {
    match e {
        EnvError::InvalidState(m) | EnvError::InvalidAction(m) => ("ValueError".into(), m),
        EnvError::Raised { kind, message } => (kind, message),
        other => ("RuntimeError".into(), other.to_string()),
    }
}

fn any_nonfinite(xs: &[f64]) -> bool {
    xs.iter().any(|x| !x.is_finite())
}

impl NativeServer {
    pub fn new(target: NativeTarget) -> Self {
        NativeServer { target }
    }

    pub fn handle(&mut self, req: &HarnessRequest) -> HarnessResponse {
        let id = Some(req.id);
        let out: Result<Value, (String, String)> = match (&mut self.target, &req.op) {
            (NativeTarget::Env(env), HarnessOp::Spaces) => {
                let mut v = serde_json::to_value(env.space()).expect("space serializes");
                v["seed_method"] = json!("reset");
                Ok(v)
            }
            (NativeTarget::Env(env), HarnessOp::Reset { seed }) => {
                let shape = env.space().observation_shape;
                env.reset(seed.unwrap_or(0)).map_err(env_err).map(|obs| {
                    json!({"observation": array_to_wire(&obs, &shape), "nonfinite": any_nonfinite(&obs)})
                })
            }
            (NativeTarget::Env(env), HarnessOp::SetState { state }) => match wire_to_array(state) {
                Some(s) => env.set_state(&s).map(|_| json!({})).map_err(env_err),
                None => Err(("ValueError".into(), "state must be a numeric array".into())),
            },
            (NativeTarget::Env(env), HarnessOp::Step { action }) => match wire_to_action(action) {
                Some(a) => {
                    let shape = env.space().observation_shape;
                    env.step(&a).map_err(env_err).map(|o| {
                        json!({
                            "observation": array_to_wire(&o.observation, &shape),
                            "reward": num_to_wire(o.reward),
                            "done": o.done,
                            "nonfinite": any_nonfinite(&o.observation) || !o.reward.is_finite(),
                        })
                    })
                }
                None => Err(("ValueError".into(), format!("unsupported action {action}"))),
            },
            (NativeTarget::Game(g), HarnessOp::GameInit) => {
                g.init().map(|o| json!({"observation": o})).map_err(|e| (e.kind, e.message))
            }
            (NativeTarget::Game(g), HarnessOp::GameActions) => {
                g.actions().map(|a| json!({"actions": a})).map_err(|e| (e.kind, e.message))
            }
            (NativeTarget::Game(g), HarnessOp::GameStep { action }) => g
                .step(action)
                .map(|s| serde_json::to_value(s).expect("step serializes"))
                .map_err(|e| (e.kind, e.message)),
            (_, HarnessOp::Shutdown) => Ok(json!({})),
            (_, HarnessOp::RunTests { .. }) => Err((
                "NotImplementedError".into(),
                "native targets have no test runner".into(),
            )),
            (_, op) => Err(("ProtocolError".into(), format!("operation not supported by this target: {op:?}"))),
        };
        match out {
            Ok(v) => HarnessResponse::success(id, v),
            Err((kind, message)) => HarnessResponse::failure(id, &kind, message),
        }
    }

    /// Serves newline-delimited requests until `shutdown` or EOF. Malformed
    /// lines get a `ProtocolError` response and the loop continues.
    pub fn serve_lines(&mut self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (resp, stop) = match serde_json::from_str::<HarnessRequest>(&line) {
                Ok(req) => {
                    let stop = req.op == HarnessOp::Shutdown;
                    (self.handle(&req), stop)
                }
                Err(e) => {
                    let id = serde_json::from_str::<Value>(&line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(Value::as_u64));
                    (HarnessResponse::failure(id, "ProtocolError", e.to_string()), false)
                }
            };
            writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
            output.flush()?;
            if stop {
                break;
            }
        }
        Ok(())
    }
}

/// In-process session: requests go through full JSON encoding so the wire
/// format is exercised exactly as with a subprocess.
pub struct NativeSession {
    server: NativeServer,
    next_id: u64,
}

impl NativeSession {
    pub fn new(target: NativeTarget) -> Self {
        NativeSession {
            server: NativeServer::new(target),
            next_id: 1,
        }
    }
}

impl HarnessSession for NativeSession {
    fn request(&mut self, op: HarnessOp) -> Result<Value, HarnessError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&HarnessRequest { id, op }).expect("request serializes");
        let req: HarnessRequest = serde_json::from_str(&line).map_err(|e| HarnessError::Protocol(e.to_string()))?;
        let resp_line = serde_json::to_string(&self.server.handle(&req)).expect("response serializes");
        let resp: HarnessResponse =
            serde_json::from_str(&resp_line).map_err(|e| HarnessError::Protocol(e.to_string()))?;
        interpret(id, resp)
    }
}

type TargetFactory = Box<dyn Fn() -> NativeTarget + Send + Sync>;

/// Serves native targets regardless of the artifact, keyed by nothing. Used
/// for reference artifacts and offline tests.
pub struct NativeConnector {
    factory: TargetFactory,
}

impl NativeConnector {
    pub fn new(factory: impl Fn() -> NativeTarget + Send + Sync + 'static) -> Self {
        NativeConnector {
            factory: Box::new(factory),
        }
    }
}

impl HarnessConnector for NativeConnector {
    fn connect(&self, _path: &Path, _source: &str) -> Result<Box<dyn HarnessSession>, HarnessError> {
        Ok(Box::new(NativeSession::new((self.factory)())))
    }
}

/// Picks a connector per artifact hash, falling back to a default.
#[derive(Default)]
pub struct RoutingConnector {
    routes: HashMap<String, Arc<dyn HarnessConnector>>,
    fallback: Option<Arc<dyn HarnessConnector>>,
}

impl RoutingConnector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, source: &str, c: Arc<dyn HarnessConnector>) -> Self {
        self.routes.insert(sha256_hex(source.as_bytes()), c);
        self
    }

    pub fn fallback(mut self, c: Arc<dyn HarnessConnector>) -> Self {
        self.fallback = Some(c);
        self
    }
}

impl HarnessConnector for RoutingConnector {
    fn connect(&self, path: &Path, source: &str) -> Result<Box<dyn HarnessSession>, HarnessError> {
        match self.routes.get(&sha256_hex(source.as_bytes())).or(self.fallback.as_ref()) {
            Some(c) => c.connect(path, source),
            None => Err(HarnessError::Spawn("no harness route for artifact".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Adapters

fn harness_to_env(e: HarnessError) -> EnvError {
    match e {
        HarnessError::Remote(r) if r.kind == "ValueError" => EnvError::InvalidState(r.message),
        HarnessError::Remote(r) => EnvError::Raised {
            kind: r.kind,
            message: r.message,
        },
        other => EnvError::Harness(other.to_string()),
    }
}

/// A harness session viewed as a [`WorldModel`].
pub struct HarnessEnv {
    session: Box<dyn HarnessSession>,
    space: EnvSpace,
}

impl HarnessEnv {
    pub fn open(mut session: Box<dyn HarnessSession>) -> Result<Self, EnvError> {
        let v = session.request(HarnessOp::Spaces).map_err(harness_to_env)?;
        let space: EnvSpace =
            serde_json::from_value(v).map_err(|e| EnvError::Harness(format!("bad spaces payload: {e}")))?;
        Ok(HarnessEnv { session, space })
    }
}

fn parse_step(v: &Value) -> Result<StepOutcome, EnvError> {
    let observation = v
        .get("observation")
        .and_then(wire_to_array)
        .ok_or_else(|| EnvError::Harness("step result lacks observation".into()))?;
    let reward = v
        .get("reward")
        .and_then(wire_to_num)
        .ok_or_else(|| EnvError::Harness("step result lacks reward".into()))?;
    let done = v
        .get("done")
        .and_then(Value::as_bool)
        .ok_or_else(|| EnvError::Harness("step result lacks done".into()))?;
    Ok(StepOutcome {
        observation,
        reward,
        done,
    })
}

impl WorldModel for HarnessEnv {
    fn space(&self) -> EnvSpace {
        self.space.clone()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let v = self
            .session
            .request(HarnessOp::Reset { seed: Some(seed) })
            .map_err(harness_to_env)?;
        v.get("observation")
            .and_then(wire_to_array)
            .ok_or_else(|| EnvError::Harness("reset result lacks observation".into()))
    }

    fn set_state(&mut self, state: &[f64]) -> Result<(), EnvError> {
        let shape = self.space.observation_shape.clone();
        self.session
            .request(HarnessOp::SetState {
                state: array_to_wire(state, &shape),
            })
            .map(|_| ())
            .map_err(harness_to_env)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let v = self
            .session
            .request(HarnessOp::Step {
                action: action_to_wire(action),
            })
            .map_err(harness_to_env)?;
        parse_step(&v)
    }
}

fn harness_to_game(e: HarnessError) -> GameError {
    match e {
        HarnessError::Remote(r) => GameError::new(r.kind, r.message),
        other => GameError::new("HarnessError", other.to_string()),
    }
}

/// A harness session viewed as a [`TextGame`].
pub struct HarnessGame {
    session: Box<dyn HarnessSession>,
}

impl HarnessGame {
    pub fn new(session: Box<dyn HarnessSession>) -> Self {
        HarnessGame { session }
    }
}

impl TextGame for HarnessGame {
    fn init(&mut self) -> Result<String, GameError> {
        let v = self.session.request(HarnessOp::GameInit).map_err(harness_to_game)?;
        Ok(v.get("observation").and_then(Value::as_str).unwrap_or_default().to_string())
    }

    fn actions(&mut self) -> Result<Vec<String>, GameError> {
        let v = self.session.request(HarnessOp::GameActions).map_err(harness_to_game)?;
        serde_json::from_value(v.get("actions").cloned().unwrap_or(Value::Null))
            .map_err(|e| GameError::new("ProtocolError", e.to_string()))
    }

    fn step(&mut self, action: &str) -> Result<GameStep, GameError> {
        let v = self
            .session
            .request(HarnessOp::GameStep {
                action: action.to_string(),
            })
            .map_err(harness_to_game)?;
        Ok(GameStep {
            observation: v.get("observation").and_then(Value::as_str).unwrap_or_default().to_string(),
            score: v.get("score").and_then(wire_to_num).unwrap_or(0.0),
            reward: v.get("reward").and_then(wire_to_num).unwrap_or(0.0),
            done: v.get("done").and_then(Value::as_bool).unwrap_or(false),
            won: v.get("won").and_then(Value::as_bool).unwrap_or(false),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cwm::CliffWalking;
    use crate::textgame::PeaGarden;

    fn cliff() -> NativeSession {
        NativeSession::new(NativeTarget::Env(Box::new(CliffWalking::new())))
    }

    #[test]
    fn request_wire_format() {
        let r = HarnessRequest {
            id: 3,
            op: HarnessOp::Step { action: json!(1) },
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"id":3,"op":"step","action":1}"#);
        let r = HarnessRequest {
            id: 4,
            op: HarnessOp::Shutdown,
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"id":4,"op":"shutdown"}"#);
    }

    #[test]
    fn cliff_step_from_start() {
        let mut s = cliff();
        s.request(HarnessOp::Reset { seed: Some(0) }).unwrap();
        s.request(HarnessOp::SetState { state: json!([36]) }).unwrap();
        let v = s.request(HarnessOp::Step { action: json!(1) }).unwrap();
        assert_eq!(wire_to_array(&v["observation"]), Some(vec![36.0]));
        assert_eq!(wire_to_num(&v["reward"]), Some(-100.0));
        assert_eq!(v["done"], json!(false));
    }

    #[test]
    fn wrong_length_state_is_value_error() {
        let mut s = cliff();
        let e = s.request(HarnessOp::SetState { state: json!([1, 2]) }).unwrap_err();
        assert!(matches!(e, HarnessError::Remote(RemoteError { ref kind, .. }) if kind == "ValueError"));
    }

    #[test]
    fn serve_lines_totality() {
        let mut server = NativeServer::new(NativeTarget::Env(Box::new(CliffWalking::new())));
        let input = "{\"id\":1,\"op\":\"reset\"}\nnot json\n{\"id\":2,\"op\":\"step\",\"action\":0}\n{\"id\":3,\"op\":\"shutdown\"}\n{\"id\":4,\"op\":\"reset\"}\n";
        let mut out = Vec::new();
        server.serve_lines(input.as_bytes(), &mut out).unwrap();
        let resps: Vec<HarnessResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(resps.len(), 4);
        assert!(resps.iter().all(HarnessResponse::is_well_formed));
        assert_eq!(resps[1].error.as_ref().unwrap().kind, "ProtocolError");
        assert_eq!(resps[2].id, Some(2));
        assert!(resps[2].ok);
    }

    #[test]
    fn nonfinite_round_trip() {
        for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY, 1.5] {
            let back = wire_to_num(&num_to_wire(x)).unwrap();
            assert!(back == x || (x.is_nan() && back.is_nan()));
        }
        assert_eq!(wire_to_array(&json!(36)), Some(vec![36.0]));
        assert_eq!(wire_to_array(&json!([[1, 2], [3, "inf"]])).unwrap()[3], f64::INFINITY);
    }

    #[test]
    fn harness_env_matches_native() {
        let mut h = HarnessEnv::open(Box::new(cliff())).unwrap();
        let mut n = CliffWalking::new();
        assert_eq!(h.reset(0).unwrap(), n.reset(0).unwrap());
        for a in [0, 1, 1, 2, 3, 1, 2, 2] {
            assert_eq!(h.step(&Action::Discrete(a)).unwrap(), n.step(&Action::Discrete(a)).unwrap());
        }
    }

    #[test]
    fn harness_game_lists_take_pea() {
        let mut g = HarnessGame::new(Box::new(NativeSession::new(NativeTarget::Game(Box::new(PeaGarden::new())))));
        g.init().unwrap();
        assert!(g.actions().unwrap().contains(&"take pea".to_string()));
    }

    #[test]
    fn fixture_replays_by_hash() {
        let fx = FixtureConnector {
            sessions: vec![FixtureSession {
                artifact_sha256: sha256_hex(b"code"),
                responses: vec![
                    FixtureResponse { ok: true, result: Some(json!({"observation": 0})), error: None },
                    FixtureResponse {
                        ok: false,
                        result: None,
                        error: Some(RemoteError { kind: "KeyError".into(), message: "x".into(), traceback_tail: String::new() }),
                    },
                ],
            }],
        };
        let mut s = fx.connect(Path::new("a.py"), "code").unwrap();
        assert!(s.request(HarnessOp::Reset { seed: None }).is_ok());
        assert!(matches!(s.request(HarnessOp::Step { action: json!(0) }), Err(HarnessError::Remote(_))));
        assert!(matches!(s.request(HarnessOp::Step { action: json!(0) }), Err(HarnessError::Crash { .. })));
        assert!(fx.connect(Path::new("a.py"), "other").is_err());
    }

    #[test]
    fn subprocess_crash_and_cleanup() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("h.sh");
        std::fs::write(&script, "sleep 60 &\nread line\necho 'Traceback: boom' >&2\nexit 3\n").unwrap();
        let mut h = SubprocessHarness::spawn(
            &["sh".into(), script.to_string_lossy().into_owned()],
            Path::new("artifact.py"),
            dir.path(),
            Duration::from_secs(5),
        )
        .unwrap();
        let pgid = h.pid() as i32;
        match h.request(HarnessOp::Reset { seed: None }) {
            Err(HarnessError::Crash { log_tail, .. }) => assert!(log_tail.contains("boom")),
            other => panic!("unexpected {other:?}"),
        }
        drop(h);
        thread::sleep(Duration::from_millis(100));
        assert!(live_members(pgid).is_empty(), "process group survived");
    }

    /// Non-zombie processes in the group, read from /proc.
    pub(crate) fn live_members(pgid: i32) -> Vec<i32> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir("/proc").unwrap().flatten() {
            let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else { continue };
            // Fields after the parenthesized command: state ppid pgrp ...
            let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r.split_whitespace().collect::<Vec<_>>()) else {
                continue;
            };
            if rest.len() > 2 && rest[2] == pgid.to_string() && rest[0] != "Z" {
                out.push(entry.file_name().to_string_lossy().parse().unwrap_or(0));
            }
        }
        out
    }

    #[test]
    fn subprocess_id_mismatch_is_protocol_violation() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("h.sh");
        std::fs::write(&script, "read line\necho '{\"id\":99,\"ok\":true,\"result\":{}}'\nread line\n").unwrap();
        let mut h = SubprocessHarness::spawn(
            &["sh".into(), script.to_string_lossy().into_owned()],
            Path::new("a.py"),
            dir.path(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(matches!(h.request(HarnessOp::Spaces), Err(HarnessError::Protocol(_))));
    }
}
