use std::collections::{BTreeMap, VecDeque};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::game::{GameError, TextGame};
use crate::gateway::{ChatMessage, DecodingConfig, Gateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct CrawlConfig {
    pub max_depth: usize,
    pub max_nodes: usize,
    /// Children expanded per verb at each node.
    pub per_verb_cap: usize,
    pub sample_size: usize,
    /// Winnability step limit.
    pub horizon: usize,
    /// Judge votes per compliance question.
    pub votes: usize,
    pub seed: u64,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            max_depth: 4,
            max_nodes: 200,
            per_verb_cap: 3,
            sample_size: 16,
            horizon: 25,
            votes: 3,
            seed: 0,
        }
    }
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("max_depth", self.max_depth),
            ("max_nodes", self.max_nodes),
            ("per_verb_cap", self.per_verb_cap),
            ("sample_size", self.sample_size),
            ("horizon", self.horizon),
            ("votes", self.votes),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("{name} must be positive")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Technical {
    pub init: u8,
    pub possible_actions: u8,
    pub runnable: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Compliance {
    pub critical_objects: u8,
    pub critical_actions: u8,
    pub distractors: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GameScores {
    pub technical: Technical,
    pub compliance: Compliance,
    /// Automatic estimate from an agent playthrough, not a human judgment.
    pub winnable: u8,
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlPath {
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    /// First token of the last action.
    pub verb: String,
    pub error: bool,
}

impl CrawlPath {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (a, o) in self.actions.iter().zip(&self.observations) {
            s.push_str(&format!("> {a}\n{o}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlResult {
    pub init_ok: bool,
    pub actions_ok: bool,
    pub steps_ok: bool,
    pub init_observation: String,
    /// Leaves of the explored tree.
    pub paths: Vec<CrawlPath>,
    pub nodes: usize,
    pub root_has_no_actions: bool,
    pub errors: Vec<String>,
}

pub fn verb_of(action: &str) -> String {
    action.split_whitespace().next().unwrap_or("").to_lowercase()
}

fn replay(game: &mut dyn TextGame, prefix: &[String]) -> Result<(), GameError> {
    game.init()?;
    for a in prefix {
        game.step(a)?;
    }
    Ok(())
}

#[derive(Clone)]
struct Frontier {
    actions: Vec<String>,
    observations: Vec<String>,
    terminal: bool,
    error: bool,
}

impl Frontier {
    fn into_path(self) -> CrawlPath {
        CrawlPath {
            verb: self.actions.last().map(|a| verb_of(a)).unwrap_or_default(),
            actions: self.actions,
            observations: self.observations,
            error: self.error,
        }
    }
}

/// Breadth-first exploration by replaying action prefixes from a fresh
/// `init`. Step errors become observations and end that branch.
pub fn crawl(game: &mut dyn TextGame, cfg: &CrawlConfig) -> CrawlResult {
    let mut res = CrawlResult {
        init_ok: false,
        actions_ok: false,
        steps_ok: false,
        init_observation: String::new(),
        paths: Vec::new(),
        nodes: 0,
        root_has_no_actions: false,
        errors: Vec::new(),
    };
    match game.init() {
        Ok(o) => {
            res.init_ok = true;
            res.init_observation = o;
        }
        Err(e) => {
            res.errors.push(format!("init: {e}"));
            return res;
        }
    }
    res.actions_ok = true;
    res.steps_ok = true;
    let mut queue = VecDeque::from([Frontier {
        actions: Vec::new(),
        observations: Vec::new(),
        terminal: false,
        error: false,
    }]);
    let mut leaves = Vec::new();
    let mut budget_hit = false;
    while let Some(node) = queue.pop_front() {
        if budget_hit || node.terminal || node.error || node.actions.len() >= cfg.max_depth {
            leaves.push(node);
            continue;
        }
        let actions = match replay(game, &node.actions).and_then(|_| game.actions()) {
            Ok(a) => a,
            Err(e) => {
                res.actions_ok = false;
                res.errors.push(format!("actions after {:?}: {e}", node.actions));
                leaves.push(node);
                continue;
            }
        };
        if node.actions.is_empty() && actions.is_empty() {
            res.root_has_no_actions = true;
        }
        let mut per_verb: BTreeMap<String, usize> = BTreeMap::new();
        let mut expanded = false;
        for a in actions {
            let used = per_verb.entry(verb_of(&a)).or_insert(0);
            if *used >= cfg.per_verb_cap {
                continue;
            }
            if res.nodes >= cfg.max_nodes {
                budget_hit = true;
                break;
            }
            *used += 1;
            res.nodes += 1;
            let mut child = node.clone();
            match replay(game, &node.actions).and_then(|_| game.step(&a)) {
                Ok(s) => {
                    child.observations.push(s.observation);
                    child.terminal = s.done;
                }
                Err(e) => {
                    res.steps_ok = false;
                    res.errors.push(format!("step {a:?} after {:?}: {e}", node.actions));
                    child.observations.push(e.to_string());
                    child.error = true;
                }
            }
            child.actions.push(a);
            queue.push_back(child);
            expanded = true;
        }
        if !expanded && !node.actions.is_empty() {
            leaves.push(node);
        }
    }
    res.paths = leaves.into_iter().map(Frontier::into_path).collect();
    res
}

/// Gates in call order; a failed gate zeroes every later gate.
pub fn technical_validity(game: &mut dyn TextGame, cfg: &CrawlConfig) -> (Technical, CrawlResult) {
    let c = crawl(game, cfg);
    let init = u8::from(c.init_ok);
    let possible_actions = init & u8::from(c.actions_ok);
    let runnable = possible_actions & u8::from(c.steps_ok);
    (
        Technical {
            init,
            possible_actions,
            runnable,
        },
        c,
    )
}

/// Leaf paths of the bounded crawl.
pub fn crawl_paths(game: &mut dyn TextGame, cfg: &CrawlConfig) -> Vec<CrawlPath> {
    crawl(game, cfg).paths
}

/// Picks up to `k` indices, cycling over verb groups (in verb order) so that
/// small groups are represented. Order within a group is a seeded shuffle.
pub fn stratified_sample(paths: &[CrawlPath], k: usize, seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in paths.iter().enumerate() {
        groups.entry(p.verb.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<VecDeque<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g.into()
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < k && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if out.len() == k {
                break;
            }
            if let Some(i) = q.pop_front() {
                out.push(i);
            }
        }
    }
    out
}

/// Yes iff the first word of the reply is "yes" (case and punctuation
/// ignored). Anything else, including empty text, is No.
pub fn parse_verdict(reply: &str) -> bool {
    let first = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    first == "yes"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub path_index: usize,
    pub aligned: bool,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub fraction: f64,
    pub judgments: Vec<Judgment>,
}

pub const ALIGNMENT_HEADER: &str = "PHYSICAL ALIGNMENT";
pub const COMPLIANCE_HEADER: &str = "SPEC COMPLIANCE";
pub const PLAY_HEADER: &str = "PLAY GAME";

fn ask(judge: &Gateway, stage: &str, prompt: String) -> Result<String, String> {
    let msgs = [
        ChatMessage::system("You are a strict evaluator. Answer Yes or No first, then a brief rationale."),
        ChatMessage::user(prompt),
    ];
    judge
        .complete_for(stage, &msgs, &DecodingConfig::default(), &[])
        .map(|c| c.reply.content)
        .map_err(|e| e.to_string())
}

/// Fraction of a stratified sample of paths the judge accepts as physically
/// plausible for the task. Judge failures count as not aligned.
pub fn physical_alignment(paths: &[CrawlPath], task: &str, judge: &Gateway, cfg: &CrawlConfig) -> AlignmentReport {
    let picked = stratified_sample(paths, cfg.sample_size, cfg.seed);
    let mut judgments = Vec::new();
    for i in picked {
        let prompt = format!(
            "{ALIGNMENT_HEADER}\nTask:\n{task}\n\nTranscript:\n{}\nDoes every observation follow plausibly from the actions under common-sense physics and the task description? Answer Yes or No.",
            paths[i].render()
        );
        let (aligned, reply) = match ask(judge, "judge", prompt) {
            Ok(r) => (parse_verdict(&r), r),
            Err(e) => {
                warn!("alignment judge failed on path {i}: {e}");
                (false, format!("error: {e}"))
            }
        };
        judgments.push(Judgment {
            path_index: i,
            aligned,
            reply,
        });
    }
    let fraction = if judgments.is_empty() {
        0.0
    } else {
        judgments.iter().filter(|j| j.aligned).count() as f64 / judgments.len() as f64
    };
    AlignmentReport { fraction, judgments }
}

const COMPLIANCE_QUESTIONS: [(&str, &str); 3] = [
    (
        "CRITICAL OBJECTS",
        "Does the game implement every object the task description requires?",
    ),
    (
        "CRITICAL ACTIONS",
        "Does the game implement every action the task description requires?",
    ),
    (
        "DISTRACTORS",
        "Does the game include the distractor objects or actions the task description asks for?",
    ),
];

/// Three judged questions, each decided by a strict majority of `votes`
/// answers.
pub fn specification_compliance(game_source: &str, spec_text: &str, judge: &Gateway, votes: usize) -> Compliance {
    let mut bits = [0u8; 3];
    for (slot, (label, question)) in COMPLIANCE_QUESTIONS.iter().enumerate() {
        let prompt = format!(
            "{COMPLIANCE_HEADER}: {label}\nTask description:\n{spec_text}\n\nGame source:\n{game_source}\n\n{question} Answer Yes or No first, then a brief rationale."
        );
        let yes = (0..votes)
            .filter(|_| match ask(judge, "judge", prompt.clone()) {
                Ok(r) => parse_verdict(&r),
                Err(e) => {
                    warn!("compliance judge failed on {label}: {e}");
                    false
                }
            })
            .count();
        bits[slot] = u8::from(2 * yes > votes);
    }
    Compliance {
        critical_objects: bits[0],
        critical_actions: bits[1],
        distractors: bits[2],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayAttempt {
    pub won: bool,
    pub steps: usize,
    pub actions: Vec<String>,
    pub ended_by: String,
}

/// Text inside `<action>...</action>`, else the first non-empty line.
pub fn parse_action(reply: &str) -> Option<String> {
    if let (Some(s), Some(e)) = (reply.find("<action>"), reply.find("</action>")) {
        if s < e {
            let a = reply[s + "<action>".len()..e].trim();
            return (!a.is_empty()).then(|| a.to_string());
        }
    }
    reply.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string)
}

/// Lets an agent play for at most `cfg.horizon` steps.
pub fn winnability(game: &mut dyn TextGame, agent: &Gateway, cfg: &CrawlConfig) -> PlayAttempt {
    let mut attempt = PlayAttempt {
        won: false,
        steps: 0,
        actions: Vec::new(),
        ended_by: String::new(),
    };
    let mut obs = match game.init() {
        Ok(o) => o,
        Err(e) => {
            attempt.ended_by = format!("init failed: {e}");
            return attempt;
        }
    };
    let mut messages = vec![ChatMessage::system(
        "You are playing a text game. Reply with the next command as <action>command</action>.",
    )];
    for t in 0..cfg.horizon {
        let valid = match game.actions() {
            Ok(a) => a,
            Err(e) => {
                attempt.ended_by = format!("actions failed: {e}");
                return attempt;
            }
        };
        messages.push(ChatMessage::user(format!(
            "{PLAY_HEADER} step {}\nObservation: {obs}\nValid actions: {}",
            t + 1,
            valid.join(" | ")
        )));
        let reply = match agent.complete_for("winnability", &messages, &DecodingConfig::default(), &[]) {
            Ok(c) => c.reply.content,
            Err(e) => {
                attempt.ended_by = format!("agent failed: {e}");
                return attempt;
            }
        };
        messages.push(ChatMessage::assistant(reply.clone()));
        let Some(action) = parse_action(&reply) else {
            attempt.ended_by = "agent gave no action".into();
            return attempt;
        };
        attempt.steps += 1;
        attempt.actions.push(action.clone());
        match game.step(&action) {
            Ok(s) => {
                if s.won {
                    attempt.won = true;
                    attempt.ended_by = "won".into();
                    return attempt;
                }
                if s.done {
                    attempt.ended_by = "episode ended without a win".into();
                    return attempt;
                }
                obs = s.observation;
            }
            Err(e) => {
                attempt.ended_by = format!("step failed: {e}");
                return attempt;
            }
        }
    }
    attempt.ended_by = "horizon reached".into();
    attempt
}

/// All four metric families. Later gates are skipped when init fails.
pub fn evaluate_game(
    game: &mut dyn TextGame,
    game_source: &str,
    spec_text: &str,
    judge: &Gateway,
    agent: &Gateway,
    cfg: &CrawlConfig,
) -> GameScores {
    let (technical, crawl) = technical_validity(game, cfg);
    let compliance = specification_compliance(game_source, spec_text, judge, cfg.votes);
    if technical.init == 0 {
        return GameScores {
            technical,
            compliance,
            winnable: 0,
            alignment: 0.0,
        };
    }
    let alignment = physical_alignment(&crawl.paths, spec_text, judge, cfg).fraction;
    let winnable = u8::from(winnability(game, agent, cfg).won);
    GameScores {
        technical,
        compliance,
        winnable,
        alignment,
    }
}
