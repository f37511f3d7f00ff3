//! Prompt text for every stage. Each user prompt starts with an uppercase
//! header so scripted gateways can match on it.

use crate::types::{Representation, TaskSpec};

pub const EXTRACT_HEADER: &str = "EXTRACT QUESTIONS";
pub const SELECT_HEADER: &str = "SELECT QUESTION";
pub const RESEARCH_HEADER: &str = "RESEARCH QUESTION";
pub const DEVELOP_HEADER: &str = "DEVELOP";
pub const UNIT_HEADER: &str = "UNIT TEST";
pub const SIMULATION_HEADER: &str = "SIMULATION TEST";

/// Reply to the select prompt that ends research early.
pub const NO_QUESTION: &str = "NONE";

pub const RESEARCHER_SYSTEM: &str = "You are a research assistant preparing a world-model specification for implementation. \
Look for authoritative descriptions of the system: rules, state variables, action effects, rewards and termination. \
Search, open at least two trustworthy pages, and finish with a short factual summary that cites the URLs you used.";

pub const DEVELOPER_SYSTEM: &str = "You implement world models as a single self-contained file. \
Read the task, the research report and any test feedback, fix every reported problem, \
and return the complete file inside the requested final block. Do not omit code.";

pub const UNIT_TESTER_SYSTEM: &str = "You write pytest suites for generated world models. \
Create exactly one test file, tests/test_env.py, that imports the artifact from the working directory \
and checks its interface, value ranges and documented transitions. You may run it to check that it collects. \
Finish with a JSON object {\"analysis\": ..., \"suggest_fix\": ...} inside <final> tags.";

pub const SIMULATION_TESTER_SYSTEM: &str = "You play-test generated world models. \
Call play_env exactly once, read the interaction log, and decide whether the model behaves as the task describes. \
A run fails on any exception, any non-finite number, or any transition that contradicts the task; \
numbers within 1e-3 (absolute or relative) of the expected value count as matching. \
Finish with a JSON object {\"success\": true|false, \"analysis\": ..., \"suggest_fix\": ...} inside <final> tags.";

fn interface_contract(rep: Representation) -> &'static str {
    match rep {
        Representation::CodeEnv => "Define class Environment with reset(seed=None) -> observation, \
set_state(state) and step(action) -> (observation, reward, done). Observations are flat numeric arrays.",
        Representation::TextGame => "Define class TextGame with init() -> str, actions() -> list[str] \
and step(action) -> dict(observation, score, reward, done, won).",
        Representation::PddlDomain => "Write one PDDL domain using :strips, :typing, :negative-preconditions \
and :equality only.",
    }
}

fn fence_lang(rep: Representation) -> &'static str {
    match rep {
        Representation::PddlDomain => "pddl",
        _ => "python",
    }
}

/// Restatement of the task used as the report when no research runs.
pub fn passthrough_report(task: &TaskSpec) -> String {
    format!("Task specification (no external research):\n{}", task.description)
}

pub fn extract_questions(task: &TaskSpec) -> String {
    format!(
        "{EXTRACT_HEADER}\nList the open questions that must be answered before this world model can be \
implemented faithfully, one per line.\n\n## Task\n{}",
        task.description
    )
}

pub fn select_question(task: &TaskSpec, open: &[String], report: &str) -> String {
    let list: Vec<String> = open.iter().map(|q| format!("- {q}")).collect();
    format!(
        "{SELECT_HEADER}\nPick the single most useful open question, or reply {NO_QUESTION} if the report already \
covers the task.\n\n## Task\n{}\n\n## Open questions\n{}\n\n## Report so far\n{report}",
        task.description,
        list.join("\n")
    )
}

pub fn research_question(task: &TaskSpec, question: &str) -> String {
    format!("{RESEARCH_HEADER}: {question}\n\n## Task\n{}", task.description)
}

pub fn develop(task: &TaskSpec, report: &str, feedback: &str, turn: u32, entrypoint: &str) -> String {
    let lang = fence_lang(task.representation);
    let feedback = if feedback.is_empty() { "(none)" } else { feedback };
    format!(
        "{DEVELOP_HEADER} (turn {turn} of {})\n\n## Task\n{}\n\n## Interface\n{}\n\n## Research report\n{report}\n\n\
## Feedback from the previous turn\n{feedback}\n\n## Output\nReturn exactly:\n<final><code_file_path>{entrypoint}</code_file_path>\
<entrypoint_code>```{lang}\n...\n```</entrypoint_code></final>",
        task.turn_budget,
        task.description,
        interface_contract(task.representation),
    )
}

pub fn unit_test(task: &TaskSpec, turn: u32, entrypoint: &str) -> String {
    format!(
        "{UNIT_HEADER} (turn {turn})\nThe artifact under test is {entrypoint} in the working directory. \
Write tests/test_env.py for it.\n\n## Task\n{}\n\n## Interface\n{}",
        task.description,
        interface_contract(task.representation)
    )
}

pub fn simulation_test(task: &TaskSpec, turn: u32, entrypoint: &str) -> String {
    format!(
        "{SIMULATION_HEADER} (turn {turn})\nPlay {entrypoint} with play_env and judge it against the task.\n\n## Task\n{}",
        task.description
    )
}
