//! Stage I: question extraction and bounded research rounds.

use crate::agent::{run_agent, AgentRole, RoleName, Transcript};
use crate::gateway::{ChatMessage, Gateway};
use crate::tools::Toolbelt;
use crate::types::{head_utf8, Confidence, EvidenceEntry, ResearchReport, TaskSpec};

use super::prompts;
use super::PipelineConfig;

const SNIPPET_BYTES: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ResearchOutcome {
    pub report: ResearchReport,
    /// One transcript per research round, in order.
    pub transcripts: Vec<Transcript>,
    pub faults: Vec<String>,
}

/// Strips list markers ("-", "*", "1.", "2)") from a line.
fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t
}

pub fn parse_questions(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(strip_bullet)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// `None` when the reply declines to pick a question.
pub fn parse_selection(reply: &str) -> Option<String> {
    let first = reply.lines().map(strip_bullet).find(|l| !l.is_empty())?;
    if first.eq_ignore_ascii_case(prompts::NO_QUESTION) || first.eq_ignore_ascii_case("none.") {
        return None;
    }
    Some(first.to_string())
}

fn ask(gateway: &Gateway, cfg: &PipelineConfig, system: &str, prompt: String) -> Result<String, String> {
    let messages = [ChatMessage::system(system), ChatMessage::user(prompt)];
    gateway
        .complete_for(RoleName::DeepResearcher.as_str(), &messages, &cfg.decoding, &[])
        .map(|c| c.reply.content)
        .map_err(|e| e.to_string())
}

/// Runs up to `task.research_rounds` rounds. With zero rounds nothing is
/// asked and the report restates the task.
pub fn knowledge_synthesis(task: &TaskSpec, gateway: &Gateway, tools: &mut Toolbelt, cfg: &PipelineConfig) -> ResearchOutcome {
    let mut out = ResearchOutcome {
        report: ResearchReport {
            report_text: prompts::passthrough_report(task),
            ..Default::default()
        },
        transcripts: Vec::new(),
        faults: Vec::new(),
    };
    if task.research_rounds == 0 {
        return out;
    }

    match ask(gateway, cfg, prompts::RESEARCHER_SYSTEM, prompts::extract_questions(task)) {
        Ok(reply) => out.report.questions = parse_questions(&reply),
        Err(e) => out.faults.push(format!("extract questions: {e}")),
    }
    let mut open = out.report.questions.clone();
    let mut role = AgentRole::new(RoleName::DeepResearcher, prompts::RESEARCHER_SYSTEM);
    role.max_steps = cfg.max_steps;

    for round in 1..=task.research_rounds {
        let select = prompts::select_question(task, &open, &out.report.report_text);
        let question = match ask(gateway, cfg, prompts::RESEARCHER_SYSTEM, select) {
            Ok(reply) => match parse_selection(&reply) {
                Some(q) => q,
                None => break,
            },
            Err(e) => {
                out.faults.push(format!("round {round}: select question: {e}"));
                break;
            }
        };
        out.report.rounds_used = round;
        open.retain(|q| q != &question);
        tools.take_opened();
        tools.take_search_hits();

        let run = run_agent(&role, &prompts::research_question(task, &question), gateway, tools, &cfg.decoding);
        let hits = tools.take_search_hits();
        for page in tools.take_opened() {
            let title = hits
                .iter()
                .find(|h| h.url == page.url)
                .map(|h| h.title.clone())
                .unwrap_or_else(|| page.url.clone());
            out.report.evidence_log.push(EvidenceEntry {
                title,
                url: page.url,
                retrieved_at: cfg.tools.clock.now(),
                snippet: head_utf8(page.text.trim(), SNIPPET_BYTES).to_string(),
                confidence: Confidence::Medium,
            });
        }
        match run {
            Ok(run) => {
                let summary = run.final_output.unwrap_or(run.last_reply);
                out.report
                    .report_text
                    .push_str(&format!("\n\n### {question}\n{}", summary.trim()));
                out.transcripts.push(run.transcript);
            }
            Err(e) => out.faults.push(format!("round {round}: {e}")),
        }
    }
    out
}
