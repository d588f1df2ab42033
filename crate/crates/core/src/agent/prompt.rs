use thiserror::Error;

use super::parse::render_step;
use super::EpisodeConfig;
use crate::gateway::{ChatRequest, Message};
use crate::model::{Step, Task};
use crate::tools::{render_tool_docs, ToolRegistry};

pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../../assets/agent_system_prompt.txt");
const DEFAULT_EXAMPLES: &str = include_str!("../../assets/agent_examples.txt");

pub const OBSERVATION_PREFIX: &str = "Observation:\n";
pub const OBSERVATION_ELIDED: &str = "[observation elided to fit the context window]";
pub const STEP_ELIDED: &str = "[earlier step elided to fit the context window]";

pub fn default_examples() -> Vec<String> {
    DEFAULT_EXAMPLES.split("\n---\n").map(|s| s.trim().to_owned()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenEstimator {
    /// One token per four characters, rounded up.
    #[default]
    CharsDiv4,
    /// One token per character.
    PerChar,
}

impl TokenEstimator {
    pub fn estimate(self, text: &str) -> usize {
        let chars = text.chars().count();
        match self {
            TokenEstimator::CharsDiv4 => chars.div_ceil(4),
            TokenEstimator::PerChar => chars,
        }
    }

    pub fn estimate_messages(self, messages: &[Message]) -> usize {
        messages.iter().map(|m| self.estimate(&m.content)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt needs {needed} tokens even after elision; budget is {budget}")]
pub struct PromptOverflow {
    pub needed: usize,
    pub budget: usize,
}

pub fn render_system_prompt(cfg: &EpisodeConfig, registry: &ToolRegistry) -> String {
    let imports = cfg.authorized_imports.iter().map(|m| format!("'{m}'")).collect::<Vec<_>>().join(", ");
    cfg.system_prompt_template
        .replace("{{IN_CONTEXT_EXAMPLES}}", &cfg.in_context_examples.join("\n\n---\n\n"))
        .replace("{{TOOL_SET}}", render_tool_docs(registry).trim_end())
        .replace("{{AUTHORIZED_IMPORTS}}", &format!("[{imports}]"))
}

pub fn render_task(task: &Task) -> String {
    let mut out = format!("Task: {}", task.query);
    if !task.files.is_empty() {
        out.push_str("\nAttached files:");
        for f in &task.files {
            out.push_str(&format!("\n- {} ({})", f.path, f.kind));
        }
    }
    out
}

pub fn render_observation(observation: &str) -> String {
    format!("{OBSERVATION_PREFIX}{observation}")
}

/// The full conversation for `steps` with nothing elided.
pub fn render_conversation(task: &Task, steps: &[Step], cfg: &EpisodeConfig, registry: &ToolRegistry) -> Vec<Message> {
    let mut messages = vec![Message::system(render_system_prompt(cfg, registry)), Message::user(render_task(task))];
    for step in steps {
        messages.push(Message::assistant(render_step(&step.thought, &step.code)));
        messages.push(Message::user(render_observation(&step.observation)));
    }
    messages
}

/// Build the request for the next step.
///
/// When the estimate exceeds the budget, observations are elided oldest
/// first, then the thought/code of steps older than the last two. Every step
/// keeps its pair of messages so history order and length are preserved.
pub fn build_prompt(
    task: &Task,
    history: &[Step],
    cfg: &EpisodeConfig,
    registry: &ToolRegistry,
) -> Result<ChatRequest, PromptOverflow> {
    let mut messages = render_conversation(task, history, cfg, registry);
    let est = cfg.token_estimator;
    let budget = cfg.context_token_budget;
    let mut total = est.estimate_messages(&messages);

    let elide = |messages: &mut Vec<Message>, idx: usize, replacement: &str, total: &mut usize| {
        let old = est.estimate(&messages[idx].content);
        let new = est.estimate(replacement);
        if new < old {
            messages[idx].content = replacement.to_owned();
            *total = *total - old + new;
        }
    };

    let elided_obs = render_observation(OBSERVATION_ELIDED);
    for i in 0..history.len() {
        if total <= budget {
            break;
        }
        elide(&mut messages, 3 + 2 * i, &elided_obs, &mut total);
    }
    let elided_step = render_step(STEP_ELIDED, "pass");
    for i in 0..history.len().saturating_sub(2) {
        if total <= budget {
            break;
        }
        elide(&mut messages, 2 + 2 * i, &elided_step, &mut total);
    }
    if total > budget {
        return Err(PromptOverflow { needed: total, budget });
    }

    let mut req = ChatRequest::new(&cfg.model_id, messages, cfg.params);
    req.stop_sequences = cfg.stop_sequences.clone();
    Ok(req)
}
