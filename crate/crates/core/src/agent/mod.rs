//! ReAct-style code agent: prompt assembly, step parsing and the episode loop.

pub mod parse;
pub mod prompt;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_step, render_step, ParseError, ParsedStep};
pub use prompt::{build_prompt, PromptOverflow, TokenEstimator};

use crate::exec::protocol::ExecResult;
use crate::exec::{stage_file, ExecError, Session, SessionFactory, DEFAULT_ALLOWED_IMPORTS};
use crate::gateway::{DecodingParams, Gateway, GatewayError, Message};
use crate::model::{truncate_observation, Step, Task, Termination, Trajectory};
use crate::tools::ToolHost;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub context_token_budget: usize,
    pub observation_char_cap: usize,
    pub parse_retries: u32,
    pub model_id: String,
    pub params: DecodingParams,
    pub stop_sequences: Vec<String>,
    pub token_estimator: TokenEstimator,
    pub authorized_imports: Vec<String>,
    pub system_prompt_template: String,
    pub in_context_examples: Vec<String>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 8,
            context_token_budget: 10240,
            observation_char_cap: 8192,
            parse_retries: 2,
            model_id: "gpt-4o-mini".into(),
            params: DecodingParams::STABLE,
            stop_sequences: vec!["Observation:".into()],
            token_estimator: TokenEstimator::CharsDiv4,
            authorized_imports: DEFAULT_ALLOWED_IMPORTS.iter().map(|s| s.to_string()).collect(),
            system_prompt_template: prompt::DEFAULT_SYSTEM_PROMPT.to_owned(),
            in_context_examples: prompt::default_examples(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if self.context_token_budget == 0 {
            return Err("context_token_budget must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    PromptOverflow(#[from] PromptOverflow),
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(#[from] ExecError),
}

/// Observation text for one execution: stdout, then the error if any.
pub fn format_observation(result: &ExecResult) -> String {
    let mut out = result.stdout.clone();
    if let Some(err) = &result.error {
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&format!("{}: {}", err.kind, err.message));
    }
    out
}

/// Copy every task file from `root` into the session at the same relative path.
pub fn stage_task_files(session: &dyn Session, task: &Task, root: &Path) -> std::io::Result<()> {
    for f in &task.files {
        stage_file(session, &root.join(&f.path), &f.path)?;
    }
    Ok(())
}

fn retry_note(err: ParseError) -> String {
    format!(
        "Error: {err}. Reply with a 'Thought:' sequence, then 'Code:' followed by a ```py fenced block ending with '```<end_action>'."
    )
}

/// Run one episode: ask for a step, execute its code, feed back the
/// observation, until `final_answer` is called or `max_steps` is reached.
///
/// Execution errors become observations and the loop continues. A reply
/// that still fails to parse after `parse_retries` retries ends the episode
/// with [`Termination::ModelError`].
pub fn run_episode(
    gateway: &Gateway,
    task: &Task,
    tools: &dyn ToolHost,
    session: &mut dyn Session,
    cfg: &EpisodeConfig,
) -> Result<Trajectory, EpisodeError> {
    cfg.validate().map_err(EpisodeError::Config)?;
    let mut steps: Vec<Step> = Vec::new();
    let end = |steps: Vec<Step>, terminated_by, final_answer| Trajectory { steps, final_answer, terminated_by };

    for index in 1..=cfg.max_steps {
        let mut req = build_prompt(task, &steps, cfg, tools.registry())?;
        let mut parsed = None;
        for attempt in 0..=cfg.parse_retries {
            let reply = gateway.complete(&req)?;
            match parse_step(&reply) {
                Ok(p) => {
                    parsed = Some(p);
                    break;
                }
                Err(e) => {
                    tracing::debug!(task = %task.id, step = index, attempt, error = %e, "unparsable model reply");
                    req.messages.push(Message::assistant(reply));
                    req.messages.push(Message::user(retry_note(e)));
                }
            }
        }
        let Some(ParsedStep { thought, code }) = parsed else {
            return Ok(end(steps, Termination::ModelError, None));
        };

        let outcome = match session.execute(&code, tools) {
            Ok(o) => o,
            Err(ExecError::SessionDead(why)) if !steps.is_empty() => {
                tracing::warn!(task = %task.id, step = index, %why, "session died mid-episode");
                return Ok(end(steps, Termination::ExecFailure, None));
            }
            Err(e) => return Err(e.into()),
        };
        let observation = truncate_observation(&format_observation(&outcome.result), cfg.observation_char_cap);
        steps.push(Step {
            index,
            thought,
            code,
            observation,
            exec_ok: outcome.result.ok(),
            duration_ms: outcome.result.duration_ms,
        });
        if let Some(answer) = outcome.final_answer {
            return Ok(end(steps, Termination::FinalAnswer, Some(answer)));
        }
    }
    Ok(end(steps, Termination::StepLimit, None))
}

/// Everything needed to run episodes: each call opens a fresh session,
/// stages the task files and runs the loop.
#[derive(Clone)]
pub struct Agent {
    pub gateway: Arc<Gateway>,
    pub tools: Arc<dyn ToolHost>,
    pub sessions: Arc<dyn SessionFactory>,
    pub cfg: EpisodeConfig,
    /// Directory task file paths are relative to.
    pub files_root: Option<PathBuf>,
}

impl Agent {
    pub fn run(&self, task: &Task) -> Result<Trajectory, EpisodeError> {
        let mut session = self.sessions.open()?;
        if let Some(root) = &self.files_root {
            stage_task_files(session.as_ref(), task, root).map_err(ExecError::from)?;
        }
        run_episode(&self.gateway, task, self.tools.as_ref(), session.as_mut(), &self.cfg)
    }
}
