//! Benchmark evaluation: answer accuracy, tool selection and code
//! executability over a set of tasks.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, EpisodeError};
use crate::calls::extract_tool_calls;
use crate::gateway::{ChatRequest, DecodingParams, Gateway, Message};
use crate::model::{Task, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_set: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task: Task,
    pub gold: Gold,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tasks to evaluate")]
    EmptyTaskSet,
    #[error("line {line}: {message}")]
    TaskFile { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Read a benchmark file: one [`EvalTask`] per line.
pub fn load_tasks(path: &Path) -> Result<Vec<EvalTask>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: EvalTask = serde_json::from_str(line)
            .map_err(|e| EvalError::TaskFile { line: i + 1, message: e.to_string() })?;
        if t.gold.answer.trim().is_empty() {
            return Err(EvalError::TaskFile { line: i + 1, message: "gold answer is empty".into() });
        }
        out.push(t);
    }
    Ok(out)
}

pub trait AgentRunner: Sync {
    fn run(&self, task: &Task) -> Result<Trajectory, EpisodeError>;
}

impl AgentRunner for Agent {
    fn run(&self, task: &Task) -> Result<Trajectory, EpisodeError> {
        Agent::run(self, task)
    }
}

impl<F> AgentRunner for F
where
    F: Fn(&Task) -> Result<Trajectory, EpisodeError> + Sync,
{
    fn run(&self, task: &Task) -> Result<Trajectory, EpisodeError> {
        self(task)
    }
}

pub enum Judge<'a> {
    /// Normalized exact match with numeric tolerance.
    Exact,
    /// Ask a model whether the prediction matches the gold answer.
    Model { gateway: &'a Gateway, model_id: String },
}

const NUMERIC_TOLERANCE: f64 = 1e-6;

fn normalize(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(['.', ',', '!', '?', ';', ':']).trim().to_owned()
}

fn as_number(s: &str) -> Option<f64> {
    let cleaned: String = s.chars().filter(|c| *c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|f| f.is_finite())
}

fn exact_match(pred: &str, gold: &str) -> bool {
    let (p, g) = (normalize(pred), normalize(gold));
    match (as_number(&p), as_number(&g)) {
        (Some(a), Some(b)) => (a - b).abs() <= NUMERIC_TOLERANCE,
        _ => p == g,
    }
}

pub fn score_answer(pred: &str, gold: &str, judge: &Judge<'_>) -> bool {
    match judge {
        Judge::Exact => exact_match(pred, gold),
        Judge::Model { gateway, model_id } => {
            if exact_match(pred, gold) {
                return true;
            }
            let req = ChatRequest::new(
                model_id,
                vec![
                    Message::system(
                        "You grade answers. Decide whether the predicted answer means the same as the gold answer. Reply with exactly 'yes' or 'no'.",
                    ),
                    Message::user(format!("Gold answer: {gold}\nPredicted answer: {pred}")),
                ],
                DecodingParams::STABLE,
            );
            match gateway.complete(&req) {
                Ok(reply) => normalize(&reply) == "yes",
                Err(e) => {
                    tracing::warn!(error = %e, "judge call failed; scoring as incorrect");
                    false
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tasks: usize,
    pub answers_correct: usize,
    pub tool_scored: usize,
    pub tool_correct: usize,
    pub code_executable: usize,
    pub episode_errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub tasks: usize,
    pub ans_acc: f64,
}

/// Percentages are rounded to two decimals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ans_acc: f64,
    /// Absent when no task has a gold tool set.
    pub tool_acc: Option<f64>,
    pub code_exec: f64,
    pub per_level: BTreeMap<u8, LevelMetrics>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub prediction: Option<String>,
    pub answer_correct: bool,
    pub tool_correct: Option<bool>,
    pub code_executable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
}

pub fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    (10_000.0 * num as f64 / den as f64).round() / 100.0
}

/// True when the episode ran at least one step and every step executed cleanly.
pub fn code_executable(traj: &Trajectory) -> bool {
    !traj.steps.is_empty() && traj.all_steps_ok()
}

/// Gold tools as a multiset contained in the tools called by the episode.
pub fn tools_cover<S: AsRef<str>>(traj: &Trajectory, gold: &[S], registry: &[String]) -> bool {
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    for step in &traj.steps {
        for t in extract_tool_calls(&step.code, registry) {
            *used.entry(t).or_default() += 1;
        }
    }
    let mut need: BTreeMap<&str, usize> = BTreeMap::new();
    for g in gold {
        *need.entry(g.as_ref()).or_default() += 1;
    }
    need.into_iter().all(|(t, n)| used.get(t).copied().unwrap_or(0) >= n)
}

fn score_one(t: &EvalTask, outcome: Result<Trajectory, EpisodeError>, judge: &Judge<'_>, registry: &[String]) -> TaskResult {
    match outcome {
        Ok(traj) => {
            let prediction = traj.final_answer.clone();
            TaskResult {
                task_id: t.task.id.clone(),
                answer_correct: prediction.as_deref().is_some_and(|p| score_answer(p, &t.gold.answer, judge)),
                tool_correct: t.gold.tool_set.as_ref().map(|g| tools_cover(&traj, g, registry)),
                code_executable: code_executable(&traj),
                prediction,
                error: None,
                trajectory: Some(traj),
            }
        }
        Err(e) => TaskResult {
            task_id: t.task.id.clone(),
            prediction: None,
            answer_correct: false,
            tool_correct: t.gold.tool_set.as_ref().map(|_| false),
            code_executable: false,
            error: Some(e.to_string()),
            trajectory: None,
        },
    }
}

/// Reduce per-task results; order does not matter.
pub fn aggregate(tasks: &[EvalTask], results: &[TaskResult]) -> Metrics {
    let mut c = Counts { tasks: results.len(), ..Default::default() };
    let mut levels: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for (t, r) in tasks.iter().zip(results) {
        c.answers_correct += r.answer_correct as usize;
        c.code_executable += r.code_executable as usize;
        c.episode_errors += r.error.is_some() as usize;
        if let Some(ok) = r.tool_correct {
            c.tool_scored += 1;
            c.tool_correct += ok as usize;
        }
        if let Some(level) = t.gold.level {
            let e = levels.entry(level).or_default();
            e.0 += r.answer_correct as usize;
            e.1 += 1;
        }
    }
    Metrics {
        ans_acc: percent(c.answers_correct, c.tasks),
        tool_acc: (c.tool_scored > 0).then(|| percent(c.tool_correct, c.tool_scored)),
        code_exec: percent(c.code_executable, c.tasks),
        per_level: levels
            .into_iter()
            .map(|(l, (ok, n))| (l, LevelMetrics { tasks: n, ans_acc: percent(ok, n) }))
            .collect(),
        counts: c,
    }
}

/// Run every task through `runner` (up to `parallel` at once) and score it.
pub fn evaluate(
    runner: &dyn AgentRunner,
    tasks: &[EvalTask],
    judge: &Judge<'_>,
    registry: &[String],
    parallel: usize,
) -> Result<(Metrics, Vec<TaskResult>), EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyTaskSet);
    }
    let slots: Vec<Mutex<Option<TaskResult>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let judge_ref = &judge;
    std::thread::scope(|s| {
        for _ in 0..parallel.clamp(1, tasks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(t) = tasks.get(i) else { break };
                let r = score_one(t, runner.run(&t.task), judge_ref, registry);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let results: Vec<TaskResult> = slots.into_iter().map(|m| m.into_inner().unwrap().expect("every task scored")).collect();
    Ok((aggregate(tasks, &results), results))
}

/// Aligned plain-text rendering of `m`.
pub fn render_table(m: &Metrics) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("AnsAcc".into(), format!("{:.2}", m.ans_acc)),
        ("ToolAcc".into(), m.tool_acc.map_or("n/a".into(), |v| format!("{v:.2}"))),
        ("CodeExec".into(), format!("{:.2}", m.code_exec)),
    ];
    for (level, lm) in &m.per_level {
        rows.push((format!("AnsAcc level {level}"), format!("{:.2}", lm.ans_acc)));
    }
    rows.push(("tasks".into(), m.counts.tasks.to_string()));
    rows.push(("episode errors".into(), m.counts.episode_errors.to_string()));
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let vw = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<w$}  {v:>vw$}\n"));
    }
    out
}
