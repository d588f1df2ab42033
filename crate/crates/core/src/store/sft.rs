use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::parse::{parse_step, render_step, ParsedStep};
use crate::agent::prompt::render_conversation;
use crate::agent::EpisodeConfig;
use crate::gateway::{ImageAttachment, Message};
use crate::model::DataPoint;
use crate::tools::ToolRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftLayout {
    /// One sample per episode with every step labeled.
    #[default]
    Episode,
    /// One sample per step, labeling only that step.
    PerStep,
}

/// Trained character range `[start, end)` within `messages[message].content`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub message: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub messages: Vec<Message>,
    pub label_spans: Vec<LabelSpan>,
}

impl SftSample {
    /// Text covered by `span`.
    pub fn span_text(&self, span: &LabelSpan) -> String {
        self.messages[span.message].content.chars().skip(span.start).take(span.end - span.start).collect()
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("datapoint {id} is not admitted")]
    NotAdmitted { id: String },
    #[error("datapoint {id} step {step}: re-rendered step does not parse back to the stored thought/code")]
    RenderMismatch { id: String, step: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Render each admitted datapoint into the conversation the agent would
/// have seen and mark the thought/code of every step as trainable.
/// Observations and the final answer are context only.
pub fn export_sft(
    dataset: &[DataPoint],
    cfg: &EpisodeConfig,
    registry: &ToolRegistry,
    layout: SftLayout,
) -> Result<Vec<SftSample>, ExportError> {
    let mut out = Vec::new();
    for dp in dataset {
        let id = dp.task.id.clone();
        if !dp.verdicts.admitted() {
            return Err(ExportError::NotAdmitted { id });
        }
        for step in &dp.trajectory.steps {
            let back = parse_step(&render_step(&step.thought, &step.code));
            let want = ParsedStep { thought: step.thought.clone(), code: step.code.clone() };
            if back.as_ref() != Ok(&want) {
                return Err(ExportError::RenderMismatch { id, step: step.index });
            }
        }

        let mut messages = render_conversation(&dp.task, &dp.trajectory.steps, cfg, registry);
        let images: Vec<ImageAttachment> = dp
            .task
            .files
            .iter()
            .filter(|f| f.kind.is_image())
            .map(|f| ImageAttachment { path: f.path.clone(), digest: f.content_digest.clone() })
            .collect();
        messages[1].images = images;
        let full_span = |idx: usize, messages: &[Message]| LabelSpan {
            message: idx,
            start: 0,
            end: messages[idx].content.chars().count(),
        };

        match layout {
            SftLayout::Episode => {
                let label_spans = (0..dp.trajectory.steps.len()).map(|i| full_span(2 + 2 * i, &messages)).collect();
                if let Some(answer) = &dp.trajectory.final_answer {
                    messages.push(Message::assistant(answer.clone()));
                }
                out.push(SftSample { id, messages, label_spans });
            }
            SftLayout::PerStep => {
                for i in 0..dp.trajectory.steps.len() {
                    let msgs = messages[..3 + 2 * i].to_vec();
                    let span = full_span(2 + 2 * i, &msgs);
                    out.push(SftSample { id: format!("{id}#{}", i + 1), messages: msgs, label_spans: vec![span] });
                }
            }
        }
    }
    Ok(out)
}

pub fn write_sft(path: &Path, samples: &[SftSample]) -> std::io::Result<()> {
    let mut buf = String::new();
    for s in samples {
        buf.push_str(&serde_json::to_string(s).expect("samples serialize"));
        buf.push('\n');
    }
    std::fs::write(path, buf)
}
