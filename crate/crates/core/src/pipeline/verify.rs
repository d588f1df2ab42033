use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::json::extract_json;
use super::prompts::{
    fill, DOMAIN_TAG, VERIFY_QUERY_FILE, VERIFY_QUERY_FILE_USER, VERIFY_TRAJECTORY, VERIFY_TRAJECTORY_USER,
};
use super::StageFailure;
use crate::agent::prompt::render_observation;
use crate::agent::render_step;
use crate::gateway::{ChatRequest, DecodingParams, Gateway, ImageAttachment, Message};
use crate::model::{DomainTag, Task, Trajectory, Verdict};
use crate::tools::{render_tool_docs, ToolRegistry};

/// Reply text the query-file verifier uses when it keeps the query as is.
pub const NO_REVISION: &str = "no revision is needed";

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_owned(),
        other => other.to_string(),
    }
}

/// Parse a verifier reply. `correct` must be "yes" or "no"; every other
/// string field except `thought` and `updated_query` is kept as a note.
pub fn parse_verdict(text: &str) -> Result<Verdict, String> {
    let v = extract_json(text).ok_or("reply contains no JSON object")?;
    let obj = v.as_object().ok_or("reply is not a JSON object")?;
    let correct = match obj.get("correct").map(as_text) {
        None => return Err("missing \"correct\"".into()),
        Some(c) => match c.trim_matches(|ch: char| ch == '\'' || ch == '"' || ch == '.').to_ascii_lowercase().as_str() {
            "yes" => true,
            "no" => false,
            _ => return Err(format!("\"correct\" must be yes or no, got `{c}`")),
        },
    };
    let thought = obj.get("thought").map(as_text).unwrap_or_default();
    let updated_query = obj.get("updated_query").map(as_text).filter(|q| {
        let norm = q.trim().trim_end_matches('.').to_ascii_lowercase();
        !q.is_empty() && norm != NO_REVISION && !correct
    });
    let criteria_notes: BTreeMap<String, String> = obj
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "correct" | "thought" | "updated_query"))
        .map(|(k, v)| (k.clone(), as_text(v)))
        .collect();
    Ok(Verdict { thought, correct, updated_query, criteria_notes })
}

fn ask_for_verdict(gateway: &Gateway, mut req: ChatRequest, retries: usize) -> Result<Verdict, StageFailure> {
    let mut last_err = String::new();
    for _ in 0..=retries {
        let reply = gateway.complete(&req).map_err(StageFailure::gateway)?;
        match parse_verdict(&reply) {
            Ok(v) => return Ok(v),
            Err(e) => {
                req.messages.push(Message::assistant(reply));
                req.messages.push(Message::user(format!(
                    "Your reply could not be used: {e}. Output only the JSON following the template."
                )));
                last_err = e;
            }
        }
    }
    Err(StageFailure::new("verifier_unparsable", last_err))
}

fn image_attachments(task: &Task, files_root: &Path) -> Vec<ImageAttachment> {
    task.files
        .iter()
        .filter(|f| f.kind.is_image())
        .map(|f| ImageAttachment {
            path: files_root.join(&f.path).to_string_lossy().into_owned(),
            digest: f.content_digest.clone(),
        })
        .collect()
}

fn other_files_summary(task: &Task) -> String {
    let others: Vec<String> = task
        .files
        .iter()
        .filter(|f| !f.kind.is_image())
        .map(|f| match &f.caption_or_summary {
            Some(s) => format!("- {} ({}): {}", f.path, f.kind, s),
            None => format!("- {} ({})", f.path, f.kind),
        })
        .collect();
    if others.is_empty() {
        String::new()
    } else {
        format!("The following non-image files are also attached:\n{}", others.join("\n"))
    }
}

/// Judge whether the attached files can support the query.
pub fn verify_query_file(
    gateway: &Gateway,
    registry: &ToolRegistry,
    task: &Task,
    files_root: &Path,
    model_id: &str,
    retries: usize,
) -> Result<Verdict, StageFailure> {
    let req = ChatRequest::new(
        model_id,
        vec![
            Message::system(fill(VERIFY_QUERY_FILE, &[("TOOL_SET", render_tool_docs(registry).trim_end())])),
            Message::user(fill(
                VERIFY_QUERY_FILE_USER,
                &[("QUERY", &task.query), ("OTHER_FILES", &other_files_summary(task))],
            ))
            .with_images(image_attachments(task, files_root)),
        ],
        DecodingParams::STABLE,
    );
    ask_for_verdict(gateway, req, retries)
}

/// The steps as the verifier sees them: each rendered step followed by its
/// observation.
pub fn render_trajectory(traj: &Trajectory) -> String {
    traj.steps
        .iter()
        .map(|s| format!("Step {}:\n{}\n{}", s.index, render_step(&s.thought, &s.code), render_observation(&s.observation)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Judge whether the trajectory solves the query.
pub fn verify_trajectory(
    gateway: &Gateway,
    registry: &ToolRegistry,
    task: &Task,
    traj: &Trajectory,
    files_root: &Path,
    model_id: &str,
    retries: usize,
) -> Result<Verdict, StageFailure> {
    let captions: Vec<String> = task
        .files
        .iter()
        .filter(|f| f.kind.is_image())
        .enumerate()
        .map(|(i, f)| format!("image_{}: {}", i + 1, f.caption_or_summary.as_deref().unwrap_or("(no caption)")))
        .collect();
    let image_content = if captions.is_empty() { "no images".to_owned() } else { captions.join("; ") };
    let result = traj.final_answer.clone().unwrap_or_else(|| "(no final answer)".into());
    let req = ChatRequest::new(
        model_id,
        vec![
            Message::system(fill(VERIFY_TRAJECTORY, &[("TOOL_SET", render_tool_docs(registry).trim_end())])),
            Message::user(fill(
                VERIFY_TRAJECTORY_USER,
                &[
                    ("QUERY", &task.query),
                    ("IMAGE_CONTENT", &image_content),
                    ("TRAJ", &render_trajectory(traj)),
                    ("RESULT", &result),
                ],
            ))
            .with_images(image_attachments(task, files_root)),
        ],
        DecodingParams::STABLE,
    );
    ask_for_verdict(gateway, req, retries)
}

/// Read a domain name out of a free-text reply.
pub fn parse_domain(reply: &str) -> Option<DomainTag> {
    let cleaned = reply.trim().trim_matches(|c: char| c == '.' || c == '"' || c == '\'' || c == '*');
    if let Ok(tag) = cleaned.parse() {
        return Some(tag);
    }
    let words: Vec<String> =
        reply.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_ascii_lowercase).collect();
    (0..words.len()).find_map(|i| {
        DomainTag::ALL.into_iter().find(|t| {
            let parts: Vec<&str> = t.as_str().split('_').collect();
            words.len() >= i + parts.len() && parts.iter().zip(&words[i..]).all(|(p, w)| p == w)
        })
    })
}

/// Ask the model for the task's knowledge domain. Unrecognized replies
/// leave the task untagged.
pub fn tag_domain(gateway: &Gateway, query: &str, model_id: &str) -> Result<Option<DomainTag>, StageFailure> {
    let domains = DomainTag::ALL.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ");
    let req = ChatRequest::new(
        model_id,
        vec![Message::system(fill(DOMAIN_TAG, &[("DOMAINS", &domains)])), Message::user(query)],
        DecodingParams::STABLE,
    );
    let reply = gateway.complete(&req).map_err(StageFailure::gateway)?;
    let tag = parse_domain(&reply);
    if tag.is_none() {
        tracing::debug!(%reply, "domain reply not recognized");
    }
    Ok(tag)
}
