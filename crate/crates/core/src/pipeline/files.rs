use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::json::extract_json;
use super::prompts::{fill, FILE_CODE, FILE_CODE_USER, FILE_PLAN, FILE_PLAN_USER};
use super::queries::QueryDraft;
use super::StageFailure;
use crate::exec::Session;
use crate::gateway::{ChatRequest, DecodingParams, Gateway, Message};
use crate::model::{FileArtifact, FileKind};
use crate::store::FileStore;
use crate::tools::{render_tool_docs, ToolHost, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtherFile {
    pub kind: FileKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilePlan {
    pub information: String,
    pub from_internet: String,
    pub from_images: String,
    pub image_numbers: usize,
    pub image_contents: Vec<String>,
    pub other_files: Vec<OtherFile>,
}

fn text_field(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.trim().to_owned(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

fn image_key_order(key: &str) -> Option<usize> {
    key.strip_prefix("image_")?.parse().ok()
}

/// Parse the file-planning JSON reply.
pub fn parse_file_plan(text: &str) -> Result<FilePlan, String> {
    let v = extract_json(text).ok_or("reply contains no JSON object")?;
    let file = v.get("file").ok_or("missing \"file\" key")?;
    let image_numbers = file
        .get("image_numbers")
        .and_then(|n| n.as_u64().or_else(|| n.as_str().and_then(|s| s.trim().parse().ok())))
        .ok_or("\"image_numbers\" is not a non-negative integer")? as usize;

    let image_contents: Vec<String> = match file.get("image_content") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Object(map)) => {
            let mut entries = map
                .iter()
                .map(|(k, v)| {
                    let order = image_key_order(k).ok_or_else(|| format!("unexpected image key `{k}`"))?;
                    let text = v.as_str().ok_or_else(|| format!("`{k}` is not text"))?.trim().to_owned();
                    Ok((order, text))
                })
                .collect::<Result<Vec<_>, String>>()?;
            entries.sort_by_key(|(o, _)| *o);
            entries.into_iter().map(|(_, t)| t).collect()
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(|s| s.trim().to_owned()).ok_or("image content is not text".to_owned()))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err("\"image_content\" has the wrong shape".into()),
    };
    if image_contents.len() != image_numbers {
        return Err(format!(
            "image_numbers is {image_numbers} but {} image contents were given",
            image_contents.len()
        ));
    }
    if image_contents.iter().any(|c| c.is_empty()) {
        return Err("empty image content".into());
    }

    let mut other_files = Vec::new();
    if let Some(list) = file.get("other_files").filter(|v| !v.is_null()) {
        for item in list.as_array().ok_or("\"other_files\" is not a list")? {
            let kind: FileKind = text_field(item, "kind").parse()?;
            if kind.is_image() {
                return Err("images belong in image_content, not other_files".into());
            }
            let content = text_field(item, "content");
            if content.is_empty() {
                return Err("other file without content".into());
            }
            other_files.push(OtherFile { kind, content });
        }
    }

    Ok(FilePlan {
        information: text_field(&v, "information"),
        from_internet: text_field(&v, "information from the Internet"),
        from_images: text_field(&v, "information from images"),
        image_numbers,
        image_contents,
        other_files,
    })
}

fn parse_note(err: &str) -> String {
    format!("Your reply could not be used: {err}. Output only the JSON following the template.")
}

/// Ask the model which files the draft needs.
pub fn plan_files(
    gateway: &Gateway,
    registry: &ToolRegistry,
    draft: &QueryDraft,
    model_id: &str,
    retries: usize,
) -> Result<FilePlan, StageFailure> {
    let tools = if draft.tools.is_empty() { "none".to_owned() } else { draft.tools.join(", ") };
    let mut req = ChatRequest::new(
        model_id,
        vec![
            Message::system(fill(FILE_PLAN, &[("TOOL_SET", render_tool_docs(registry).trim_end())])),
            Message::user(fill(FILE_PLAN_USER, &[("QUERY", &draft.query), ("TOOLS", &tools)])),
        ],
        DecodingParams::STABLE,
    );
    let mut last_err = String::new();
    for _ in 0..=retries {
        let reply = gateway.complete(&req).map_err(StageFailure::gateway)?;
        match parse_file_plan(&reply) {
            Ok(plan) => return Ok(plan),
            Err(e) => {
                req.messages.push(Message::assistant(reply));
                req.messages.push(Message::user(parse_note(&e)));
                last_err = e;
            }
        }
    }
    Err(StageFailure::new("plan_parse", last_err))
}

pub const CODE_START: &str = "## code start";
pub const CODE_END: &str = "## code end";

/// Remove the indentation common to every non-blank line.
pub fn dedent(code: &str) -> String {
    let indent = code
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    code.lines()
        .map(|l| if l.trim().is_empty() { "" } else { l.get(indent..).unwrap_or_else(|| l.trim_start()) })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Code between the `## code start` / `## code end` markers, with any
/// inner code fence and common indentation removed.
pub fn extract_code_block(text: &str) -> Option<String> {
    let start = text.find(CODE_START)? + CODE_START.len();
    let rest = &text[start..];
    let body = &rest[..rest.find(CODE_END).unwrap_or(rest.len())];
    let body: Vec<&str> = body.lines().filter(|l| !l.trim_start().starts_with("```")).collect();
    let code = dedent(&body.join("\n"));
    let code = code.trim_matches('\n');
    (!code.trim().is_empty()).then(|| code.to_owned())
}

/// Relative directory generated files are written to inside a session.
pub const SAVE_DIR: &str = ".cache";

/// Have the model write code that produces a file of `kind` from `brief`,
/// run it, and store the result. One retry with the failure appended.
#[allow(clippy::too_many_arguments)]
pub fn materialize_generated_file(
    gateway: &Gateway,
    session: &mut dyn Session,
    tools: &dyn ToolHost,
    store: &FileStore,
    kind: FileKind,
    brief: &str,
    file_name: &str,
    model_id: &str,
    retries: usize,
) -> Result<FileArtifact, StageFailure> {
    let kind_name = kind.to_string();
    let mut req = ChatRequest::new(
        model_id,
        vec![
            Message::system(fill(FILE_CODE, &[("FILE_TYPE", &kind_name)])),
            Message::user(fill(
                FILE_CODE_USER,
                &[("CONTENT", brief), ("FILE_TYPE", &kind_name), ("FILE_NAME", file_name), ("SAVE_PATH", SAVE_DIR)],
            )),
        ],
        DecodingParams::STABLE,
    );
    let target = format!("{SAVE_DIR}/{file_name}");
    let mut last_err = String::new();
    for _ in 0..=retries {
        let reply = gateway.complete(&req).map_err(StageFailure::gateway)?;
        let problem = match extract_code_block(&reply) {
            None => format!("the reply has no code between '{CODE_START}' and '{CODE_END}'"),
            Some(code) => {
                let outcome = session.execute(&code, tools).map_err(|e| StageFailure::new("executor", e.to_string()))?;
                let path = session.workdir().join(&target);
                match (&outcome.result.error, std::fs::metadata(&path)) {
                    (Some(err), _) => format!("running the code failed with {}: {}", err.kind, err.message),
                    (None, Ok(meta)) if meta.len() > 0 => {
                        return store
                            .put_file(&path, kind, Some(brief.to_owned()))
                            .map_err(|e| StageFailure::new("store", e.to_string()));
                    }
                    (None, _) => format!("the code ran but did not write a non-empty file at {target}"),
                }
            }
        };
        tracing::debug!(%problem, file = %target, "file generation attempt failed");
        req.messages.push(Message::assistant(reply));
        req.messages.push(Message::user(format!("{problem}. Fix it and answer again with the same template.")));
        last_err = problem;
    }
    Err(StageFailure::new("codegen", last_err))
}
