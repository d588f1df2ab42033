//! Record schema for synthesized tool-usage data.
//!
//! A [`DataPoint`] bundles the task (query plus optional files), the executed
//! trajectory of thought/code/observation steps, the final answer and the two
//! verifier decisions. Records are stored one JSON object per line; file
//! payloads live beside the dataset in a content-addressed `files/` directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

/// The eleven file kinds a task may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FileKind {
    Jpg,
    Png,
    Pdf,
    Docx,
    Pptx,
    Xlsx,
    Csv,
    Txt,
    Mp3,
    Json,
    Html,
}

impl FileKind {
    pub const ALL: [FileKind; 11] = [
        FileKind::Jpg,
        FileKind::Png,
        FileKind::Pdf,
        FileKind::Docx,
        FileKind::Pptx,
        FileKind::Xlsx,
        FileKind::Csv,
        FileKind::Txt,
        FileKind::Mp3,
        FileKind::Json,
        FileKind::Html,
    ];

    /// Canonical lowercase extension, without the dot.
    pub fn extension(self) -> &'static str {
        match self {
            FileKind::Jpg => "jpg",
            FileKind::Png => "png",
            FileKind::Pdf => "pdf",
            FileKind::Docx => "docx",
            FileKind::Pptx => "pptx",
            FileKind::Xlsx => "xlsx",
            FileKind::Csv => "csv",
            FileKind::Txt => "txt",
            FileKind::Mp3 => "mp3",
            FileKind::Json => "json",
            FileKind::Html => "html",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        let ext = ext.trim_start_matches('.').to_ascii_lowercase();
        Some(match ext.as_str() {
            "jpg" | "jpeg" => FileKind::Jpg,
            "png" => FileKind::Png,
            "pdf" => FileKind::Pdf,
            "docx" => FileKind::Docx,
            "pptx" => FileKind::Pptx,
            "xlsx" => FileKind::Xlsx,
            "csv" => FileKind::Csv,
            "txt" => FileKind::Txt,
            "mp3" => FileKind::Mp3,
            "json" => FileKind::Json,
            "html" | "htm" => FileKind::Html,
            _ => return None,
        })
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Path::new(path)
            .extension()
            .and_then(|e| e.to_str())
            .and_then(Self::from_extension)
    }

    pub fn is_image(self) -> bool {
        matches!(self, FileKind::Jpg | FileKind::Png)
    }

    /// Kinds whose bytes are readable as UTF-8 text.
    pub fn is_text(self) -> bool {
        matches!(self, FileKind::Csv | FileKind::Txt | FileKind::Json | FileKind::Html)
    }
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.extension().to_ascii_uppercase())
    }
}

impl FromStr for FileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_extension(s).ok_or_else(|| format!("unknown file kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileArtifact {
    pub id: String,
    pub kind: FileKind,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    /// SHA-256 hex of the file bytes.
    pub content_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_or_summary: Option<String>,
}

/// Knowledge-domain categories used to tag admitted tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Finance,
    Environment,
    Culture,
    Health,
    History,
    Food,
    Science,
    Technology,
    Education,
    Sports,
    Travel,
    Entertainment,
    Art,
    Shopping,
    Transportation,
    DailyLife,
}

impl DomainTag {
    pub const ALL: [DomainTag; 16] = [
        DomainTag::Finance,
        DomainTag::Environment,
        DomainTag::Culture,
        DomainTag::Health,
        DomainTag::History,
        DomainTag::Food,
        DomainTag::Science,
        DomainTag::Technology,
        DomainTag::Education,
        DomainTag::Sports,
        DomainTag::Travel,
        DomainTag::Entertainment,
        DomainTag::Art,
        DomainTag::Shopping,
        DomainTag::Transportation,
        DomainTag::DailyLife,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Finance => "finance",
            DomainTag::Environment => "environment",
            DomainTag::Culture => "culture",
            DomainTag::Health => "health",
            DomainTag::History => "history",
            DomainTag::Food => "food",
            DomainTag::Science => "science",
            DomainTag::Technology => "technology",
            DomainTag::Education => "education",
            DomainTag::Sports => "sports",
            DomainTag::Travel => "travel",
            DomainTag::Entertainment => "entertainment",
            DomainTag::Art => "art",
            DomainTag::Shopping => "shopping",
            DomainTag::Transportation => "transportation",
            DomainTag::DailyLife => "daily_life",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        DomainTag::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub files: Vec<FileArtifact>,
    #[serde(default)]
    pub suggested_tools: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<DomainTag>,
}

impl Task {
    pub fn new(id: impl Into<String>, query: impl Into<String>) -> Self {
        Task {
            id: id.into(),
            query: query.into(),
            files: Vec::new(),
            suggested_tools: Vec::new(),
            domain_tag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within the trajectory.
    pub index: u32,
    pub thought: String,
    pub code: String,
    pub observation: String,
    pub exec_ok: bool,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    FinalAnswer,
    StepLimit,
    ExecFailure,
    ModelError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// True when every executed step ran without error.
    pub fn all_steps_ok(&self) -> bool {
        self.steps.iter().all(|s| s.exec_ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub thought: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_query: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub criteria_notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_file: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Verdict>,
}

impl Verdicts {
    pub fn admitted(&self) -> bool {
        matches!(
            (&self.query_file, &self.trajectory),
            (Some(q), Some(t)) if q.correct && t.correct
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cassette_id: String,
    pub pipeline_run_id: String,
    /// Stage name to RFC 3339 timestamp.
    #[serde(default)]
    pub timestamps: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub task: Task,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default)]
    pub verdicts: Verdicts,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Suffix appended to observations cut at the character cap.
pub const TRUNCATION_MARKER: &str = "\n[observation truncated; original length ";

/// Cap `text` at `max_chars` characters, appending the truncation marker with
/// the original byte length when anything was removed.
pub fn truncate_observation(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        None => text.to_owned(),
        Some((cut, _)) => format!("{}{}{} bytes]", &text[..cut], TRUNCATION_MARKER, text.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyQuery,
    EmptyTrajectory,
    NonContiguousStepIndex { position: usize, expected: u32, found: u32 },
    EmptyThought { step: u32 },
    EmptyCode { step: u32 },
    MissingFinalAnswer,
    UnknownTool { name: String },
    KindExtensionMismatch { file_id: String },
    BadDigest { file_id: String },
    FileMissing { path: String },
    DigestMismatch { path: String },
    MissingVerdict { stage: &'static str },
    RejectedVerdict { stage: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyQuery => write!(f, "empty query"),
            Violation::EmptyTrajectory => write!(f, "trajectory has no steps"),
            Violation::NonContiguousStepIndex { position, expected, found } => write!(
                f,
                "non-contiguous step index at position {position}: expected {expected}, found {found}"
            ),
            Violation::EmptyThought { step } => write!(f, "step {step} has an empty thought"),
            Violation::EmptyCode { step } => write!(f, "step {step} has empty code"),
            Violation::MissingFinalAnswer => {
                write!(f, "terminated by FinalAnswer but final_answer is absent")
            }
            Violation::UnknownTool { name } => write!(f, "suggested tool `{name}` is not registered"),
            Violation::KindExtensionMismatch { file_id } => {
                write!(f, "file {file_id}: kind does not match extension")
            }
            Violation::BadDigest { file_id } => {
                write!(f, "file {file_id}: digest is not 64 lowercase hex characters")
            }
            Violation::FileMissing { path } => write!(f, "file {path} does not exist"),
            Violation::DigestMismatch { path } => write!(f, "file {path}: digest mismatch"),
            Violation::MissingVerdict { stage } => write!(f, "missing {stage} verdict"),
            Violation::RejectedVerdict { stage } => write!(f, "{stage} verdict is not correct"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Optional context for checks that need more than the record itself.
#[derive(Debug, Clone, Default)]
pub struct ValidationContext<'a> {
    /// Registered tool names; when set, suggested tools are checked against it.
    pub tool_names: Option<&'a [String]>,
    /// Dataset root; when set, file paths and digests are checked on disk.
    pub files_root: Option<&'a Path>,
    /// Require both verdicts present and correct.
    pub require_admitted: bool,
}

/// Schema checks for an admitted record. Violations are returned as data.
pub fn validate_datapoint(dp: &DataPoint) -> ValidationReport {
    validate_datapoint_with(
        dp,
        &ValidationContext {
            require_admitted: true,
            ..Default::default()
        },
    )
}

pub fn validate_datapoint_with(dp: &DataPoint, ctx: &ValidationContext<'_>) -> ValidationReport {
    let mut v = Vec::new();
    let task = &dp.task;
    if task.query.trim().is_empty() {
        v.push(Violation::EmptyQuery);
    }
    if let Some(names) = ctx.tool_names {
        for tool in &task.suggested_tools {
            if !names.iter().any(|n| n == tool) {
                v.push(Violation::UnknownTool { name: tool.clone() });
            }
        }
    }
    for file in &task.files {
        if FileKind::from_path(&file.path) != Some(file.kind) {
            v.push(Violation::KindExtensionMismatch { file_id: file.id.clone() });
        }
        let digest_ok = file.content_digest.len() == 64
            && file
                .content_digest
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !digest_ok {
            v.push(Violation::BadDigest { file_id: file.id.clone() });
        }
        if let Some(root) = ctx.files_root {
            match std::fs::read(root.join(&file.path)) {
                Err(_) => v.push(Violation::FileMissing { path: file.path.clone() }),
                Ok(bytes) => {
                    if digest_ok && sha256_hex(&bytes) != file.content_digest {
                        v.push(Violation::DigestMismatch { path: file.path.clone() });
                    }
                }
            }
        }
    }

    let traj = &dp.trajectory;
    if traj.steps.is_empty() {
        v.push(Violation::EmptyTrajectory);
    }
    for (pos, step) in traj.steps.iter().enumerate() {
        let expected = pos as u32 + 1;
        if step.index != expected {
            v.push(Violation::NonContiguousStepIndex { position: pos, expected, found: step.index });
        }
        if step.thought.trim().is_empty() {
            v.push(Violation::EmptyThought { step: step.index });
        }
        if step.code.trim().is_empty() {
            v.push(Violation::EmptyCode { step: step.index });
        }
    }
    if traj.terminated_by == Termination::FinalAnswer && traj.final_answer.is_none() {
        v.push(Violation::MissingFinalAnswer);
    }

    if ctx.require_admitted {
        for (stage, verdict) in [
            ("query_file", &dp.verdicts.query_file),
            ("trajectory", &dp.verdicts.trajectory),
        ] {
            match verdict {
                None => v.push(Violation::MissingVerdict { stage }),
                Some(verdict) if !verdict.correct => v.push(Violation::RejectedVerdict { stage }),
                Some(_) => {}
            }
        }
    }
    ValidationReport { violations: v }
}
