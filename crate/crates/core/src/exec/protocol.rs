//! Newline-delimited JSON framing between the bridge and a sandbox host.
//!
//! Each frame is one JSON object on one line, discriminated by `op`. See
//! `docs/protocol.md` for the full exchange.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::tools::ToolOutput;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub id: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecErrorInfo {
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub trace: String,
}

impl ExecErrorInfo {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        ExecErrorInfo { kind: kind.into(), message: message.into(), trace: String::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub id: String,
    pub stdout: String,
    #[serde(default)]
    pub error: Option<ExecErrorInfo>,
    #[serde(default)]
    pub files_created: Vec<String>,
    #[serde(default)]
    pub duration_ms: u64,
    /// Set when the interpreter was restarted and its namespace lost.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub state_reset: bool,
}

impl ExecResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolValueKind {
    Text,
    Path,
    FinalAnswer,
}

/// Bridge -> host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientFrame {
    Execute(ExecRequest),
    ToolResult {
        id: String,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kind: Option<ToolValueKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Shutdown,
}

impl ClientFrame {
    pub fn tool_ok(id: impl Into<String>, output: &ToolOutput) -> Self {
        let kind = match output {
            ToolOutput::Text(_) => ToolValueKind::Text,
            ToolOutput::Path(_) => ToolValueKind::Path,
            ToolOutput::FinalAnswer(_) => ToolValueKind::FinalAnswer,
        };
        ClientFrame::ToolResult {
            id: id.into(),
            ok: true,
            kind: Some(kind),
            value: Some(output.as_return_text().to_owned()),
            error: None,
        }
    }

    pub fn tool_err(id: impl Into<String>, message: impl Into<String>) -> Self {
        ClientFrame::ToolResult { id: id.into(), ok: false, kind: None, value: None, error: Some(message.into()) }
    }
}

/// Host -> bridge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HostFrame {
    Ready {
        protocol: u32,
        #[serde(default)]
        pid: Option<u32>,
    },
    ToolCall {
        id: String,
        name: String,
        #[serde(default)]
        args: Map<String, Value>,
    },
    Result(ExecResult),
}

#[derive(Debug, thiserror::Error)]
#[error("malformed frame: {0}")]
pub struct FrameError(pub String);

/// One frame, newline-terminated.
pub fn encode<T: Serialize>(frame: &T) -> String {
    let mut line = serde_json::to_string(frame).expect("frames serialize");
    line.push('\n');
    line
}

pub fn decode<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T, FrameError> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r'])).map_err(|e| FrameError(e.to_string()))
}
