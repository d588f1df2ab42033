//! Code execution sessions.
//!
//! A [`Session`] is one persistent interpreter with its own working directory
//! (which always contains `.cache/`). [`ProcessSession`] drives an external
//! sandbox host over the stdio protocol in [`protocol`]; [`MockSession`] is an
//! in-process stand-in that honours the same contract for tests and offline
//! replay.

mod bridge;
mod mock;
pub mod policy;
pub mod protocol;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bridge::{ProcessFactory, ProcessSession};
pub use mock::{MockFactory, MockSession};
pub use policy::{ImportPolicy, DEFAULT_ALLOWED_IMPORTS};
pub use protocol::{ExecErrorInfo, ExecRequest, ExecResult};

use crate::tools::ToolHost;

/// Error kind reported in [`ExecResult::error`] for a disallowed import.
pub const POLICY_VIOLATION: &str = "PolicyViolation";
/// Error kind reported when the wall-clock limit was exceeded.
pub const TIMEOUT: &str = "Timeout";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to spawn sandbox host: {0}")]
    SpawnFailure(String),
    #[error("sandbox host did not complete the handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("sandbox session is dead: {0}")]
    SessionDead(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Result of one `execute`, plus any `final_answer` the code invoked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub result: ExecResult,
    pub final_answer: Option<String>,
}

pub trait Session: Send {
    fn id(&self) -> &str;
    fn workdir(&self) -> &Path;
    /// Run `code`, servicing tool calls through `tools`. Code errors, policy
    /// violations and timeouts come back inside the result, not as `Err`.
    fn execute(&mut self, code: &str, tools: &dyn ToolHost) -> Result<ExecOutcome, ExecError>;
}

pub trait SessionFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn Session>, ExecError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Host launch command and arguments; the bridge appends
    /// `--workdir <dir> --allow <m1,m2,...>`.
    pub launch: Vec<String>,
    pub allowlist: Vec<String>,
    #[serde(with = "millis")]
    pub execute_timeout: Duration,
    #[serde(with = "millis")]
    pub handshake_timeout: Duration,
    /// Parent directory for session working directories; a temp dir if unset.
    pub workdir_root: Option<PathBuf>,
    pub allow_subprocess: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            launch: Vec::new(),
            allowlist: DEFAULT_ALLOWED_IMPORTS.iter().map(|s| s.to_string()).collect(),
            execute_timeout: Duration::from_secs(30),
            handshake_timeout: Duration::from_secs(10),
            workdir_root: None,
            allow_subprocess: false,
        }
    }
}

impl SessionConfig {
    pub fn policy(&self) -> ImportPolicy {
        ImportPolicy::new(self.allowlist.iter().cloned())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Session working directory; removed on drop when it is a temp dir.
pub(crate) enum Workdir {
    Temp(tempfile::TempDir),
    Fixed(PathBuf),
}

impl Workdir {
    pub(crate) fn create(root: Option<&Path>, session_id: &str) -> std::io::Result<Self> {
        let wd = match root {
            Some(root) => {
                let dir = root.join(session_id);
                std::fs::create_dir_all(&dir)?;
                Workdir::Fixed(dir)
            }
            None => Workdir::Temp(tempfile::Builder::new().prefix("trajsmith-").tempdir()?),
        };
        std::fs::create_dir_all(wd.path().join(".cache"))?;
        Ok(wd)
    }

    pub(crate) fn path(&self) -> &Path {
        match self {
            Workdir::Temp(t) => t.path(),
            Workdir::Fixed(p) => p,
        }
    }
}

/// Relative `/`-separated paths of every file under `root`.
pub(crate) fn list_files(root: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeSet<String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            match entry.file_type() {
                Ok(t) if t.is_dir() => walk(&path, root, out),
                Ok(t) if t.is_file() => {
                    if let Ok(rel) = path.strip_prefix(root) {
                        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>();
                        out.insert(rel.join("/"));
                    }
                }
                _ => {}
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

pub(crate) fn next_session_id(prefix: &str) -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    format!("{prefix}-{}-{}", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed))
}

/// Copy `src` into the session working directory at relative path `rel`.
pub fn stage_file(session: &dyn Session, src: &Path, rel: &str) -> std::io::Result<PathBuf> {
    let dest = session.workdir().join(rel);
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::copy(src, &dest)?;
    Ok(dest)
}
