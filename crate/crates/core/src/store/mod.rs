//! Dataset persistence: a JSONL record file plus a content-addressed
//! `files/` directory, with dedup, statistics and fine-tuning export.

mod sft;
mod stats;

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

pub use sft::{export_sft, write_sft, ExportError, LabelSpan, SftLayout, SftSample};
pub use stats::{histogram_csv, stats, StatsReport, Totals, UNTAGGED};

use crate::digest::sha256_hex;
use crate::model::{validate_datapoint_with, DataPoint, FileArtifact, FileKind, ValidationContext};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const FILES_DIR: &str = "files";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("refusing to store invalid datapoint {id}: {report}")]
    Invalid { id: String, report: String },
}

/// Content-addressed file directory: every file lives at
/// `files/<sha256>.<ext>` relative to the dataset root.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileStore { root: root.into() }
    }

    /// Dataset root the artifact paths are relative to.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn put_bytes(
        &self,
        bytes: &[u8],
        kind: FileKind,
        caption: Option<String>,
    ) -> std::io::Result<FileArtifact> {
        let digest = sha256_hex(bytes);
        let rel = format!("{FILES_DIR}/{digest}.{}", kind.extension());
        let dest = self.root.join(&rel);
        if !dest.exists() {
            let dir = self.root.join(FILES_DIR);
            fs::create_dir_all(&dir)?;
            // private temp name: concurrent writers of the same bytes race to an identical rename
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(bytes)?;
            tmp.persist(&dest).map_err(|e| e.error)?;
        }
        Ok(FileArtifact {
            id: format!("f-{}", &digest[..12]),
            kind,
            path: rel,
            content_digest: digest,
            caption_or_summary: caption,
        })
    }

    pub fn put_file(&self, src: &Path, kind: FileKind, caption: Option<String>) -> std::io::Result<FileArtifact> {
        self.put_bytes(&fs::read(src)?, kind, caption)
    }
}

pub struct DatasetStore {
    files: FileStore,
    writer: Mutex<()>,
}

impl DatasetStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(FILES_DIR))?;
        Ok(DatasetStore { files: FileStore::new(root), writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        self.files.root()
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.root().join(DATASET_FILE)
    }

    pub fn files(&self) -> &FileStore {
        &self.files
    }

    /// Append one record. Schema violations are refused.
    pub fn append(&self, dp: &DataPoint) -> Result<(), StoreError> {
        let report = validate_datapoint_with(dp, &ValidationContext::default());
        if !report.is_empty() {
            return Err(StoreError::Invalid { id: dp.task.id.clone(), report: report.to_string() });
        }
        let mut line = serde_json::to_string(dp).expect("datapoints serialize");
        line.push('\n');
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(self.dataset_path())?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(&self) -> Result<Vec<DataPoint>, StoreError> {
        let path = self.dataset_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        load_dataset(&path)
    }
}

/// Read and validate every record; the first bad line is reported 1-based.
pub fn load_dataset(path: &Path) -> Result<Vec<DataPoint>, StoreError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| StoreError::Schema { line: i + 1, message };
        let dp: DataPoint = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let report = validate_datapoint_with(&dp, &ValidationContext::default());
        if !report.is_empty() {
            return Err(schema(report.to_string()));
        }
        out.push(dp);
    }
    Ok(out)
}

/// Write `dataset` as JSONL, replacing `path`.
pub fn write_dataset(path: &Path, dataset: &[DataPoint]) -> std::io::Result<()> {
    let mut buf = String::new();
    for dp in dataset {
        buf.push_str(&serde_json::to_string(dp).expect("datapoints serialize"));
        buf.push('\n');
    }
    fs::write(path, buf)
}

fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Drop records whose query equals an earlier one after case folding and
/// whitespace collapsing.
pub fn dedup(dataset: Vec<DataPoint>) -> Vec<DataPoint> {
    let mut seen = HashSet::new();
    dataset.into_iter().filter(|dp| seen.insert(normalize_query(&dp.task.query))).collect()
}
