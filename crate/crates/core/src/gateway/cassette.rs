use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, EmbedRequest, GatewayError};

/// File name of the cassette inside a cassette directory.
pub const CASSETTE_FILE: &str = "cassette.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteMeta {
    pub id: String,
    pub created_at: String,
    pub provider: String,
}

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CassetteRecord {
    Meta(CassetteMeta),
    Chat { digest: String, request: ChatRequest, response: String },
    Embed { digest: String, request: EmbedRequest, embedding: Vec<f32> },
}

impl CassetteRecord {
    pub fn chat(req: &ChatRequest, response: &str) -> Self {
        CassetteRecord::Chat { digest: req.digest(), request: req.clone(), response: response.to_owned() }
    }

    pub fn embed(req: &EmbedRequest, embedding: &[f32]) -> Self {
        CassetteRecord::Embed { digest: req.digest(), request: req.clone(), embedding: embedding.to_vec() }
    }
}

/// Recorded exchanges keyed by request digest. Repeated digests are answered
/// in recording order; once only the last recording remains it keeps being
/// returned.
pub struct Cassette {
    meta: CassetteMeta,
    path: PathBuf,
    writer: Option<BufWriter<File>>,
    chats: HashMap<String, VecDeque<String>>,
    embeds: HashMap<String, VecDeque<Vec<f32>>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cassette(format!("{}: {e}", path.display()))
}

fn take<T: Clone>(map: &mut HashMap<String, VecDeque<T>>, digest: &str) -> Option<T> {
    let queue = map.get_mut(digest)?;
    if queue.len() > 1 {
        queue.pop_front()
    } else {
        queue.front().cloned()
    }
}

impl Cassette {
    pub fn create(dir: &Path, provider: &str) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(CASSETTE_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let meta = CassetteMeta {
            id: format!("{:016x}", rand::rng().random::<u64>()),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            provider: provider.to_owned(),
        };
        let mut cassette = Cassette {
            meta: meta.clone(),
            path,
            writer: Some(BufWriter::new(file)),
            chats: HashMap::new(),
            embeds: HashMap::new(),
        };
        cassette.write_line(&CassetteRecord::Meta(meta))?;
        Ok(cassette)
    }

    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        let path = dir.join(CASSETTE_FILE);
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        let mut meta = None;
        let mut chats: HashMap<String, VecDeque<String>> = HashMap::new();
        let mut embeds: HashMap<String, VecDeque<Vec<f32>>> = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CassetteRecord = serde_json::from_str(&line)
                .map_err(|e| io_err(&path, format!("line {}: {e}", n + 1)))?;
            match record {
                CassetteRecord::Meta(m) => meta = Some(m),
                CassetteRecord::Chat { digest, response, .. } => {
                    chats.entry(digest).or_default().push_back(response)
                }
                CassetteRecord::Embed { digest, embedding, .. } => {
                    embeds.entry(digest).or_default().push_back(embedding)
                }
            }
        }
        let meta = meta.ok_or_else(|| io_err(&path, "missing meta record"))?;
        Ok(Cassette { meta, path, writer: None, chats, embeds })
    }

    pub fn meta(&self) -> &CassetteMeta {
        &self.meta
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.chats.values().map(VecDeque::len).sum::<usize>()
            + self.embeds.values().map(VecDeque::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn take_chat(&mut self, digest: &str) -> Option<String> {
        take(&mut self.chats, digest)
    }

    pub(crate) fn take_embed(&mut self, digest: &str) -> Option<Vec<f32>> {
        take(&mut self.embeds, digest)
    }

    pub(crate) fn append(&mut self, record: CassetteRecord) -> Result<(), GatewayError> {
        self.write_line(&record)
    }

    fn write_line(&mut self, record: &CassetteRecord) -> Result<(), GatewayError> {
        let path = self.path.clone();
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| io_err(&path, "cassette opened read-only"))?;
        let line = serde_json::to_string(record).map_err(|e| io_err(&path, e))?;
        writeln!(writer, "{line}").map_err(|e| io_err(&path, e))?;
        writer.flush().map_err(|e| io_err(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{DecodingParams, Message};

    #[test]
    fn repeated_digests_replay_in_order_then_stick() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::new("m", vec![Message::user("same")], DecodingParams::STABLE);
        {
            let mut c = Cassette::create(dir.path(), "p").unwrap();
            c.append(CassetteRecord::chat(&req, "first")).unwrap();
            c.append(CassetteRecord::chat(&req, "second")).unwrap();
        }
        let mut c = Cassette::open(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        let d = req.digest();
        assert_eq!(c.take_chat(&d).as_deref(), Some("first"));
        assert_eq!(c.take_chat(&d).as_deref(), Some("second"));
        assert_eq!(c.take_chat(&d).as_deref(), Some("second"));
        assert_eq!(c.meta().provider, "p");
    }

    #[test]
    fn missing_meta_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(CASSETTE_FILE), "").unwrap();
        assert!(Cassette::open(dir.path()).is_err());
    }

    #[test]
    fn read_only_cassette_rejects_append() {
        let dir = tempfile::tempdir().unwrap();
        Cassette::create(dir.path(), "p").unwrap();
        let mut c = Cassette::open(dir.path()).unwrap();
        let req = EmbedRequest { model_id: "e".into(), input: "x".into() };
        assert!(c.append(CassetteRecord::embed(&req, &[1.0])).is_err());
    }
}
