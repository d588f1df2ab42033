//! Caption-embedding index over a pool of source images.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("image index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query vector has dimension {got}, index has {want}")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("image pool: {0}")]
    Pool(String),
}

/// One pool entry; `path` is relative to the pool directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolImage {
    pub id: String,
    pub path: String,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub index: usize,
    pub score: f64,
}

/// Scale to unit length; a zero vector stays zero.
pub fn normalize(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.iter().map(|_| 0.0).collect();
    }
    v.iter().map(|x| f64::from(*x) / norm).collect()
}

/// Left-to-right dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Heap entry ordered so the max is the weakest hit: lowest score, then
/// highest index.
#[derive(PartialEq)]
struct Weakest(Hit);

impl Eq for Weakest {}

impl Ord for Weakest {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.score.total_cmp(&self.0.score).then(self.0.index.cmp(&other.0.index))
    }
}

impl PartialOrd for Weakest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` best rows of `vectors` by dot product with `query`, best first;
/// equal scores keep index order.
pub fn top_k(vectors: &[Vec<f64>], query: &[f64], k: usize) -> Vec<Hit> {
    let mut heap: BinaryHeap<Weakest> = BinaryHeap::with_capacity(k + 1);
    for (index, v) in vectors.iter().enumerate() {
        let hit = Weakest(Hit { index, score: dot(v, query) });
        if heap.len() < k {
            heap.push(hit);
        } else if let Some(top) = heap.peek() {
            if hit < *top {
                heap.pop();
                heap.push(hit);
            }
        }
    }
    let mut hits: Vec<Hit> = heap.into_iter().map(|w| w.0).collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    hits
}

#[derive(Debug, Clone)]
pub struct ImageIndex {
    root: PathBuf,
    items: Vec<PoolImage>,
    vectors: Vec<Vec<f64>>,
}

impl ImageIndex {
    /// Index already-embedded captions; vectors are normalized here.
    pub fn from_vectors(root: impl Into<PathBuf>, items: Vec<PoolImage>, vectors: &[Vec<f32>]) -> Self {
        assert_eq!(items.len(), vectors.len(), "one vector per item");
        ImageIndex { root: root.into(), items, vectors: vectors.iter().map(|v| normalize(v)).collect() }
    }

    /// Embed every caption through the gateway.
    pub fn build(
        gateway: &Gateway,
        model_id: &str,
        root: impl Into<PathBuf>,
        items: Vec<PoolImage>,
    ) -> Result<Self, GatewayError> {
        let vectors = items
            .iter()
            .map(|it| gateway.embed(model_id, &it.caption))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_vectors(root, items, &vectors))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, index: usize) -> &PoolImage {
        &self.items[index]
    }

    pub fn path_of(&self, index: usize) -> PathBuf {
        self.root.join(&self.items[index].path)
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if self.items.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let want = self.vectors[0].len();
        if query.len() != want {
            return Err(RetrievalError::Dimension { got: query.len(), want });
        }
        Ok(top_k(&self.vectors, &normalize(query), k))
    }
}

/// Embed `content` and return the `k` most similar pool images.
pub fn retrieve_images(
    gateway: &Gateway,
    model_id: &str,
    content: &str,
    k: usize,
    index: &ImageIndex,
) -> Result<Vec<Hit>, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let q = gateway.embed(model_id, content)?;
    index.search(&q, k)
}

/// Read `pool.jsonl` (one [`PoolImage`] per line); paths resolve against its
/// directory.
pub fn load_pool(path: &Path) -> Result<(PathBuf, Vec<PoolImage>), RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::Pool(format!("{}: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: PoolImage =
            serde_json::from_str(line).map_err(|e| RetrievalError::Pool(format!("line {}: {e}", i + 1)))?;
        items.push(item);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((root, items))
}
