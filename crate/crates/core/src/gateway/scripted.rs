use sha2::{Digest, Sha256};

use super::{ChatRequest, EmbedRequest, GatewayError, Provider};

/// Dimension of [`hashing_embedding`] vectors.
pub const HASHING_DIM: usize = 256;

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;
type EmbedFn = dyn Fn(&EmbedRequest) -> Result<Vec<f32>, GatewayError> + Send + Sync;

/// In-process provider driven by closures. Used to author cassettes and to
/// drive tests without a network; embeddings default to [`hashing_embedding`].
pub struct ScriptedProvider {
    name: String,
    chat: Box<ChatFn>,
    embed: Box<EmbedFn>,
}

impl ScriptedProvider {
    pub fn new(
        name: impl Into<String>,
        chat: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedProvider {
            name: name.into(),
            chat: Box::new(chat),
            embed: Box::new(|r| Ok(hashing_embedding(&r.input, HASHING_DIM))),
        }
    }

    pub fn with_embed(
        mut self,
        embed: impl Fn(&EmbedRequest) -> Result<Vec<f32>, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        self.embed = Box::new(embed);
        self
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (self.chat)(req)
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, GatewayError> {
        (self.embed)(req)
    }
}

/// Deterministic bag-of-words feature hashing embedding, unit-normalized.
/// Lowercased alphanumeric tokens (with a light plural fold) are hashed into
/// signed buckets, so texts sharing words land close together.
pub fn hashing_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f32; dim.max(1)];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let token = if token.len() > 3 { token.strip_suffix('s').unwrap_or(token) } else { token };
        let h = Sha256::digest(token.as_bytes());
        let bucket = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % v.len();
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
