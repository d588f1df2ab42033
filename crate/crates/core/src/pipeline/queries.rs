use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::json::extract_array;
use super::prompts::{fill, QUERY_GENERATION, QUERY_GENERATION_USER};
use super::PipelineError;
use crate::gateway::{ChatRequest, DecodingParams, Gateway, Message};
use crate::tools::{render_tool_docs, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDraft {
    pub query: String,
    pub tools: Vec<String>,
    /// Indices into the seed list shown to the model for this draft.
    pub seed_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryGenConfig {
    pub model_id: String,
    pub params: DecodingParams,
    pub seeds_per_call: usize,
    pub queries_per_call: usize,
    /// Upper bound on gateway calls; derived from `n` when unset.
    pub max_calls: Option<usize>,
    /// Consecutive unparsable replies tolerated before giving up.
    pub parse_retries: usize,
    pub rng_seed: u64,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        QueryGenConfig {
            model_id: "gpt-4o-mini".into(),
            params: DecodingParams::CREATIVE,
            seeds_per_call: 3,
            queries_per_call: 5,
            max_calls: None,
            parse_retries: 2,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGenTelemetry {
    pub calls: usize,
    pub malformed: usize,
    pub unparsable_replies: usize,
}

/// Validate one entry of the model's JSON array.
pub fn parse_draft(entry: &Value, registry: &ToolRegistry) -> Option<(String, Vec<String>)> {
    let query = entry.get("query")?.as_str()?.trim();
    if query.is_empty() {
        return None;
    }
    let tools = entry
        .get("tools")?
        .as_array()?
        .iter()
        .map(|t| t.as_str().map(|s| s.trim().to_owned()))
        .collect::<Option<Vec<_>>>()?;
    if !tools.iter().all(|t| registry.contains(t)) {
        return None;
    }
    Some((query.to_owned(), tools))
}

/// Draft `n` queries by showing the model a few sampled seed queries and the
/// tool documentation. Seeds are drawn without replacement within a call.
pub fn generate_queries(
    gateway: &Gateway,
    registry: &ToolRegistry,
    seeds: &[String],
    n: usize,
    cfg: &QueryGenConfig,
) -> Result<(Vec<QueryDraft>, QueryGenTelemetry), PipelineError> {
    if seeds.is_empty() {
        return Err(PipelineError::NoSeeds);
    }
    let mut drafts = Vec::new();
    let mut tel = QueryGenTelemetry::default();
    if n == 0 {
        return Ok((drafts, tel));
    }
    let per_call = cfg.queries_per_call.max(1);
    let max_calls = cfg.max_calls.unwrap_or(2 * n.div_ceil(per_call) + cfg.parse_retries + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let tool_docs = render_tool_docs(registry);
    let mut consecutive_failures = 0;

    while drafts.len() < n && tel.calls < max_calls {
        let mut seed_ids = rand::seq::index::sample(&mut rng, seeds.len(), cfg.seeds_per_call.clamp(1, seeds.len())).into_vec();
        seed_ids.sort_unstable();
        let examples = seed_ids.iter().map(|&i| format!("- {}", seeds[i])).collect::<Vec<_>>().join("\n");
        let count = per_call.min(n - drafts.len()).to_string();
        let req = ChatRequest::new(
            &cfg.model_id,
            vec![
                Message::system(fill(QUERY_GENERATION, &[("TOOL_SET", tool_docs.trim_end()), ("IN_CONTEXT_EXAMPLES", &examples)])),
                Message::user(fill(QUERY_GENERATION_USER, &[("COUNT", &count)])),
            ],
            cfg.params,
        );
        tel.calls += 1;
        let reply = gateway.complete(&req)?;
        let Some(entries) = extract_array(&reply) else {
            tel.unparsable_replies += 1;
            consecutive_failures += 1;
            tracing::warn!(call = tel.calls, "query generation reply is not JSON");
            if consecutive_failures > cfg.parse_retries {
                return Err(PipelineError::Stage(format!(
                    "query generation: {consecutive_failures} consecutive unparsable replies"
                )));
            }
            continue;
        };
        consecutive_failures = 0;
        for entry in &entries {
            if drafts.len() == n {
                break;
            }
            match parse_draft(entry, registry) {
                Some((query, tools)) => drafts.push(QueryDraft { query, tools, seed_ids: seed_ids.clone() }),
                None => {
                    tel.malformed += 1;
                    tracing::debug!(%entry, "dropping malformed query draft");
                }
            }
        }
    }
    if drafts.len() < n {
        tracing::warn!(wanted = n, got = drafts.len(), "query generation stopped at the call budget");
    }
    Ok((drafts, tel))
}
