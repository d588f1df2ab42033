use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatRequest, EmbedRequest, GatewayError, Message, Provider, Role};

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// OpenAI-compatible `/chat/completions` and `/embeddings` client.
pub struct HttpProvider {
    cfg: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        HttpProvider { cfg, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(&self.url(path)).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp.body_mut().read_json::<Value>().map_err(map_transport),
            429 => {
                let retry_after_ms = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .map(|secs| (secs * 1000.0) as u64);
                Err(GatewayError::RateLimited { retry_after_ms })
            }
            408 | 504 => Err(GatewayError::Timeout),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(GatewayError::Provider(format!("HTTP {status}: {}", text.trim())))
            }
        }
    }
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        other => GatewayError::Provider(other.to_string()),
    }
}

fn mime_for(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else {
        "image/png"
    }
}

fn wire_message(m: &Message) -> Result<Value, GatewayError> {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    if m.images.is_empty() {
        return Ok(json!({ "role": role, "content": m.content }));
    }
    let mut parts = vec![json!({ "type": "text", "text": m.content })];
    for img in &m.images {
        let bytes = std::fs::read(&img.path)
            .map_err(|e| GatewayError::InvalidInput(format!("{}: {e}", img.path)))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        parts.push(json!({
            "type": "image_url",
            "image_url": { "url": format!("data:{};base64,{b64}", mime_for(&img.path)) }
        }));
    }
    Ok(json!({ "role": role, "content": parts }))
}

/// Request body for `/chat/completions`.
pub(crate) fn chat_body(req: &ChatRequest) -> Result<Value, GatewayError> {
    let messages = req.messages.iter().map(wire_message).collect::<Result<Vec<_>, _>>()?;
    let mut body = json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.params.temperature,
        "top_p": req.params.top_p,
        "max_tokens": req.params.max_tokens,
    });
    if !req.stop_sequences.is_empty() {
        body["stop"] = json!(req.stop_sequences);
    }
    Ok(body)
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.cfg.base_url
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let body = chat_body(req)?;
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::Provider("response has no choices[0].message.content".into()))
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, GatewayError> {
        let resp = self.post("embeddings", &json!({ "model": req.model_id, "input": req.input }))?;
        let arr = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Provider("response has no data[0].embedding".into()))?;
        arr.iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| GatewayError::Provider("non-numeric embedding".into()))
    }
}
