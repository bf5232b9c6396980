//! Thin chat-completions and embeddings clients.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{EmbeddingProvider, ModelProvider, ProviderError};
use crate::protocol::PromptBundle;

pub const MODEL_ENDPOINT_VAR: &str = "MODEL_ENDPOINT";
pub const MODEL_API_KEY_VAR: &str = "MODEL_API_KEY";
pub const MODEL_NAME_VAR: &str = "MODEL_NAME";
pub const EMBED_ENDPOINT_VAR: &str = "EMBED_ENDPOINT";

const TIMEOUT: Duration = Duration::from_secs(120);

fn client() -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(TIMEOUT)
        .build()
        .map_err(|e| ProviderError::Config(e.to_string()))
}

fn env_var(name: &str) -> Result<String, ProviderError> {
    std::env::var(name).map_err(|_| ProviderError::Config(format!("environment variable {name} is not set")))
}

fn post_json(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, ProviderError> {
    let mut req = client.post(endpoint).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::Http { status: status.as_u16(), body: text });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Decode(e.to_string()))
}

/// Chat-completions style client sending text plus base64 PNG image parts.
pub struct HttpModelProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpModelProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Result<Self, ProviderError> {
        Ok(HttpModelProvider { endpoint: endpoint.into(), api_key, model: model.into(), client: client()? })
    }

    /// `MODEL_ENDPOINT` (required), `MODEL_API_KEY` and `MODEL_NAME` (optional).
    pub fn from_env() -> Result<Self, ProviderError> {
        let endpoint = env_var(MODEL_ENDPOINT_VAR)?;
        let model = std::env::var(MODEL_NAME_VAR).unwrap_or_else(|_| "default".into());
        Self::new(endpoint, std::env::var(MODEL_API_KEY_VAR).ok(), model)
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let mut parts = vec![json!({"type": "text", "text": bundle.user_text})];
        for img in &bundle.images {
            parts.push(json!({"type": "text", "text": format!("[image: {}]", img.label)}));
            let b64 = base64::engine::general_purpose::STANDARD.encode(&img.data);
            parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
        }
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": parts},
            ],
        })
    }
}

impl ModelProvider for HttpModelProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let body = self.request_body(bundle);
        let resp = post_json(&self.client, &self.endpoint, self.api_key.as_deref(), &body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Decode("missing choices[0].message.content".into()))
    }
}

/// Embeddings client: POST `{"input": text}`, read `data[0].embedding`.
pub struct HttpEmbedder {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, ProviderError> {
        Ok(HttpEmbedder { endpoint: endpoint.into(), api_key, client: client()? })
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        Self::new(env_var(EMBED_ENDPOINT_VAR)?, std::env::var(MODEL_API_KEY_VAR).ok())
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let resp = post_json(&self.client, &self.endpoint, self.api_key.as_deref(), &json!({"input": text}))?;
        resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Decode("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Decode("non-numeric embedding entry".into())))
            .collect()
    }
}
