//! HTTP clients for hosted model APIs. Credentials come from environment
//! variables and are never logged.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{classify_status, CompletionRequest, LlmError, LlmProvider};

/// `(provider name, credential variable, OpenAI-compatible base URL)`.
/// Anthropic uses its own messages API and has no base URL here.
pub const LIVE_PROVIDERS: &[(&str, &str, Option<&str>)] = &[
    ("openai", "OPENAI_API_KEY", Some("https://api.openai.com/v1")),
    ("groq", "GROQ_API_KEY", Some("https://api.groq.com/openai/v1")),
    ("sambanova", "SAMBANOVA_API_KEY", Some("https://api.sambanova.ai/v1")),
    ("anthropic", "ANTHROPIC_API_KEY", None),
];

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(180))
        .build()
        .expect("http client")
}

fn transport_error(err: reqwest::Error) -> LlmError {
    // connection failures and timeouts are worth retrying
    LlmError::Transient(err.without_url().to_string())
}

pub struct OpenAiCompatibleProvider {
    name: String,
    base_url: String,
    api_key: String,
    model: String,
    client: reqwest::Client,
}

impl OpenAiCompatibleProvider {
    pub fn new(name: &str, base_url: &str, api_key: String, model: &str) -> Self {
        Self {
            name: name.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
            client: http_client(),
        }
    }
}

#[async_trait]
impl LlmProvider for OpenAiCompatibleProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_live(&self) -> bool {
        true
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let model = request.model.as_deref().unwrap_or(&self.model);
        let body = json!({
            "model": model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(transport_error)?;
        if status >= 400 {
            return Err(classify_status(status, text));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Rejected(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Rejected("response has no message content".into()))
    }
}

pub struct AnthropicProvider {
    api_key: String,
    model: String,
    client: reqwest::Client,
}

impl AnthropicProvider {
    pub fn new(api_key: String, model: &str) -> Self {
        Self {
            api_key,
            model: model.to_string(),
            client: http_client(),
        }
    }
}

#[async_trait]
impl LlmProvider for AnthropicProvider {
    fn name(&self) -> &str {
        "anthropic"
    }

    fn is_live(&self) -> bool {
        true
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let model = request.model.as_deref().unwrap_or(&self.model);
        let body = json!({
            "model": model,
            "max_tokens": 8192,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let resp = self
            .client
            .post("https://api.anthropic.com/v1/messages")
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", "2023-06-01")
            .json(&body)
            .send()
            .await
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(transport_error)?;
        if status >= 400 {
            return Err(classify_status(status, text));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Rejected(format!("bad response body: {e}")))?;
        let parts: Vec<&str> = value["content"]
            .as_array()
            .map(|blocks| blocks.iter().filter_map(|b| b["text"].as_str()).collect())
            .unwrap_or_default();
        if parts.is_empty() {
            return Err(LlmError::Rejected("response has no text content".into()));
        }
        Ok(parts.join(""))
    }
}

/// Build the named live provider from its credential variable.
pub fn live_provider_from_env(provider: &str, model: &str) -> Result<Arc<dyn LlmProvider>, String> {
    let (name, var, base) = LIVE_PROVIDERS
        .iter()
        .find(|(name, _, _)| *name == provider)
        .ok_or_else(|| format!("unknown LLM provider {provider:?}"))?;
    let key = std::env::var(var)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| format!("{var} is not set"))?;
    Ok(match base {
        Some(base) => Arc::new(OpenAiCompatibleProvider::new(name, base, key, model)),
        None => Arc::new(AnthropicProvider::new(key, model)),
    })
}
