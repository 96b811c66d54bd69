//! External tools reachable over HTTP or stdio, exposed as providers.
//!
//! Request: `{"operation": "search", "query": <text>, "connector": <id>}`.
//! Response: a JSON array of rows, or an object with a `results` array.
//! Rows carrying `url`/`title`/`snippet` map directly; any other row is
//! rendered as compact JSON in the snippet under a synthetic
//! `tool://<id>/row/<n>` URL.

use std::process::Stdio;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;

use super::{Fetcher, RawResult, RegistryError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum Transport {
    Http { endpoint: String },
    Stdio { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolConnector {
    pub id: String,
    #[serde(flatten)]
    pub transport: Transport,
    #[serde(default = "default_capabilities")]
    pub capabilities: Vec<String>,
}

fn default_capabilities() -> Vec<String> {
    vec!["search".into()]
}

impl ToolConnector {
    pub fn http(id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            transport: Transport::Http {
                endpoint: endpoint.into(),
            },
            capabilities: default_capabilities(),
        }
    }

    pub fn stdio<I, S>(id: impl Into<String>, command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: id.into(),
            transport: Transport::Stdio {
                command: command.into_iter().map(Into::into).collect(),
            },
            capabilities: default_capabilities(),
        }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |reason: &str| RegistryError::InvalidConnector {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(invalid("id must be non-empty without whitespace"));
        }
        if !self.capabilities.iter().any(|c| c == "search") {
            return Err(invalid("connector must offer the \"search\" operation"));
        }
        match &self.transport {
            Transport::Http { endpoint } => match url::Url::parse(endpoint) {
                Ok(u) if u.scheme() == "http" || u.scheme() == "https" => Ok(()),
                _ => Err(invalid("http transport needs an http(s) endpoint")),
            },
            Transport::Stdio { command } => {
                if command.first().is_some_and(|c| !c.trim().is_empty()) {
                    Ok(())
                } else {
                    Err(invalid("stdio transport needs a command"))
                }
            }
        }
    }

    fn request_body(&self, query: &str) -> Value {
        json!({"operation": "search", "query": query, "connector": self.id})
    }
}

/// Fetch backend that forwards queries to a [`ToolConnector`].
pub struct ConnectorFetcher {
    connector: ToolConnector,
    client: reqwest::Client,
}

impl ConnectorFetcher {
    pub fn new(connector: ToolConnector) -> Self {
        Self {
            connector,
            client: reqwest::Client::new(),
        }
    }

    async fn call_http(&self, endpoint: &str, query: &str) -> Result<Value, String> {
        let response = self
            .client
            .post(endpoint)
            .json(&self.connector.request_body(query))
            .send()
            .await
            .map_err(|e| format!("request failed: {e}"))?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("connector returned HTTP {}", status.as_u16()));
        }
        response.json().await.map_err(|e| format!("bad response body: {e}"))
    }

    async fn call_stdio(&self, command: &[String], query: &str) -> Result<Value, String> {
        let mut child = tokio::process::Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| format!("cannot start {:?}: {e}", command[0]))?;
        let mut line = self.connector.request_body(query).to_string();
        line.push('\n');
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(line.as_bytes())
                .await
                .map_err(|e| format!("cannot write request: {e}"))?;
        }
        let output = child
            .wait_with_output()
            .await
            .map_err(|e| format!("connector process failed: {e}"))?;
        if !output.status.success() {
            return Err(format!(
                "connector exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ));
        }
        serde_json::from_slice(&output.stdout).map_err(|e| format!("bad connector output: {e}"))
    }
}

#[async_trait]
impl Fetcher for ConnectorFetcher {
    fn is_live(&self) -> bool {
        match &self.connector.transport {
            Transport::Http { endpoint } => !url::Url::parse(endpoint)
                .ok()
                .and_then(|u| u.host_str().map(str::to_string))
                .is_some_and(|h| h == "localhost" || h == "127.0.0.1" || h == "[::1]"),
            Transport::Stdio { .. } => false,
        }
    }

    async fn fetch(&self, _provider: &str, query: &str) -> Result<Vec<RawResult>, String> {
        let value = match &self.connector.transport {
            Transport::Http { endpoint } => self.call_http(endpoint, query).await?,
            Transport::Stdio { command } => self.call_stdio(command, query).await?,
        };
        rows_to_results(&self.connector.id, value)
    }
}

/// Convert a connector response into raw results.
pub fn rows_to_results(connector_id: &str, value: Value) -> Result<Vec<RawResult>, String> {
    let rows = match value {
        Value::Array(rows) => rows,
        Value::Object(mut obj) => match obj.remove("results") {
            Some(Value::Array(rows)) => rows,
            _ => return Err("response object has no \"results\" array".into()),
        },
        _ => return Err("response is neither an array nor an object".into()),
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(n, row)| {
            let field = |name: &str| row.get(name).and_then(Value::as_str).map(str::to_string);
            let url = field("url").unwrap_or_else(|| format!("tool://{connector_id}/row/{n}"));
            let snippet = field("snippet")
                .or_else(|| field("content"))
                .unwrap_or_else(|| row.to_string());
            RawResult {
                url,
                title: field("title").unwrap_or_else(|| format!("{connector_id} row {n}")),
                snippet,
                raw_content: field("raw_content"),
                score: row.get("score").and_then(Value::as_f64),
                published_date: None,
            }
        })
        .collect())
}
