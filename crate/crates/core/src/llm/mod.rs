//! Completion gateway over interchangeable model backends.
//!
//! [`LlmGateway`] wraps any [`LlmProvider`] with retry and exponential
//! backoff on transient failures, a minimum inter-request delay shared by
//! every clone of the gateway, and an audit log of every call made.

mod live;
mod scripted;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{live_provider_from_env, AnthropicProvider, OpenAiCompatibleProvider, LIVE_PROVIDERS};
pub use scripted::{Script, ScriptedProvider, SequenceProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    InitialPlan,
    QueryPlan,
    Synthesis,
    Reflection,
    DirectiveSummary,
    Report,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::InitialPlan => "initial_plan",
            PromptKind::QueryPlan => "query_plan",
            PromptKind::Synthesis => "synthesis",
            PromptKind::Reflection => "reflection",
            PromptKind::DirectiveSummary => "directive_summary",
            PromptKind::Report => "report",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const KEY_MARKER_OPEN: &str = "<!-- request-key: ";
const KEY_MARKER_CLOSE: &str = " -->";

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub kind: PromptKind,
    /// Full prompt text. The first line is the request-key marker.
    pub prompt: String,
    pub model: Option<String>,
    pub temperature: f32,
}

impl CompletionRequest {
    /// Build a request whose prompt starts with `<!-- request-key: KEY -->`.
    pub fn new(kind: PromptKind, key: &str, body: &str) -> Self {
        Self {
            kind,
            prompt: format!("{KEY_MARKER_OPEN}{key}{KEY_MARKER_CLOSE}\n{body}"),
            model: None,
            temperature: 0.0,
        }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn key(&self) -> Option<&str> {
        request_key(&self.prompt)
    }

    /// Same request with an instruction appended, used for the single
    /// model retry after unparseable output.
    pub fn with_reminder(&self, reminder: &str) -> Self {
        let mut next = self.clone();
        next.prompt.push_str("\n\n");
        next.prompt.push_str(reminder);
        next
    }
}

/// Extract the request key from a prompt's marker line.
pub fn request_key(prompt: &str) -> Option<&str> {
    let first = prompt.lines().next()?;
    first
        .strip_prefix(KEY_MARKER_OPEN)?
        .strip_suffix(KEY_MARKER_CLOSE)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider authentication failed: {0}")]
    Auth(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("no scripted response for {kind}/{key}")]
    ScriptMiss { kind: PromptKind, key: String },
    #[error("provider {provider} exhausted after {attempts} attempts: {last}")]
    Exhausted {
        provider: String,
        attempts: u32,
        last: String,
    },
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transient(_))
    }
}

/// Map an HTTP status to the gateway's retry taxonomy.
pub fn classify_status(status: u16, body: String) -> LlmError {
    match status {
        401 | 403 => LlmError::Auth(format!("{status}: {body}")),
        408 | 429 | 500..=599 => LlmError::Transient(format!("{status}: {body}")),
        _ => LlmError::Rejected(format!("{status}: {body}")),
    }
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the provider reaches a network backend.
    fn is_live(&self) -> bool;

    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

#[async_trait]
pub trait Sleeper: Send + Sync {
    async fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default)]
pub struct TokioSleeper;

#[async_trait]
impl Sleeper for TokioSleeper {
    async fn sleep(&self, duration: Duration) {
        if !duration.is_zero() {
            tokio::time::sleep(duration).await;
        }
    }
}

/// Records requested delays without waiting.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

#[async_trait]
impl Sleeper for RecordingSleeper {
    async fn sleep(&self, duration: Duration) {
        self.delays.lock().unwrap().push(duration);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub min_interval: Duration,
}

impl RetryPolicy {
    pub fn test_profile() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(100),
            min_interval: Duration::ZERO,
        }
    }

    pub fn live_profile() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            min_interval: Duration::from_millis(250),
        }
    }

    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self::test_profile()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub provider: String,
    pub live: bool,
    pub kind: PromptKind,
    pub key: Option<String>,
}

struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<tokio::time::Instant>>,
}

impl RateLimiter {
    /// Reserve the next request slot and return how long to wait for it.
    fn reserve(&self) -> Duration {
        if self.min_interval.is_zero() {
            return Duration::ZERO;
        }
        let now = tokio::time::Instant::now();
        let mut slot = self.next_slot.lock().unwrap();
        let start = slot.map_or(now, |s| s.max(now));
        *slot = Some(start + self.min_interval);
        start - now
    }
}

#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    limiter: Arc<RateLimiter>,
    audit: Arc<Mutex<Vec<AuditEntry>>>,
    model: Option<String>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("provider", &self.provider.name())
            .field("policy", &self.policy)
            .finish()
    }
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>, policy: RetryPolicy) -> Self {
        Self {
            provider,
            policy,
            sleeper: Arc::new(TokioSleeper),
            limiter: Arc::new(RateLimiter {
                min_interval: policy.min_interval,
                next_slot: Mutex::new(None),
            }),
            audit: Arc::new(Mutex::new(Vec::new())),
            model: None,
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn is_live(&self) -> bool {
        self.provider.is_live()
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().clone()
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut request = request.clone();
        if request.model.is_none() {
            request.model = self.model.clone();
        }
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let wait = self.limiter.reserve();
            self.sleeper.sleep(wait).await;
            self.audit.lock().unwrap().push(AuditEntry {
                provider: self.provider.name().to_string(),
                live: self.provider.is_live(),
                kind: request.kind,
                key: request.key().map(str::to_string),
            });
            match self.provider.complete(&request).await {
                Ok(text) => return Ok(text),
                Err(err) if err.is_transient() => {
                    if attempt > self.policy.max_retries {
                        return Err(LlmError::Exhausted {
                            provider: self.provider.name().to_string(),
                            attempts: attempt,
                            last: err.to_string(),
                        });
                    }
                    let delay = self.policy.backoff(attempt);
                    tracing::warn!(provider = self.provider.name(), attempt, ?delay, "transient LLM failure: {err}");
                    self.sleeper.sleep(delay).await;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Failure of [`LlmGateway::complete_parsed`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParsedError<E: fmt::Display> {
    #[error(transparent)]
    Llm(LlmError),
    #[error("{0}")]
    Parse(E),
}

impl LlmGateway {
    /// Complete and parse. Unparseable output earns exactly one retry with
    /// [`crate::prompts::JSON_REMINDER`] appended. Returns the outcome and
    /// the number of completions issued.
    pub async fn complete_parsed<T, E: fmt::Display>(
        &self,
        request: &CompletionRequest,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> (Result<T, ParsedError<E>>, u32) {
        let first = match self.complete(request).await {
            Ok(text) => text,
            Err(err) => return (Err(ParsedError::Llm(err)), 1),
        };
        match parse(&first) {
            Ok(value) => return (Ok(value), 1),
            Err(err) => tracing::warn!(kind = %request.kind, "unparseable model output, retrying once: {err}"),
        }
        let retry = request.with_reminder(crate::prompts::JSON_REMINDER);
        match self.complete(&retry).await {
            Ok(text) => (parse(&text).map_err(ParsedError::Parse), 2),
            Err(err) => (Err(ParsedError::Llm(err)), 2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transient() -> Result<String, LlmError> {
        Err(LlmError::Transient("503".into()))
    }

    #[tokio::test]
    async fn backoff_schedule_doubles_from_base() {
        let provider = Arc::new(SequenceProvider::new(vec![transient(), transient(), Ok("done".into())]));
        let sleeper = Arc::new(RecordingSleeper::default());
        let gw = LlmGateway::new(provider.clone(), RetryPolicy::test_profile()).with_sleeper(sleeper.clone());
        let req = CompletionRequest::new(PromptKind::Report, "final", "write");
        assert_eq!(gw.complete(&req).await.unwrap(), "done");
        let waits: Vec<Duration> = sleeper.delays().into_iter().filter(|d| !d.is_zero()).collect();
        assert_eq!(waits, vec![Duration::from_millis(100), Duration::from_millis(200)]);
        assert_eq!(provider.calls(), 3);
    }

    #[tokio::test]
    async fn exhaustion_after_max_retries() {
        let provider = Arc::new(SequenceProvider::new(vec![transient(); 6]));
        let sleeper = Arc::new(RecordingSleeper::default());
        let gw = LlmGateway::new(provider.clone(), RetryPolicy::test_profile()).with_sleeper(sleeper.clone());
        let err = gw
            .complete(&CompletionRequest::new(PromptKind::Report, "k", "p"))
            .await
            .unwrap_err();
        assert!(matches!(err, LlmError::Exhausted { attempts: 4, .. }));
        let waits: Vec<u128> = sleeper.delays().iter().filter(|d| !d.is_zero()).map(|d| d.as_millis()).collect();
        assert_eq!(waits, vec![100, 200, 400]);
        for pair in waits.windows(2) {
            assert_eq!(pair[1], pair[0] * 2);
        }
    }

    #[tokio::test]
    async fn auth_errors_are_not_retried() {
        let provider = Arc::new(SequenceProvider::new(vec![
            Err(LlmError::Auth("401".into())),
            Ok("never".into()),
        ]));
        let gw = LlmGateway::new(provider.clone(), RetryPolicy::test_profile())
            .with_sleeper(Arc::new(RecordingSleeper::default()));
        let err = gw
            .complete(&CompletionRequest::new(PromptKind::Report, "k", "p"))
            .await
            .unwrap_err();
        assert!(matches!(err, LlmError::Auth(_)));
        assert_eq!(provider.calls(), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn rate_limiter_spaces_requests() {
        let provider = Arc::new(SequenceProvider::new(vec![Ok("a".into()), Ok("b".into()), Ok("c".into())]));
        let policy = RetryPolicy {
            min_interval: Duration::from_millis(500),
            ..RetryPolicy::test_profile()
        };
        let gw = LlmGateway::new(provider, policy);
        let clone = gw.clone();
        let start = tokio::time::Instant::now();
        let req = CompletionRequest::new(PromptKind::Report, "k", "p");
        gw.complete(&req).await.unwrap();
        clone.complete(&req).await.unwrap();
        gw.complete(&req).await.unwrap();
        assert_eq!(start.elapsed(), Duration::from_millis(1000));
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify_status(401, String::new()), LlmError::Auth(_)));
        assert!(matches!(classify_status(403, String::new()), LlmError::Auth(_)));
        assert!(classify_status(429, String::new()).is_transient());
        assert!(classify_status(503, String::new()).is_transient());
        assert!(classify_status(408, String::new()).is_transient());
        assert!(matches!(classify_status(400, String::new()), LlmError::Rejected(_)));
    }

    #[test]
    fn request_key_round_trip() {
        let req = CompletionRequest::new(PromptKind::Reflection, "loop-2", "body\nmore");
        assert_eq!(req.key(), Some("loop-2"));
        assert!(req.prompt.ends_with("body\nmore"));
        assert_eq!(request_key("no marker"), None);
    }
}
