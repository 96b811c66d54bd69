//! Human steering queue.
//!
//! Messages can be enqueued at any time. Reflection takes an atomic
//! snapshot of everything queued so far; messages arriving while that
//! snapshot is active stay queued and are never part of it. After
//! reflection, addressed messages are cleared and the rest of the snapshot
//! returns to the queue ahead of the late arrivals.

use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, LlmError, LlmGateway, PromptKind};
use crate::prompts;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageState {
    Queued,
    Snapshotted,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringMessage {
    pub index: usize,
    pub text: String,
    pub arrived_at: DateTime<Utc>,
    pub state: MessageState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SteeringError {
    #[error("steering message is empty")]
    InvalidMessage,
    #[error("a snapshot is already active")]
    SnapshotInProgress,
    #[error("no active snapshot to merge")]
    NoActiveSnapshot,
    #[error("message {0} is not part of the active snapshot")]
    InvalidClear(usize),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SteeringQueue {
    messages: Vec<SteeringMessage>,
    snapshot_boundary: Option<usize>,
}

impl SteeringQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, text: &str, now: DateTime<Utc>) -> Result<usize, SteeringError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(SteeringError::InvalidMessage);
        }
        let index = self.messages.len();
        self.messages.push(SteeringMessage {
            index,
            text: text.to_string(),
            arrived_at: now,
            state: MessageState::Queued,
        });
        Ok(index)
    }

    pub fn snapshot(&mut self) -> Result<Vec<SteeringMessage>, SteeringError> {
        if self.snapshot_boundary.is_some() {
            return Err(SteeringError::SnapshotInProgress);
        }
        let mut taken = Vec::new();
        for msg in &mut self.messages {
            if msg.state == MessageState::Queued {
                msg.state = MessageState::Snapshotted;
                taken.push(msg.clone());
            }
        }
        self.snapshot_boundary = Some(self.messages.len());
        Ok(taken)
    }

    /// Clear the addressed snapshot messages and requeue the rest.
    pub fn merge_post_reflection(&mut self, cleared: &[usize]) -> Result<(), SteeringError> {
        let boundary = self.snapshot_boundary.ok_or(SteeringError::NoActiveSnapshot)?;
        for &idx in cleared {
            let in_snapshot = idx < boundary
                && self.messages.get(idx).map(|m| m.state) == Some(MessageState::Snapshotted);
            if !in_snapshot {
                return Err(SteeringError::InvalidClear(idx));
            }
        }
        for msg in &mut self.messages[..boundary] {
            if msg.state == MessageState::Snapshotted {
                msg.state = if cleared.contains(&msg.index) {
                    MessageState::Cleared
                } else {
                    MessageState::Queued
                };
            }
        }
        self.snapshot_boundary = None;
        Ok(())
    }

    pub fn has_active_snapshot(&self) -> bool {
        self.snapshot_boundary.is_some()
    }

    pub fn snapshot_boundary(&self) -> Option<usize> {
        self.snapshot_boundary
    }

    /// Queued messages in processing order.
    pub fn queued(&self) -> Vec<&SteeringMessage> {
        self.messages
            .iter()
            .filter(|m| m.state == MessageState::Queued)
            .collect()
    }

    pub fn queued_count(&self) -> usize {
        self.queued().len()
    }

    /// Every message ever received, cleared ones included.
    pub fn messages(&self) -> &[SteeringMessage] {
        &self.messages
    }

    pub fn get(&self, index: usize) -> Option<&SteeringMessage> {
        self.messages.get(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    Focus,
    Exclude,
    Prioritize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub kind: DirectiveKind,
    pub terms: Vec<String>,
    pub origin_indices: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectiveError {
    #[error("no steering messages to summarize")]
    Empty,
    #[error("could not parse directive summary: {0}")]
    Parse(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn directive_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(
            r"(?i)^(?:please\s+)?(focus\s+on|focus|concentrate\s+on|exclude|avoid|ignore|skip|do\s+not\s+include|don't\s+include|prioriti[sz]e)\s+(.+)$",
        )
        .unwrap()
    })
}

/// Local pattern extraction for a single message. Guidance that matches no
/// pattern becomes a focus directive carrying the whole message.
pub fn extract_directive(message: &SteeringMessage) -> Directive {
    let body = message.text.trim().trim_end_matches(['.', '!', ';']);
    let (kind, rest) = match directive_pattern().captures(body) {
        Some(caps) => {
            let verb = caps[1].to_lowercase();
            let kind = if verb.starts_with("priorit") {
                DirectiveKind::Prioritize
            } else if verb.starts_with("focus") || verb.starts_with("concentrate") {
                DirectiveKind::Focus
            } else {
                DirectiveKind::Exclude
            };
            (kind, caps[2].to_string())
        }
        None => (DirectiveKind::Focus, body.to_string()),
    };
    static SPLITTER: OnceLock<Regex> = OnceLock::new();
    let splitter = SPLITTER.get_or_init(|| Regex::new(r"(?i)\s*,\s*|\s+and\s+|\s+or\s+").unwrap());
    let mut terms: Vec<String> = splitter
        .split(&rest)
        .map(|t| text::tidy(t.trim_matches(|c: char| c.is_ascii_punctuation() && c != '-')))
        .filter(|t| !t.is_empty())
        .collect();
    if terms.is_empty() {
        terms.push(text::tidy(&rest));
    }
    Directive {
        kind,
        terms,
        origin_indices: vec![message.index],
    }
}

pub fn build_directive_prompt(topic: &str, messages: &[SteeringMessage]) -> String {
    let listing = messages
        .iter()
        .map(|m| format!("[{}] {}", m.index, m.text))
        .collect::<Vec<_>>()
        .join("\n");
    prompts::render(
        prompts::DIRECTIVE_SUMMARY,
        &[("research_topic", topic), ("steering_messages", &listing)],
    )
}

pub fn parse_directives(llm_text: &str, messages: &[SteeringMessage]) -> Result<Vec<Directive>, DirectiveError> {
    let value = text::extract_json(llm_text, Some('{')).map_err(DirectiveError::Parse)?;
    let items = value
        .get("directives")
        .and_then(|d| d.as_array())
        .ok_or_else(|| DirectiveError::Parse("missing \"directives\" array".into()))?;
    let origins: Vec<usize> = messages.iter().map(|m| m.index).collect();
    let directives: Vec<Directive> = items
        .iter()
        .filter_map(|item| {
            let kind = match item.get("kind").and_then(|k| k.as_str()).map(str::to_lowercase).as_deref() {
                Some("exclude") => DirectiveKind::Exclude,
                Some("prioritize") | Some("prioritise") => DirectiveKind::Prioritize,
                _ => DirectiveKind::Focus,
            };
            let terms: Vec<String> = item
                .get("terms")?
                .as_array()?
                .iter()
                .filter_map(|t| t.as_str())
                .map(text::tidy)
                .filter(|t| !t.is_empty())
                .collect();
            (!terms.is_empty()).then(|| Directive {
                kind,
                terms,
                origin_indices: origins.clone(),
            })
        })
        .collect();
    if directives.is_empty() {
        return Err(DirectiveError::Parse("no usable directives".into()));
    }
    Ok(directives)
}

/// Distill steering messages into directives. A single message is handled
/// locally; several are condensed by the model.
pub async fn summarize_directives(
    topic: &str,
    messages: &[SteeringMessage],
    llm: &LlmGateway,
    request_key: &str,
) -> Result<Vec<Directive>, DirectiveError> {
    match messages {
        [] => Err(DirectiveError::Empty),
        [single] => Ok(vec![extract_directive(single)]),
        many => {
            let request = CompletionRequest::new(
                PromptKind::DirectiveSummary,
                request_key,
                &build_directive_prompt(topic, many),
            );
            let reply = llm.complete(&request).await?;
            parse_directives(&reply, many)
        }
    }
}

/// Terms of every directive of `kind`.
pub fn terms_of(directives: &[Directive], kind: DirectiveKind) -> Vec<&str> {
    directives
        .iter()
        .filter(|d| d.kind == kind)
        .flat_map(|d| d.terms.iter().map(String::as_str))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;
    use crate::llm::{RetryPolicy, Script, ScriptedProvider};
    use std::sync::Arc;

    fn now() -> DateTime<Utc> {
        fixture_epoch()
    }

    fn msg(index: usize, text: &str) -> SteeringMessage {
        SteeringMessage {
            index,
            text: text.into(),
            arrived_at: now(),
            state: MessageState::Queued,
        }
    }

    #[test]
    fn enqueue_assigns_dense_indices() {
        let mut q = SteeringQueue::new();
        assert_eq!(q.enqueue("first", now()).unwrap(), 0);
        assert_eq!(q.enqueue("second", now()).unwrap(), 1);
        assert_eq!(q.get(0).unwrap().state, MessageState::Queued);
        assert_eq!(q.enqueue("  ", now()), Err(SteeringError::InvalidMessage));
    }

    #[test]
    fn snapshot_excludes_late_arrivals() {
        let mut q = SteeringQueue::new();
        q.enqueue("m0", now()).unwrap();
        q.enqueue("m1", now()).unwrap();
        let snap = q.snapshot().unwrap();
        assert_eq!(snap.iter().map(|m| m.index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(q.snapshot(), Err(SteeringError::SnapshotInProgress));
        q.enqueue("m2", now()).unwrap();
        assert_eq!(q.get(2).unwrap().state, MessageState::Queued);
        q.merge_post_reflection(&[0]).unwrap();
        let queued: Vec<&str> = q.queued().iter().map(|m| m.text.as_str()).collect();
        assert_eq!(queued, vec!["m1", "m2"]);
        assert_eq!(q.get(0).unwrap().state, MessageState::Cleared);
    }

    #[test]
    fn empty_snapshot_still_sets_boundary() {
        let mut q = SteeringQueue::new();
        assert!(q.snapshot().unwrap().is_empty());
        assert!(q.has_active_snapshot());
        q.merge_post_reflection(&[]).unwrap();
        assert!(!q.has_active_snapshot());
    }

    #[test]
    fn clearing_a_late_arrival_is_rejected() {
        let mut q = SteeringQueue::new();
        q.enqueue("m0", now()).unwrap();
        q.snapshot().unwrap();
        q.enqueue("m1", now()).unwrap();
        assert_eq!(q.merge_post_reflection(&[1]), Err(SteeringError::InvalidClear(1)));
        // state untouched by the failed merge
        assert!(q.has_active_snapshot());
        assert_eq!(q.get(0).unwrap().state, MessageState::Snapshotted);
        assert_eq!(q.merge_post_reflection(&[7]), Err(SteeringError::InvalidClear(7)));
        assert_eq!(SteeringQueue::new().merge_post_reflection(&[]), Err(SteeringError::NoActiveSnapshot));
    }

    #[test]
    fn clear_nothing_requeues_snapshot_first() {
        let mut q = SteeringQueue::new();
        q.enqueue("a", now()).unwrap();
        q.enqueue("b", now()).unwrap();
        q.snapshot().unwrap();
        q.enqueue("c", now()).unwrap();
        q.merge_post_reflection(&[]).unwrap();
        let order: Vec<usize> = q.queued().iter().map(|m| m.index).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn pattern_extraction() {
        let d = extract_directive(&msg(0, "exclude blockchain"));
        assert_eq!(d.kind, DirectiveKind::Exclude);
        assert_eq!(d.terms, vec!["blockchain"]);
        let d = extract_directive(&msg(3, "Focus on peer-reviewed sources."));
        assert_eq!(d.kind, DirectiveKind::Focus);
        assert_eq!(d.terms, vec!["peer-reviewed sources"]);
        assert_eq!(d.origin_indices, vec![3]);
        let d = extract_directive(&msg(1, "Prioritize recent publications and preprints"));
        assert_eq!(d.kind, DirectiveKind::Prioritize);
        assert_eq!(d.terms, vec!["recent publications", "preprints"]);
        let d = extract_directive(&msg(2, "what about unions?"));
        assert_eq!(d.kind, DirectiveKind::Focus);
        assert_eq!(d.terms, vec!["what about unions"]);
    }

    fn gateway(script: Script) -> LlmGateway {
        LlmGateway::new(Arc::new(ScriptedProvider::new(script)), RetryPolicy::test_profile())
    }

    #[tokio::test]
    async fn multiple_messages_are_condensed_by_the_model() {
        let script = Script::new().with(
            PromptKind::DirectiveSummary,
            "loop-0",
            "<answer>{\"directives\": [{\"kind\": \"focus\", \"terms\": [\"emphasize recent peer-reviewed literature\"]}]}</answer>",
        );
        let messages = vec![msg(0, "focus on peer-reviewed sources"), msg(1, "prioritize recent papers")];
        let out = summarize_directives("topic", &messages, &gateway(script), "loop-0")
            .await
            .unwrap();
        assert_eq!(
            out,
            vec![Directive {
                kind: DirectiveKind::Focus,
                terms: vec!["emphasize recent peer-reviewed literature".into()],
                origin_indices: vec![0, 1],
            }]
        );
    }

    #[tokio::test]
    async fn malformed_summary_leaves_queue_untouched() {
        let script = Script::new().with(PromptKind::DirectiveSummary, "loop-0", "sure thing, boss");
        let mut q = SteeringQueue::new();
        q.enqueue("focus on a", now()).unwrap();
        q.enqueue("exclude b", now()).unwrap();
        let before = q.clone();
        let queued: Vec<SteeringMessage> = q.queued().into_iter().cloned().collect();
        let err = summarize_directives("t", &queued, &gateway(script), "loop-0")
            .await
            .unwrap_err();
        assert!(matches!(err, DirectiveError::Parse(_)));
        assert_eq!(q.messages(), before.messages());
        assert_eq!(q.queued_count(), 2);
    }

    #[tokio::test]
    async fn single_message_skips_the_model() {
        // an empty script would ScriptMiss if the model were consulted
        let out = summarize_directives("t", &[msg(0, "exclude blockchain")], &gateway(Script::new()), "k")
            .await
            .unwrap();
        assert_eq!(out[0].terms, vec!["blockchain"]);
    }
}
