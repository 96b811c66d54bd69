//! Trajectory events and the per-session append-only log.
//!
//! The export format is one JSON object per line:
//! `{"session_id", "loop", "kind", "at", "payload"}`.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;

/// Schema id recorded in every session's opening event.
pub const TRAJECTORY_SCHEMA: &str = "deepsteer.trajectory/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Plan,
    Search,
    Synthesis,
    Reflection,
    Steering,
    Report,
    HeartbeatMeta,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Plan => "plan",
            EventKind::Search => "search",
            EventKind::Synthesis => "synthesis",
            EventKind::Reflection => "reflection",
            EventKind::Steering => "steering",
            EventKind::Report => "report",
            EventKind::HeartbeatMeta => "heartbeat_meta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub session_id: String,
    #[serde(rename = "loop")]
    pub loop_index: u32,
    pub kind: EventKind,
    pub at: DateTime<Utc>,
    pub payload: Value,
}

impl TrajectoryEvent {
    /// Model calls recorded in the payload.
    pub fn llm_calls(&self) -> u64 {
        self.payload.get("llm_calls").and_then(Value::as_u64).unwrap_or(0)
    }

    pub fn action(&self) -> Option<&str> {
        self.payload.get("action").and_then(Value::as_str)
    }
}

/// Serialize events as line-delimited JSON, newline-terminated.
pub fn to_jsonl(events: &[TrajectoryEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct StatsParseError {
    pub line: usize,
    pub message: String,
}

/// Parse line-delimited events. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<TrajectoryEvent>, StatsParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StatsParseError {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, events: &[TrajectoryEvent]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(to_jsonl(events).as_bytes())?;
    file.sync_all()
}

/// Append-only event log. Subscribers wait on the length watch and read
/// by index, so a slow reader can never miss an event.
#[derive(Debug)]
pub struct TrajectoryLog {
    events: Mutex<Vec<TrajectoryEvent>>,
    len: watch::Sender<(usize, bool)>,
}

impl Default for TrajectoryLog {
    fn default() -> Self {
        Self::new()
    }
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self {
            events: Mutex::new(Vec::new()),
            len: watch::channel((0, false)).0,
        }
    }

    pub fn append(&self, event: TrajectoryEvent) {
        let mut events = self.events.lock().unwrap();
        events.push(event);
        let n = events.len();
        self.len.send_modify(|s| s.0 = n);
    }

    /// Mark the log complete; no further events follow.
    pub fn close(&self) {
        self.len.send_modify(|s| s.1 = true);
    }

    pub fn is_closed(&self) -> bool {
        self.len.borrow().1
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TrajectoryEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn since(&self, from: usize) -> Vec<TrajectoryEvent> {
        let events = self.events.lock().unwrap();
        events.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Receiver of `(length, closed)` updates.
    pub fn subscribe(&self) -> watch::Receiver<(usize, bool)> {
        self.len.subscribe()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.events.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;
    use serde_json::json;

    fn event(kind: EventKind) -> TrajectoryEvent {
        TrajectoryEvent {
            session_id: "s".into(),
            loop_index: 0,
            kind,
            at: fixture_epoch(),
            payload: json!({"llm_calls": 2}),
        }
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let events = vec![event(EventKind::Plan), event(EventKind::HeartbeatMeta)];
        let text = to_jsonl(&events);
        assert!(text.starts_with(r#"{"session_id":"s","loop":0,"kind":"plan","at":"2025-06-01T09:00:00Z","payload""#));
        assert_eq!(parse_jsonl(&text).unwrap(), events);
        assert_eq!(events[0].llm_calls(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = to_jsonl(&[event(EventKind::Plan)]);
        let err = parse_jsonl(&format!("{good}\n{{broken\n")).unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[tokio::test]
    async fn subscribers_see_appends() {
        let log = TrajectoryLog::new();
        let mut rx = log.subscribe();
        log.append(event(EventKind::Plan));
        rx.changed().await.unwrap();
        assert_eq!(rx.borrow().0, 1);
        log.close();
        rx.changed().await.unwrap();
        assert!(rx.borrow().1);
    }
}
