//! Client-facing event stream derived from a session's trajectory.
//!
//! Each trajectory event maps to zero or more stream events. Sequence
//! numbers are assigned in mapping order starting at 1, so any subscriber
//! that replays the log from the start computes the same numbers, and a
//! reconnecting client can resume after the last id it saw.

use std::collections::VecDeque;
use std::time::Duration;

use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::engine::trajectory::{EventKind, TrajectoryEvent};
use crate::engine::SessionHandle;

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamEventType {
    PlanUpdated,
    SearchStarted,
    SearchCompleted,
    Synthesis,
    Reflection,
    SteeringAck,
    ReportReady,
    Heartbeat,
}

impl StreamEventType {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamEventType::PlanUpdated => "plan_updated",
            StreamEventType::SearchStarted => "search_started",
            StreamEventType::SearchCompleted => "search_completed",
            StreamEventType::Synthesis => "synthesis",
            StreamEventType::Reflection => "reflection",
            StreamEventType::SteeringAck => "steering_ack",
            StreamEventType::ReportReady => "report_ready",
            StreamEventType::Heartbeat => "heartbeat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub event_type: StreamEventType,
    /// `None` for heartbeats, which are not part of the numbered sequence.
    pub sequence: Option<u64>,
    pub data: Value,
}

impl StreamEvent {
    pub fn heartbeat() -> Self {
        Self {
            event_type: StreamEventType::Heartbeat,
            sequence: None,
            data: json!({}),
        }
    }

    /// Standard event-stream framing: optional `id:`, `event:`, one-line
    /// `data:`, blank line.
    pub fn to_sse_frame(&self) -> String {
        let mut out = String::new();
        if let Some(seq) = self.sequence {
            out.push_str(&format!("id: {seq}\n"));
        }
        out.push_str(&format!("event: {}\ndata: {}\n\n", self.event_type.as_str(), self.data));
        out
    }
}

fn pick(payload: &Value, keys: &[&str]) -> Value {
    let mut out = serde_json::Map::new();
    for k in keys {
        if let Some(v) = payload.get(*k) {
            out.insert((*k).to_string(), v.clone());
        }
    }
    Value::Object(out)
}

fn with_loop(mut data: Value, e: &TrajectoryEvent) -> Value {
    data["loop"] = json!(e.loop_index);
    data
}

/// Stream events for one trajectory event, without sequence numbers.
pub fn map_event(e: &TrajectoryEvent) -> Vec<(StreamEventType, Value)> {
    use StreamEventType as T;
    let p = &e.payload;
    let ledger = |stage: &str| {
        let mut d = with_loop(pick(p, &["version", "tasks"]), e);
        d["stage"] = json!(stage);
        d
    };
    match e.kind {
        EventKind::HeartbeatMeta => vec![(T::PlanUpdated, ledger("initial_plan"))],
        EventKind::Plan => {
            let started = p
                .get("planned")
                .and_then(Value::as_array)
                .map(|qs| {
                    qs.iter()
                        .map(|q| pick(q, &["name", "query", "tool", "task_id"]))
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            vec![
                (T::PlanUpdated, ledger("query_plan")),
                (T::SearchStarted, with_loop(json!({"queries": started}), e)),
            ]
        }
        EventKind::Search => {
            let queries: Vec<Value> = p
                .get("queries")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .map(|q| {
                    let mut s = pick(q, &["name", "tool", "error"]);
                    s["result_count"] = json!(q.get("results").and_then(Value::as_array).map_or(0, Vec::len));
                    s
                })
                .collect();
            let mut d = with_loop(pick(p, &["result_count", "error_count"]), e);
            d["queries"] = json!(queries);
            vec![(T::SearchCompleted, d)]
        }
        EventKind::Synthesis => vec![(
            T::Synthesis,
            with_loop(pick(p, &["summary", "summary_words", "new_sources", "error"]), e),
        )],
        EventKind::Steering => match e.action() {
            Some("enqueue") => {
                let mut d = pick(p, &["index", "text", "queued_count"]);
                d["state"] = json!("queued");
                vec![(T::SteeringAck, with_loop(d, e))]
            }
            _ => Vec::new(),
        },
        EventKind::Reflection => {
            let mut d = with_loop(pick(p, &["terminate", "queued_steering", "version", "error"]), e);
            if let Some(outcome) = p.get("outcome") {
                d["research_complete"] = outcome.get("research_complete").cloned().unwrap_or(json!(false));
                d["knowledge_gap"] = outcome.get("knowledge_gap").cloned().unwrap_or(json!(""));
            }
            if let Some(applied) = p.get("applied") {
                d["cleared"] = applied.get("cleared").cloned().unwrap_or(json!([]));
            }
            vec![(T::Reflection, d), (T::PlanUpdated, ledger("reflection"))]
        }
        EventKind::Report => vec![(
            T::ReportReady,
            pick(p, &["status", "violations", "markdown", "cited", "unused_sources", "error"]),
        )],
    }
}

/// Map a whole trajectory with gapless sequence numbers starting at 1.
pub fn stream_events(events: &[TrajectoryEvent]) -> Vec<StreamEvent> {
    let mut seq = 0;
    events
        .iter()
        .flat_map(map_event)
        .map(|(event_type, data)| {
            seq += 1;
            StreamEvent {
                event_type,
                sequence: Some(seq),
                data,
            }
        })
        .collect()
}

struct Cursor {
    session: SessionHandle,
    rx: watch::Receiver<(usize, bool)>,
    consumed: usize,
    next_seq: u64,
    resume_after: u64,
    pending: VecDeque<StreamEvent>,
    heartbeat: Duration,
    done: bool,
}

impl Cursor {
    async fn next(&mut self) -> Option<StreamEvent> {
        loop {
            if let Some(e) = self.pending.pop_front() {
                return Some(e);
            }
            if self.done {
                return None;
            }
            let closed = self.rx.borrow_and_update().1;
            let fresh = self.session.log().since(self.consumed);
            if fresh.is_empty() {
                if closed {
                    self.done = true;
                    continue;
                }
                tokio::select! {
                    changed = self.rx.changed() => {
                        if changed.is_err() {
                            self.done = true;
                        }
                    }
                    _ = tokio::time::sleep(self.heartbeat) => return Some(StreamEvent::heartbeat()),
                }
                continue;
            }
            self.consumed += fresh.len();
            for e in &fresh {
                for (event_type, data) in map_event(e) {
                    self.next_seq += 1;
                    if self.next_seq > self.resume_after {
                        self.pending.push_back(StreamEvent {
                            event_type,
                            sequence: Some(self.next_seq),
                            data,
                        });
                    }
                }
            }
        }
    }
}

/// Live stream for `session`: every numbered event after `resume_after`,
/// a heartbeat after each quiet `heartbeat` interval, ending once the
/// session's log is closed and drained.
pub fn subscribe(session: SessionHandle, resume_after: u64, heartbeat: Duration) -> impl Stream<Item = StreamEvent> {
    let cursor = Cursor {
        rx: session.log().subscribe(),
        session,
        consumed: 0,
        next_seq: 0,
        resume_after,
        pending: VecDeque::new(),
        heartbeat,
        done: false,
    };
    futures::stream::unfold(cursor, |mut c| async move { c.next().await.map(|e| (e, c)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames() {
        let e = StreamEvent {
            event_type: StreamEventType::SteeringAck,
            sequence: Some(7),
            data: json!({"index": 0}),
        };
        assert_eq!(e.to_sse_frame(), "id: 7\nevent: steering_ack\ndata: {\"index\":0}\n\n");
        assert_eq!(StreamEvent::heartbeat().to_sse_frame(), "event: heartbeat\ndata: {}\n\n");
    }
}
