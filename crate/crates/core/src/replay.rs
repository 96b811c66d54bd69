//! Re-emit a recorded trajectory as a live session, so the service can
//! serve it without an engine or a model.
//!
//! Recorded events are appended to a fresh session log with optional
//! pacing, and the session state (ledger, steering queue, summary, status)
//! is rebuilt from their payloads as they go.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;
use crate::engine::report::{ReportStatus, ResearchReport, Violation};
use crate::engine::trajectory::{EventKind, TrajectoryEvent};
use crate::engine::{Mode, Session, SessionHandle, SessionState, SessionStatus};
use crate::ledger::{Task, TodoLedger};
use crate::steering::SteeringQueue;
use crate::synthesis::{RunningSummary, SourceRegistry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("recording is empty")]
    Empty,
    #[error("recording does not open with a heartbeat_meta event")]
    MissingMeta,
    #[error("recording mixes sessions {0:?} and {1:?}")]
    MixedSessions(String, String),
}

/// Build an idle session shell from the recording's opening event.
pub fn session_from_recording(events: &[TrajectoryEvent], clock: Arc<dyn Clock>) -> Result<SessionHandle, ReplayError> {
    let first = events.first().ok_or(ReplayError::Empty)?;
    if first.kind != EventKind::HeartbeatMeta {
        return Err(ReplayError::MissingMeta);
    }
    if let Some(other) = events.iter().find(|e| e.session_id != first.session_id) {
        return Err(ReplayError::MixedSessions(first.session_id.clone(), other.session_id.clone()));
    }
    let p = &first.payload;
    let mode: Mode = p
        .get("mode")
        .and_then(|m| serde_json::from_value(m.clone()).ok())
        .unwrap_or(Mode::Standard);
    let session_id = first.session_id.clone();
    let state = SessionState {
        session_id: session_id.clone(),
        topic: p.get("topic").and_then(Value::as_str).unwrap_or_default().to_string(),
        mode,
        max_loops: p
            .get("max_loops")
            .and_then(Value::as_u64)
            .map_or(mode.max_loops(), |n| n as u32),
        current_loop: 0,
        status: SessionStatus::Created,
        model: None,
        ledger: TodoLedger::new(session_id),
        queue: SteeringQueue::new(),
        registry: SourceRegistry::new(),
        summary: RunningSummary::default(),
        directives: Vec::new(),
        directive_history: Vec::new(),
        last_reflection: None,
        report: None,
        error: None,
    };
    Ok(Arc::new(Session::new(state, clock)))
}

/// Applies recorded events to a session, one at a time.
pub struct Replayer {
    session: SessionHandle,
    /// recorded steering index → index in the live queue
    indices: HashMap<usize, usize>,
}

fn json_field<T: serde::de::DeserializeOwned>(payload: &Value, key: &str) -> Option<T> {
    payload.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
}

impl Replayer {
    pub fn new(session: SessionHandle) -> Self {
        Self {
            session,
            indices: HashMap::new(),
        }
    }

    pub fn session(&self) -> &SessionHandle {
        &self.session
    }

    pub fn apply(&mut self, event: &TrajectoryEvent) {
        let p = &event.payload;
        let indices = &mut self.indices;
        self.session.write(|s| {
            if let (Some(version), Some(tasks)) = (json_field::<u64>(p, "version"), json_field::<Vec<Task>>(p, "tasks")) {
                s.ledger = TodoLedger::restore(s.session_id.clone(), version, tasks);
            }
            match event.kind {
                EventKind::HeartbeatMeta => {
                    s.status = if p.get("error").is_some() {
                        SessionStatus::Failed
                    } else {
                        SessionStatus::Running
                    };
                }
                EventKind::Steering => match event.action() {
                    Some("enqueue") => {
                        let text = p.get("text").and_then(Value::as_str).unwrap_or_default();
                        if let (Ok(live), Some(recorded)) =
                            (s.queue.enqueue(text, event.at), json_field::<usize>(p, "index"))
                        {
                            indices.insert(recorded, live);
                        }
                    }
                    _ => {
                        s.status = SessionStatus::Reflecting;
                        if !s.queue.has_active_snapshot() {
                            let _ = s.queue.snapshot();
                        }
                        if let Some(d) = json_field(p, "active_directives") {
                            s.directives = d;
                        }
                    }
                },
                EventKind::Synthesis => {
                    if let Some(text) = p.get("summary").and_then(Value::as_str) {
                        s.summary.text = text.to_string();
                    }
                    s.summary.loop_index = event.loop_index + 1;
                }
                EventKind::Reflection => {
                    let cleared: Vec<usize> = p
                        .get("applied")
                        .and_then(|a| json_field::<Vec<usize>>(a, "cleared"))
                        .unwrap_or_default()
                        .into_iter()
                        .filter_map(|i| indices.get(&i).copied())
                        .collect();
                    if !s.queue.has_active_snapshot() {
                        let _ = s.queue.snapshot();
                    }
                    if let Err(e) = s.queue.merge_post_reflection(&cleared) {
                        tracing::warn!("replayed merge rejected: {e}");
                        let _ = s.queue.merge_post_reflection(&[]);
                    }
                    if let Some(d) = json_field(p, "active_directives") {
                        s.directives = d;
                    }
                    s.current_loop = event.loop_index + 1;
                    s.status = SessionStatus::Running;
                }
                EventKind::Report => {
                    let status: ReportStatus = json_field(p, "status").unwrap_or(ReportStatus::Complete);
                    s.status = if status == ReportStatus::Failed {
                        SessionStatus::Failed
                    } else {
                        SessionStatus::Completed
                    };
                    s.report = Some(ResearchReport {
                        markdown: p.get("markdown").and_then(Value::as_str).unwrap_or_default().to_string(),
                        status,
                        violations: json_field::<Vec<Violation>>(p, "violations").unwrap_or_default(),
                        citations: Vec::new(),
                        unused_sources: json_field(p, "unused_sources").unwrap_or_default(),
                        steering_history: s.queue.messages().to_vec(),
                    });
                }
                EventKind::Plan | EventKind::Search => {}
            }
        });
        self.session.log().append(event.clone());
        if event.kind == EventKind::Report {
            self.session.log().close();
        }
    }

    /// Apply every event, sleeping `pace` before each one after the first.
    pub async fn run(mut self, events: Vec<TrajectoryEvent>, pace: Duration) {
        for (i, e) in events.iter().enumerate() {
            if i > 0 && !pace.is_zero() {
                tokio::time::sleep(pace).await;
            }
            self.apply(e);
        }
        self.session.log().close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;
    use crate::engine::trajectory::parse_jsonl;
    use crate::fixture::GOLDEN_TRAJECTORY;

    #[tokio::test]
    async fn replay_reproduces_final_ledger_and_queue() {
        let events = parse_jsonl(GOLDEN_TRAJECTORY).unwrap();
        let session = session_from_recording(&events, Arc::new(SystemClock)).unwrap();
        Replayer::new(session.clone()).run(events.clone(), Duration::ZERO).await;
        assert_eq!(session.log().snapshot(), events);
        assert!(session.log().is_closed());
        session.read(|s| {
            assert_eq!(s.status, SessionStatus::Completed);
            assert_eq!(s.queue.queued_count(), 0);
            assert!(s.ledger.len() >= 4);
            assert!(s.report.as_ref().is_some_and(|r| r.markdown.starts_with("# ")));
        });
    }

    #[test]
    fn rejects_recordings_without_meta() {
        assert_eq!(session_from_recording(&[], Arc::new(SystemClock)).unwrap_err(), ReplayError::Empty);
    }
}
