//! End-of-loop reflection: prompt, verdict parsing, and application of the
//! verdict's todo updates and steering clears.

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ledger::{NewTask, Task, TaskId, TaskSource, TaskStatus, TodoLedger};
use crate::planning::MAX_QUERY_CHARS;
use crate::prompts;
use crate::steering::{SteeringMessage, SteeringQueue};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddTaskSpec {
    pub description: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TodoUpdates {
    pub mark_completed: Vec<TaskId>,
    pub cancel_tasks: Vec<TaskId>,
    pub add_tasks: Vec<AddTaskSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub research_complete: bool,
    pub section_gaps: IndexMap<String, String>,
    pub priority_section: String,
    pub knowledge_gap: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_up_query: Option<String>,
    pub evaluation_notes: String,
    pub todo_updates: TodoUpdates,
    /// Positions within the steering snapshot handed to this reflection.
    pub clear_message_indices: Vec<usize>,
    /// Entries dropped during validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReflectionParseError {
    #[error("reflection output is not valid JSON: {0}")]
    Json(String),
    #[error("reflection output is not a JSON object")]
    Shape,
}

fn task_lines(tasks: &[&Task]) -> String {
    if tasks.is_empty() {
        return "(none)".into();
    }
    tasks
        .iter()
        .map(|t| format!("\n  - {}: {}", t.id, t.description))
        .collect()
}

fn steering_lines(snapshot: &[SteeringMessage]) -> String {
    if snapshot.is_empty() {
        return "(none)".into();
    }
    snapshot
        .iter()
        .enumerate()
        .map(|(i, m)| format!("\n  [{i}] {}", m.text))
        .collect()
}

/// `pending` lists every open task; in-progress tasks are still awaiting a
/// verdict.
pub fn build_reflection_prompt(
    topic: &str,
    summary: &str,
    pending: &[&Task],
    completed: &[&Task],
    snapshot: &[SteeringMessage],
) -> String {
    prompts::render(
        prompts::REFLECTION,
        &[
            ("research_topic", topic),
            ("running_summary", if summary.is_empty() { "(empty)" } else { summary }),
            ("pending_tasks", &task_lines(pending)),
            ("completed_tasks", &task_lines(completed)),
            ("steering_messages", &steering_lines(snapshot)),
        ],
    )
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => text::tidy(s),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn id_list(value: Option<&Value>, pending: &[TaskId], field: &str, warnings: &mut Vec<String>) -> Vec<TaskId> {
    let mut out: Vec<TaskId> = Vec::new();
    for item in value.and_then(Value::as_array).into_iter().flatten() {
        let Some(id) = item.as_str().map(|s| TaskId::new(s.trim())) else {
            warnings.push(format!("{field}: ignored non-string id {item}"));
            continue;
        };
        if !pending.contains(&id) {
            warnings.push(format!("{field}: {id} is not a pending task"));
            tracing::warn!(%id, field, "reflection referenced a task outside the pending set");
        } else if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Parse and validate a reflection verdict against the pending ids and
/// snapshot size the prompt was built from.
pub fn parse_reflection(
    llm_text: &str,
    pending_ids: &[TaskId],
    snapshot_size: usize,
) -> Result<ReflectionOutcome, ReflectionParseError> {
    let value = text::extract_json(llm_text, Some('{')).map_err(ReflectionParseError::Json)?;
    let obj = value.as_object().ok_or(ReflectionParseError::Shape)?;
    let mut warnings = Vec::new();

    let research_complete = match obj.get("research_complete") {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) => s.eq_ignore_ascii_case("true"),
        _ => false,
    };
    let section_gaps = match obj.get("section_gaps") {
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), as_text(v))).collect(),
        _ => IndexMap::new(),
    };
    let mut follow_up_query = obj
        .get("follow_up_query")
        .map(as_text)
        .filter(|q| !q.is_empty() && !q.eq_ignore_ascii_case("none"))
        .map(|q| text::truncate_at_word_boundary(&q, MAX_QUERY_CHARS));
    if research_complete && follow_up_query.is_some() {
        warnings.push("follow_up_query discarded because research is complete".into());
        follow_up_query = None;
    }

    let updates = obj.get("todo_updates").and_then(Value::as_object);
    let field = |name: &str| updates.and_then(|u| u.get(name));
    let mark_completed = id_list(field("mark_completed"), pending_ids, "mark_completed", &mut warnings);
    let mut cancel_tasks = id_list(field("cancel_tasks"), pending_ids, "cancel_tasks", &mut warnings);
    cancel_tasks.retain(|id| {
        let conflict = mark_completed.contains(id);
        if conflict {
            warnings.push(format!("cancel_tasks: {id} is also marked completed"));
        }
        !conflict
    });
    let add_tasks = field("add_tasks")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|item| {
            let (description, rationale) = match item {
                Value::String(s) => (text::tidy(s), String::new()),
                Value::Object(m) => (
                    m.get("description").map(as_text).unwrap_or_default(),
                    m.get("rationale").map(as_text).unwrap_or_default(),
                ),
                _ => return None,
            };
            (!description.is_empty()).then_some(AddTaskSpec { description, rationale })
        })
        .collect();

    let mut clear_message_indices = Vec::new();
    for item in obj.get("clear_message_indices").and_then(Value::as_array).into_iter().flatten() {
        match item.as_u64().map(|n| n as usize) {
            Some(i) if i < snapshot_size => {
                if !clear_message_indices.contains(&i) {
                    clear_message_indices.push(i);
                }
            }
            _ => warnings.push(format!("clear_message_indices: {item} is outside the snapshot")),
        }
    }

    Ok(ReflectionOutcome {
        research_complete,
        section_gaps,
        priority_section: obj.get("priority_section").map(as_text).unwrap_or_default(),
        knowledge_gap: obj.get("knowledge_gap").map(as_text).unwrap_or_default(),
        follow_up_query,
        evaluation_notes: obj.get("evaluation_notes").map(as_text).unwrap_or_default(),
        todo_updates: TodoUpdates {
            mark_completed,
            cancel_tasks,
            add_tasks,
        },
        clear_message_indices,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddedTask {
    pub task_id: TaskId,
    pub merged: bool,
    pub source: TaskSource,
}

/// What [`apply_reflection`] changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ApplyReport {
    pub completed: Vec<TaskId>,
    pub canceled: Vec<TaskId>,
    pub added: Vec<AddedTask>,
    /// Global steering indices cleared.
    pub cleared: Vec<usize>,
    /// Cleared messages that neither produced a task nor came with a
    /// cancellation.
    pub addressed_without_task_change: Vec<usize>,
    pub errors: Vec<String>,
}

fn shares_content_word(a: &str, b: &str) -> bool {
    let words = text::content_words(b);
    text::content_words(a).iter().any(|w| words.contains(w))
}

/// Apply a validated verdict. Per-item failures are logged in the report
/// and never stop the remaining items.
pub fn apply_reflection(
    outcome: &ReflectionOutcome,
    ledger: &mut TodoLedger,
    queue: &mut SteeringQueue,
    snapshot: &[SteeringMessage],
    now: DateTime<Utc>,
) -> ApplyReport {
    let mut report = ApplyReport::default();
    let updates = &outcome.todo_updates;

    for id in &updates.mark_completed {
        let status = ledger.get(id).map(|t| t.status);
        let result = (|| {
            if status == Some(TaskStatus::Pending) {
                ledger.transition(id, TaskStatus::InProgress, now)?;
            }
            ledger.transition(id, TaskStatus::Completed, now)
        })();
        match result {
            Ok(()) => report.completed.push(id.clone()),
            Err(e) => report.errors.push(e.to_string()),
        }
    }
    for id in &updates.cancel_tasks {
        match ledger.transition(id, TaskStatus::Canceled, now) {
            Ok(()) => report.canceled.push(id.clone()),
            Err(e) => report.errors.push(e.to_string()),
        }
    }

    let cleared: Vec<&SteeringMessage> = outcome
        .clear_message_indices
        .iter()
        .filter_map(|&i| snapshot.get(i))
        .collect();
    for spec in &updates.add_tasks {
        let from_steering = cleared.iter().any(|m| shares_content_word(&spec.description, &m.text));
        let source = if from_steering { TaskSource::Steering } else { TaskSource::KnowledgeGap };
        let mut new = NewTask::new(spec.description.clone(), source);
        if !spec.rationale.is_empty() {
            new = new.rationale(spec.rationale.clone());
        }
        match ledger.add_task(new, now) {
            Ok(o) => report.added.push(AddedTask {
                task_id: o.task_id,
                merged: o.merged,
                source,
            }),
            Err(e) => report.errors.push(e.to_string()),
        }
    }

    let global: Vec<usize> = cleared.iter().map(|m| m.index).collect();
    match queue.merge_post_reflection(&global) {
        Ok(()) => report.cleared = global,
        Err(e) => {
            report.errors.push(e.to_string());
            // fall back to requeueing the whole snapshot
            if queue.merge_post_reflection(&[]).is_err() {
                tracing::error!("steering snapshot could not be released");
            }
        }
    }
    for m in &cleared {
        let via_task = updates.add_tasks.iter().any(|a| shares_content_word(&a.description, &m.text));
        if !via_task && report.canceled.is_empty() && report.cleared.contains(&m.index) {
            tracing::info!(index = m.index, "steering message addressed without task change");
            report.addressed_without_task_change.push(m.index);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;

    fn ledger_with(descs: &[&str]) -> TodoLedger {
        let mut l = TodoLedger::new("s");
        for d in descs {
            l.add_task(NewTask::new(*d, TaskSource::InitialQuery), fixture_epoch()).unwrap();
        }
        l
    }

    #[test]
    fn ids_outside_pending_are_dropped() {
        let pending = vec![TaskId::new("task-2")];
        let out = parse_reflection(
            r#"{"research_complete": false, "todo_updates": {"mark_completed": ["task-1", "task-2"], "cancel_tasks": [], "add_tasks": [{"description": "new gap"}]}, "clear_message_indices": [0, 3]}"#,
            &pending,
            1,
        )
        .unwrap();
        assert_eq!(out.todo_updates.mark_completed, pending);
        assert_eq!(out.todo_updates.add_tasks[0].rationale, "");
        assert_eq!(out.clear_message_indices, vec![0]);
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn complete_discards_follow_up() {
        let out = parse_reflection(
            r#"<answer>{"research_complete": true, "follow_up_query": "more please"}</answer>"#,
            &[],
            0,
        )
        .unwrap();
        assert!(out.research_complete);
        assert_eq!(out.follow_up_query, None);
    }

    #[test]
    fn malformed_is_an_error() {
        assert!(parse_reflection("I think we are done.", &[], 0).is_err());
    }

    #[test]
    fn prompt_lists_ids_and_empty_steering() {
        let l = ledger_with(&["alpha topic", "beta topic", "gamma topic"]);
        let tasks: Vec<&Task> = l.tasks().collect();
        let p = build_reflection_prompt("T", "S", &tasks[..2], &tasks[2..], &[]);
        assert!(p.contains("task-1: alpha topic") && p.contains("task-2: beta topic"));
        assert!(p.contains("ALREADY COMPLETED: \n  - task-3: gamma topic"));
        assert!(p.contains("USER STEERING MESSAGES (if any): (none)"));
    }

    #[test]
    fn steering_attribution_and_clearing() {
        let mut ledger = ledger_with(&["alpha topic"]);
        let mut queue = SteeringQueue::new();
        queue.enqueue("focus on peer-reviewed clinical trials", fixture_epoch()).unwrap();
        let snapshot = queue.snapshot().unwrap();
        let late = queue.enqueue("late arrival", fixture_epoch()).unwrap();
        let outcome = ReflectionOutcome {
            todo_updates: TodoUpdates {
                add_tasks: vec![
                    AddTaskSpec { description: "Find peer-reviewed clinical trials of AI tools".into(), rationale: String::new() },
                    AddTaskSpec { description: "Quantify compute costs".into(), rationale: String::new() },
                ],
                ..Default::default()
            },
            clear_message_indices: vec![0],
            ..Default::default()
        };
        let report = apply_reflection(&outcome, &mut ledger, &mut queue, &snapshot, fixture_epoch());
        assert_eq!(report.added[0].source, TaskSource::Steering);
        assert_eq!(ledger.get(&report.added[0].task_id).unwrap().priority.get(), 10);
        assert_eq!(report.added[1].source, TaskSource::KnowledgeGap);
        assert_eq!(ledger.get(&report.added[1].task_id).unwrap().priority.get(), 7);
        assert_eq!(report.cleared, vec![0]);
        assert_eq!(queue.queued().iter().map(|m| m.index).collect::<Vec<_>>(), vec![late]);
    }

    #[test]
    fn completing_pending_and_canceling() {
        let mut ledger = ledger_with(&["alpha topic", "beta topic"]);
        let mut queue = SteeringQueue::new();
        let snapshot = queue.snapshot().unwrap();
        let outcome = ReflectionOutcome {
            todo_updates: TodoUpdates {
                mark_completed: vec![TaskId::new("task-1")],
                cancel_tasks: vec![TaskId::new("task-2")],
                add_tasks: vec![AddTaskSpec { description: "Alpha topic.".into(), rationale: String::new() }],
            },
            ..Default::default()
        };
        let report = apply_reflection(&outcome, &mut ledger, &mut queue, &snapshot, fixture_epoch());
        assert!(report.errors.is_empty());
        assert_eq!(ledger.count(TaskStatus::Completed), 1);
        assert_eq!(ledger.count(TaskStatus::Canceled), 1);
        // duplicate of a completed task merges instead of adding
        assert!(report.added[0].merged);
        assert_eq!(ledger.len(), 2);
        assert!(!queue.has_active_snapshot());
    }
}
