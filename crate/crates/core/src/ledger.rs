//! The session task ledger (`todo.md`).
//!
//! Tasks carry a priority in the 5..=10 band, a lifecycle status, and an
//! immutable provenance tag. Every mutation bumps the ledger version exactly
//! once; reads never do.

use std::cmp::Reverse;
use std::fmt;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub const MIN_PRIORITY: u8 = 5;
pub const MAX_PRIORITY: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Task priority, always inside the 5..=10 band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Priority(u8);

impl Priority {
    pub fn new(value: u8) -> Option<Self> {
        (MIN_PRIORITY..=MAX_PRIORITY)
            .contains(&value)
            .then_some(Self(value))
    }

    pub fn clamped(value: i64) -> Self {
        Self(value.clamp(MIN_PRIORITY as i64, MAX_PRIORITY as i64) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Priority {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Priority::new(value).ok_or_else(|| format!("priority {value} outside 5..=10"))
    }
}

impl From<Priority> for u8 {
    fn from(p: Priority) -> u8 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Completed,
    Canceled,
}

impl TaskStatus {
    pub const ALL: [TaskStatus; 4] = [
        TaskStatus::Pending,
        TaskStatus::InProgress,
        TaskStatus::Completed,
        TaskStatus::Canceled,
    ];

    pub fn can_transition_to(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, next),
            (Pending, InProgress) | (Pending, Canceled) | (InProgress, Completed) | (InProgress, Canceled)
        )
    }

    pub fn is_open(self) -> bool {
        matches!(self, TaskStatus::Pending | TaskStatus::InProgress)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::InProgress => "in_progress",
            TaskStatus::Completed => "completed",
            TaskStatus::Canceled => "canceled",
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    InitialQuery,
    KnowledgeGap,
    Steering,
}

impl TaskSource {
    pub fn default_priority(self) -> Priority {
        match self {
            TaskSource::Steering => Priority(10),
            TaskSource::InitialQuery => Priority(9),
            TaskSource::KnowledgeGap => Priority(7),
        }
    }

    /// Scheduling rank among equal priorities (lower runs first).
    pub fn rank(self) -> u8 {
        match self {
            TaskSource::Steering => 0,
            TaskSource::InitialQuery => 1,
            TaskSource::KnowledgeGap => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskSource::InitialQuery => "initial_query",
            TaskSource::KnowledgeGap => "knowledge_gap",
            TaskSource::Steering => "steering",
        }
    }
}

impl fmt::Display for TaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub description: String,
    pub priority: Priority,
    pub status: TaskStatus,
    pub source: TaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_tool: Option<String>,
    /// Descriptions of duplicates that were merged into this task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_descriptions: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// An unplaced task from the initial decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDraft {
    pub description: String,
    pub llm_priority: Option<u8>,
}

impl TaskDraft {
    pub fn new(description: impl Into<String>, llm_priority: Option<u8>) -> Self {
        Self {
            description: description.into(),
            llm_priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewTask {
    pub description: String,
    pub source: TaskSource,
    pub priority: Option<u8>,
    pub rationale: Option<String>,
    pub recommended_tool: Option<String>,
}

impl NewTask {
    pub fn new(description: impl Into<String>, source: TaskSource) -> Self {
        Self {
            description: description.into(),
            source,
            priority: None,
            rationale: None,
            recommended_tool: None,
        }
    }

    pub fn priority(mut self, priority: u8) -> Self {
        self.priority = Some(priority);
        self
    }

    pub fn rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }

    pub fn tool(mut self, tool: impl Into<String>) -> Self {
        self.recommended_tool = Some(tool.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddOutcome {
    pub task_id: TaskId,
    pub merged: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("initial plan has no tasks")]
    InvalidPlan,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("task {0} not found")]
    NotFound(TaskId),
    #[error("illegal transition for {id}: {from} -> {to}")]
    IllegalTransition {
        id: TaskId,
        from: TaskStatus,
        to: TaskStatus,
    },
}

/// Priorities for an initial decomposition of `N` drafts: the model's
/// suggestion when it lies in the band, otherwise `5 + (N - i)` clamped,
/// with `i` the 1-based task index.
pub fn initial_priorities(llm_priorities: &[Option<u8>]) -> Vec<Priority> {
    let n = llm_priorities.len() as i64;
    llm_priorities
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.and_then(Priority::new)
                .unwrap_or_else(|| Priority::clamped(5 + (n - i as i64)))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TodoLedger {
    session_id: String,
    version: u64,
    next_id: u64,
    tasks: IndexMap<TaskId, Task>,
}

impl TodoLedger {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            version: 0,
            next_id: 1,
            tasks: IndexMap::new(),
        }
    }

    /// Rebuild a ledger from recorded state, e.g. when replaying a
    /// trajectory. New ids continue after the highest recorded one.
    pub fn restore(session_id: impl Into<String>, version: u64, tasks: Vec<Task>) -> Self {
        let next_id = tasks
            .iter()
            .filter_map(|t| t.id.as_str().strip_prefix("task-")?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);
        Self {
            session_id: session_id.into(),
            version,
            next_id,
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.get(id)
    }

    /// All tasks in insertion order, canceled ones included.
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn with_status(&self, status: TaskStatus) -> impl Iterator<Item = &Task> {
        self.tasks.values().filter(move |t| t.status == status)
    }

    pub fn count(&self, status: TaskStatus) -> usize {
        self.with_status(status).count()
    }

    /// Pending and in-progress tasks in scheduling order.
    pub fn open_tasks(&self) -> Vec<&Task> {
        let mut open: Vec<&Task> = self.tasks.values().filter(|t| t.status.is_open()).collect();
        self.sort_for_schedule(&mut open);
        open
    }

    /// The non-canceled task that `description` fuzzy-duplicates, if any.
    pub fn find_duplicate(&self, description: &str) -> Option<&Task> {
        let needle = text::normalize(description);
        self.tasks.values().find(|t| {
            t.status != TaskStatus::Canceled
                && text::similarity(&needle, &text::normalize(&t.description))
                    >= text::DUPLICATE_THRESHOLD
        })
    }

    /// Seed the ledger from an initial decomposition.
    pub fn assign_priorities(
        &mut self,
        drafts: &[TaskDraft],
        now: DateTime<Utc>,
    ) -> Result<Vec<AddOutcome>, LedgerError> {
        if drafts.is_empty() {
            return Err(LedgerError::InvalidPlan);
        }
        if let Some(d) = drafts.iter().find(|d| d.description.trim().is_empty()) {
            return Err(LedgerError::InvalidTask(format!(
                "empty description in draft {:?}",
                d
            )));
        }
        let priorities =
            initial_priorities(&drafts.iter().map(|d| d.llm_priority).collect::<Vec<_>>());
        drafts
            .iter()
            .zip(priorities)
            .map(|(draft, priority)| {
                self.add_task(
                    NewTask::new(draft.description.clone(), TaskSource::InitialQuery)
                        .priority(priority.get()),
                    now,
                )
            })
            .collect()
    }

    /// Insert a task, or merge it into an existing fuzzy duplicate.
    pub fn add_task(&mut self, new: NewTask, now: DateTime<Utc>) -> Result<AddOutcome, LedgerError> {
        let description = text::tidy(&new.description);
        if description.is_empty() {
            return Err(LedgerError::InvalidTask("empty description".into()));
        }
        let priority = match new.priority {
            Some(p) => Priority::new(p)
                .ok_or_else(|| LedgerError::InvalidTask(format!("priority {p} outside 5..=10")))?,
            None => new.source.default_priority(),
        };

        if let Some(existing) = self.find_duplicate(&description).map(|t| t.id.clone()) {
            let task = self.tasks.get_mut(&existing).expect("duplicate exists");
            task.priority = task.priority.max(priority);
            if task.description != description && !task.merged_descriptions.contains(&description) {
                task.merged_descriptions.push(description);
            }
            task.updated_at = now;
            self.version += 1;
            return Ok(AddOutcome {
                task_id: existing,
                merged: true,
            });
        }

        let id = TaskId(format!("task-{}", self.next_id));
        self.next_id += 1;
        self.tasks.insert(
            id.clone(),
            Task {
                id: id.clone(),
                description,
                priority,
                status: TaskStatus::Pending,
                source: new.source,
                rationale: new.rationale,
                recommended_tool: new.recommended_tool,
                merged_descriptions: Vec::new(),
                created_at: now,
                updated_at: now,
            },
        );
        self.version += 1;
        Ok(AddOutcome {
            task_id: id,
            merged: false,
        })
    }

    pub fn transition(
        &mut self,
        id: &TaskId,
        next: TaskStatus,
        now: DateTime<Utc>,
    ) -> Result<(), LedgerError> {
        let task = self
            .tasks
            .get_mut(id)
            .ok_or_else(|| LedgerError::NotFound(id.clone()))?;
        if !task.status.can_transition_to(next) {
            return Err(LedgerError::IllegalTransition {
                id: id.clone(),
                from: task.status,
                to: next,
            });
        }
        task.status = next;
        task.updated_at = now;
        self.version += 1;
        Ok(())
    }

    /// Raise a task's priority to at least `priority`. Counts as a mutation.
    pub fn raise_priority(
        &mut self,
        id: &TaskId,
        priority: Priority,
        now: DateTime<Utc>,
    ) -> Result<(), LedgerError> {
        let task = self
            .tasks
            .get_mut(id)
            .ok_or_else(|| LedgerError::NotFound(id.clone()))?;
        task.priority = task.priority.max(priority);
        task.updated_at = now;
        self.version += 1;
        Ok(())
    }

    /// Up to `k` pending tasks in scheduling order.
    pub fn next_batch(&self, k: usize) -> Vec<&Task> {
        let mut pending: Vec<&Task> = self.with_status(TaskStatus::Pending).collect();
        self.sort_for_schedule(&mut pending);
        pending.truncate(k);
        pending
    }

    fn sort_for_schedule(&self, tasks: &mut [&Task]) {
        tasks.sort_by_key(|t| {
            (
                Reverse(t.priority),
                t.source.rank(),
                t.created_at,
                self.tasks.get_index_of(&t.id),
            )
        });
    }

    /// Deterministic `todo.md` rendering.
    pub fn render_markdown(&self) -> String {
        let mut out = format!(
            "# Research Todo\n\nsession: {} | version: {}\n",
            self.session_id, self.version
        );
        let sections = [
            ("In Progress", TaskStatus::InProgress),
            ("Pending", TaskStatus::Pending),
            ("Completed", TaskStatus::Completed),
            ("Canceled", TaskStatus::Canceled),
        ];
        for (title, status) in sections {
            out.push_str(&format!("\n## {title}\n\n"));
            let mut tasks: Vec<&Task> = self.with_status(status).collect();
            self.sort_for_schedule(&mut tasks);
            if tasks.is_empty() {
                out.push_str("(none)\n");
            }
            for task in tasks {
                out.push_str(&render_task_line(task));
                out.push('\n');
            }
        }
        out
    }
}

pub fn render_task_line(task: &Task) -> String {
    let mark = match task.status {
        TaskStatus::Completed => "[x]",
        TaskStatus::Canceled => "[-]",
        _ => "[ ]",
    };
    format!(
        "- {mark} (P{}) {} — {} @{}",
        task.priority.get(),
        task.description,
        task.source,
        format_timestamp(task.updated_at)
    )
}

pub fn format_timestamp(at: DateTime<Utc>) -> String {
    at.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
