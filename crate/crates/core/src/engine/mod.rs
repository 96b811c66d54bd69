//! The session state machine.
//!
//! A session is seeded from an initial decomposition, then runs loops of
//! plan → search → synthesis → steering snapshot → reflection until the
//! reflection declares the research complete, the loop budget is spent, or
//! the ledger runs dry. Every stage appends one event to the session's
//! trajectory log.
//!
//! Session state sits behind a synchronous lock that is never held across
//! an await, so steering and status requests stay fast while a loop waits
//! on the network.

pub mod report;
pub mod stats;
pub mod trajectory;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::ledger::{Task, TaskId, TaskSource, TaskStatus, TodoLedger};
use crate::llm::{CompletionRequest, LlmGateway, PromptKind};
use crate::planning::{self, QcError, QueryPromptInput, TimeContext};
use crate::prompts::PROMPT_CONTRACT_VERSION;
use crate::reflection::{self, ReflectionOutcome};
use crate::retrieval::{self, ProviderRegistry, DEFAULT_FAN_OUT};
use crate::steering::{self, Directive, DirectiveKind, MessageState, SteeringError, SteeringQueue};
use crate::synthesis::{self, RunningSummary, SourceRecord, SourceRegistry, SynthesisInput};

use report::{ReportStatus, ResearchReport};
use trajectory::{EventKind, TrajectoryEvent, TrajectoryLog, TRAJECTORY_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Quick,
    Standard,
    Deep,
}

impl Mode {
    pub fn max_loops(self) -> u32 {
        match self {
            Mode::Quick => 2,
            Mode::Standard => 5,
            Mode::Deep => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Quick => "quick",
            Mode::Standard => "standard",
            Mode::Deep => "deep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "quick" => Ok(Mode::Quick),
            "standard" => Ok(Mode::Standard),
            "deep" => Ok(Mode::Deep),
            other => Err(format!("unknown mode {other:?}; expected quick, standard, or deep")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Created,
    Running,
    Reflecting,
    Completed,
    Failed,
}

impl SessionStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, SessionStatus::Completed | SessionStatus::Failed)
    }
}

/// A steering message injected by the engine itself when loop
/// `loop_index` starts dispatching its searches. Lets fixture runs exercise
/// mid-loop steering deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSteering {
    pub loop_index: u32,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub fan_out: usize,
    pub uploaded_knowledge: Option<String>,
    pub scheduled_steering: Vec<ScheduledSteering>,
    pub session_prefix: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            fan_out: DEFAULT_FAN_OUT,
            uploaded_knowledge: None,
            scheduled_steering: Vec::new(),
            session_prefix: "session".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub topic: String,
    pub mode: Mode,
    pub max_loops: u32,
    pub current_loop: u32,
    pub status: SessionStatus,
    pub model: Option<String>,
    pub ledger: TodoLedger,
    pub queue: SteeringQueue,
    pub registry: SourceRegistry,
    pub summary: RunningSummary,
    /// Directives in force; each lives until all its origin messages clear.
    pub directives: Vec<Directive>,
    /// Every directive ever derived, for the report's adherence check.
    pub directive_history: Vec<Directive>,
    pub last_reflection: Option<ReflectionOutcome>,
    pub report: Option<ResearchReport>,
    pub error: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnqueueError {
    #[error("session is {0:?}; steering is closed")]
    Closed(SessionStatus),
    #[error(transparent)]
    Invalid(#[from] SteeringError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("research query is empty")]
    EmptyQuery,
}

/// A live session: its state, its trajectory, and the clock stamping both.
pub struct Session {
    id: String,
    state: RwLock<SessionState>,
    log: TrajectoryLog,
    clock: Arc<dyn Clock>,
}

pub type SessionHandle = Arc<Session>;

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("id", &self.id).finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(state: SessionState, clock: Arc<dyn Clock>) -> Self {
        Self {
            id: state.session_id.clone(),
            state: RwLock::new(state),
            log: TrajectoryLog::new(),
            clock,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Run `f` under the read lock.
    pub fn read<R>(&self, f: impl FnOnce(&SessionState) -> R) -> R {
        f(&self.state.read().unwrap())
    }

    /// Mark a freshly created session as running, e.g. just before it is
    /// handed to a background task.
    pub fn mark_running(&self) {
        self.write(|s| {
            if s.status == SessionStatus::Created {
                s.status = SessionStatus::Running;
            }
        });
    }

    /// Run `f` under the write lock. Everything `f` changes becomes
    /// visible to readers at once.
    pub fn write<R>(&self, f: impl FnOnce(&mut SessionState) -> R) -> R {
        f(&mut self.state.write().unwrap())
    }

    pub fn status(&self) -> SessionStatus {
        self.read(|s| s.status)
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn events(&self) -> Vec<TrajectoryEvent> {
        self.log.snapshot()
    }

    pub fn report(&self) -> Option<ResearchReport> {
        self.read(|s| s.report.clone())
    }

    pub fn emit(&self, loop_index: u32, kind: EventKind, payload: Value) {
        self.log.append(TrajectoryEvent {
            session_id: self.id.clone(),
            loop_index,
            kind,
            at: self.clock.now(),
            payload,
        });
    }

    /// Queue a steering message. Callable at any time while the session is
    /// live; never waits on loop execution.
    pub fn enqueue_steering(&self, text: &str) -> Result<usize, EnqueueError> {
        let mut state = self.state.write().unwrap();
        if state.status.is_finished() {
            return Err(EnqueueError::Closed(state.status));
        }
        let now = self.clock.now();
        let index = state.queue.enqueue(text, now)?;
        let payload = json!({
            "action": "enqueue",
            "index": index,
            "text": state.queue.get(index).map(|m| m.text.as_str()),
            "queued_count": state.queue.queued_count(),
            "llm_calls": 0,
        });
        // appended under the state lock so enqueue order and event order agree
        self.emit(state.current_loop, EventKind::Steering, payload);
        Ok(index)
    }
}

/// Outcome of one loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub loop_index: u32,
    pub reflection: Option<ReflectionOutcome>,
    pub terminate: bool,
}

/// Termination rule: research complete, loop budget spent, or nothing left
/// pending and nothing added.
pub fn should_terminate(
    completed_loops: u32,
    max_loops: u32,
    pending_tasks: usize,
    outcome: Option<&ReflectionOutcome>,
) -> bool {
    let complete = outcome.is_some_and(|o| o.research_complete);
    let additions = outcome.map_or(0, |o| o.todo_updates.add_tasks.len());
    complete || completed_loops >= max_loops || (pending_tasks == 0 && additions == 0)
}

fn tasks_json(ledger: &TodoLedger) -> Value {
    serde_json::to_value(ledger.tasks().collect::<Vec<&Task>>()).expect("tasks serialize")
}

fn loop_key(loop_index: u32) -> String {
    format!("loop-{loop_index}")
}

pub const INITIAL_KEY: &str = "initial";
pub const REPORT_KEY: &str = "final";

pub struct Engine {
    llm: LlmGateway,
    registry: Arc<ProviderRegistry>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    next_session: AtomicU64,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("llm", &self.llm)
            .field("registry", &self.registry)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(llm: LlmGateway, registry: ProviderRegistry, clock: Arc<dyn Clock>) -> Self {
        Self {
            llm,
            registry: Arc::new(registry),
            clock,
            config: EngineConfig::default(),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_registry(mut self, registry: ProviderRegistry) -> Self {
        self.registry = Arc::new(registry);
        self
    }

    pub fn llm(&self) -> &LlmGateway {
        &self.llm
    }

    pub fn registry(&self) -> &ProviderRegistry {
        &self.registry
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Allocate a session without contacting the model.
    pub fn create_session(&self, topic: &str, mode: Mode, model: Option<String>) -> Result<SessionHandle, EngineError> {
        let topic = crate::text::tidy(topic);
        if topic.is_empty() {
            return Err(EngineError::EmptyQuery);
        }
        let n = self.next_session.fetch_add(1, Ordering::SeqCst);
        let session_id = format!("{}-{n}", self.config.session_prefix);
        let state = SessionState {
            session_id: session_id.clone(),
            topic,
            mode,
            max_loops: mode.max_loops(),
            current_loop: 0,
            status: SessionStatus::Created,
            model,
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
        Ok(Arc::new(Session::new(state, self.clock.clone())))
    }

    /// Create a session and seed its ledger. A session whose initial plan
    /// cannot be obtained comes back with status `failed`.
    pub async fn start_session(&self, topic: &str, mode: Mode) -> Result<SessionHandle, EngineError> {
        let session = self.create_session(topic, mode, None)?;
        self.initialize(&session).await;
        Ok(session)
    }

    /// Create, initialize, and run a session to completion.
    pub async fn run_session(&self, topic: &str, mode: Mode) -> Result<SessionHandle, EngineError> {
        let session = self.create_session(topic, mode, None)?;
        self.run(&session).await;
        Ok(session)
    }

    fn request(&self, session: &Session, kind: PromptKind, key: &str, prompt: &str) -> CompletionRequest {
        CompletionRequest::new(kind, key, prompt).with_model(session.read(|s| s.model.clone()))
    }

    /// Issue the initial decomposition and seed the ledger.
    pub async fn initialize(&self, session: &Session) {
        let (topic, mode, max_loops) = session.read(|s| (s.topic.clone(), s.mode, s.max_loops));
        let prompt = planning::build_initial_prompt(&topic, &topic, "");
        let request = self.request(session, PromptKind::InitialPlan, INITIAL_KEY, &prompt);
        let (parsed, llm_calls) = self.llm.complete_parsed(&request, planning::parse_initial_plan).await;

        let mut payload = json!({
            "schema": TRAJECTORY_SCHEMA,
            "prompt_contract": PROMPT_CONTRACT_VERSION,
            "topic": topic,
            "mode": mode,
            "max_loops": max_loops,
        });
        let failure = session.write(|s| {
            let seeded = parsed
                .map_err(|e| e.to_string())
                .and_then(|drafts| s.ledger.assign_priorities(&drafts, self.clock.now()).map_err(|e| e.to_string()));
            payload["version"] = json!(s.ledger.version());
            payload["tasks"] = tasks_json(&s.ledger);
            payload["llm_calls"] = json!(llm_calls);
            match seeded {
                Ok(_) => {
                    s.status = SessionStatus::Running;
                    None
                }
                Err(e) => {
                    s.status = SessionStatus::Failed;
                    s.error = Some(e.clone());
                    payload["error"] = json!(e);
                    Some(e)
                }
            }
        });
        session.emit(0, EventKind::HeartbeatMeta, payload);
        if let Some(error) = failure {
            tracing::error!(session = session.id(), "initial plan failed: {error}");
            self.fail(session, &error);
        }
    }

    fn fail(&self, session: &Session, error: &str) {
        let (loop_index, report) = session.write(|s| {
            s.status = SessionStatus::Failed;
            s.error = Some(error.to_string());
            let report = ResearchReport {
                markdown: String::new(),
                status: ReportStatus::Failed,
                violations: Vec::new(),
                citations: Vec::new(),
                unused_sources: Vec::new(),
                steering_history: s.queue.messages().to_vec(),
            };
            s.report = Some(report.clone());
            (s.current_loop, report)
        });
        session.emit(
            loop_index,
            EventKind::Report,
            json!({"status": report.status, "error": error, "markdown": "", "llm_calls": 0}),
        );
        session.log().close();
    }

    /// Run one full loop. A finished session is left untouched and
    /// reports `terminate`.
    pub async fn run_loop(&self, session: &Session) -> LoopOutcome {
        let (k, finished) = session.read(|s| (s.current_loop, s.status.is_finished()));
        if finished {
            return LoopOutcome {
                loop_index: k,
                reflection: None,
                terminate: true,
            };
        }
        let key = loop_key(k);

        // plan
        let tools: Vec<String> = self.registry.names().map(str::to_string).collect();
        let prompt = session.read(|s| {
            let mut context = s.summary.text.clone();
            if let Some(q) = s.last_reflection.as_ref().and_then(|r| r.follow_up_query.as_deref()) {
                context.push_str(&format!("\n\nSuggested follow-up query: {q}"));
            }
            planning::build_query_prompt(&QueryPromptInput {
                topic: &s.topic,
                running_summary: context.trim(),
                ledger: &s.ledger,
                directives: &s.directives,
                time: TimeContext::at(self.clock.now()),
                uploaded_knowledge: self.config.uploaded_knowledge.as_deref(),
                tools: &tools,
            })
        });
        let request = self.request(session, PromptKind::QueryPlan, &key, &prompt);
        let (parsed, plan_calls) = self
            .llm
            .complete_parsed(&request, |t| planning::parse_query_plan(t, &tools))
            .await;
        let (planned, plan_payload) = session.write(|s| {
            let source = if k == 0 { TaskSource::InitialQuery } else { TaskSource::KnowledgeGap };
            let mut payload = json!({});
            let planned = match parsed {
                Err(e) => {
                    payload["error"] = json!(e.to_string());
                    Vec::new()
                }
                Ok(plan) => {
                    payload["complexity"] = json!(plan.complexity);
                    payload["main_query"] = json!(plan.main_query);
                    match planning::quality_control(plan, &mut s.ledger, &s.directives, source, self.clock.now()) {
                        Ok(qc) => {
                            payload["planned"] = json!(qc.plan.planned);
                            payload["dropped"] = json!(qc.dropped);
                            payload["merged_into"] = json!(qc.merged_into);
                            payload["created"] = json!(qc.created);
                            qc.plan.planned
                        }
                        Err(QcError::EmptyPlanAfterQc { dropped }) => {
                            payload["planned"] = json!([]);
                            payload["dropped"] = json!(dropped);
                            payload["error"] = json!("empty_plan_after_qc");
                            Vec::new()
                        }
                        Err(e) => {
                            payload["error"] = json!(e.to_string());
                            Vec::new()
                        }
                    }
                }
            };
            payload["version"] = json!(s.ledger.version());
            payload["tasks"] = tasks_json(&s.ledger);
            payload["llm_calls"] = json!(plan_calls);
            (planned, payload)
        });
        session.emit(k, EventKind::Plan, plan_payload);

        for scheduled in self.config.scheduled_steering.iter().filter(|m| m.loop_index == k) {
            if let Err(e) = session.enqueue_steering(&scheduled.text) {
                tracing::warn!("scheduled steering rejected: {e}");
            }
        }

        // search
        let outcomes = retrieval::dispatch_parallel(&planned, &self.registry, self.config.fan_out, self.clock.now()).await;
        let queries: Vec<Value> = outcomes
            .iter()
            .map(|o| {
                let mut q = json!({
                    "name": o.query.name,
                    "query": o.query.query,
                    "tool": o.query.tool,
                    "task_id": o.query.task_id,
                });
                match &o.result {
                    Ok(results) => {
                        q["results"] = json!(results
                            .iter()
                            .map(|r| json!({"url": r.url, "title": r.title, "score": r.score, "provider": r.provider}))
                            .collect::<Vec<_>>());
                    }
                    Err(e) => q["error"] = json!(e.to_string()),
                }
                q
            })
            .collect();
        let all_results: Vec<_> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).flatten().collect();
        let unique = synthesis::consolidate(all_results.iter().copied());
        let (new_sources, registry) = session.write(|s| (s.registry.register(&unique, k), s.registry.clone()));
        session.emit(
            k,
            EventKind::Search,
            json!({
                "queries": queries,
                "result_count": all_results.len(),
                "error_count": outcomes.iter().filter(|o| o.result.is_err()).count(),
                "llm_calls": 0,
            }),
        );

        // synthesis
        let (topic, previous, gaps) = session.read(|s| {
            let gaps = s
                .last_reflection
                .as_ref()
                .map(|r| {
                    let mut g = r.knowledge_gap.clone();
                    for (section, gap) in &r.section_gaps {
                        g.push_str(&format!("\n- {section}: {gap}"));
                    }
                    g.trim().to_string()
                })
                .unwrap_or_default();
            (s.topic.clone(), s.summary.clone(), gaps)
        });
        let synthesized = synthesis::synthesize(
            SynthesisInput {
                topic: &topic,
                previous: &previous,
                results: &unique,
                knowledge_gaps: &gaps,
                uploaded_knowledge: self.config.uploaded_knowledge.as_deref(),
            },
            &registry,
            &self.llm,
            &key,
        )
        .await;
        let synthesis_payload = session.write(|s| {
            let mut payload = json!({
                "unique_results": unique.len(),
                "new_sources": new_sources,
                "llm_calls": 1,
            });
            match synthesized {
                Ok(out) => {
                    payload["stripped_keys"] = json!(out.stripped_keys);
                    payload["truncated"] = json!(out.truncated);
                    s.summary = out.summary;
                }
                Err(e) => payload["error"] = json!(e.to_string()),
            }
            payload["loop_index"] = json!(s.summary.loop_index);
            payload["summary"] = json!(s.summary.text);
            payload["summary_words"] = json!(crate::text::word_count(&s.summary.text));
            payload["cited_urls"] = json!(s.summary.cited_urls);
            payload
        });
        session.emit(k, EventKind::Synthesis, synthesis_payload);

        // steering snapshot
        let snapshot = session.write(|s| {
            s.status = SessionStatus::Reflecting;
            s.queue.snapshot().unwrap_or_else(|e| {
                tracing::error!("steering snapshot refused: {e}");
                Vec::new()
            })
        });
        let calls = u32::from(snapshot.len() > 1);
        let derived = if snapshot.is_empty() {
            Ok(Vec::new())
        } else {
            steering::summarize_directives(&topic, &snapshot, &self.llm, &key).await
        };
        let payload = session.write(|s| {
            let mut payload = json!({"action": "snapshot", "messages": snapshot, "llm_calls": calls});
            match derived {
                Ok(directives) => {
                    for d in &directives {
                        merge_directive(&mut s.directives, d.clone());
                        merge_directive(&mut s.directive_history, d.clone());
                    }
                    payload["directives"] = json!(directives);
                }
                Err(e) => payload["error"] = json!(e.to_string()),
            }
            payload["active_directives"] = json!(s.directives);
            payload
        });
        session.emit(k, EventKind::Steering, payload);

        // reflection
        let (prompt, pending_ids) = session.read(|s| {
            let open = s.ledger.open_tasks();
            let completed: Vec<&Task> = s.ledger.with_status(TaskStatus::Completed).collect();
            let ids: Vec<TaskId> = open.iter().map(|t| t.id.clone()).collect();
            (
                reflection::build_reflection_prompt(&s.topic, &s.summary.text, &open, &completed, &snapshot),
                ids,
            )
        });
        let request = self.request(session, PromptKind::Reflection, &key, &prompt);
        let (parsed, reflection_calls) = self
            .llm
            .complete_parsed(&request, |t| reflection::parse_reflection(t, &pending_ids, snapshot.len()))
            .await;
        let (outcome, terminate, payload) = session.write(|s| {
            let now = self.clock.now();
            let mut payload = json!({});
            let outcome = match parsed {
                Ok(outcome) => {
                    let applied = reflection::apply_reflection(&outcome, &mut s.ledger, &mut s.queue, &snapshot, now);
                    let queue = &s.queue;
                    s.directives.retain(|d| {
                        d.origin_indices
                            .iter()
                            .any(|&i| queue.get(i).is_some_and(|m| m.state != MessageState::Cleared))
                    });
                    payload["outcome"] = json!(outcome);
                    payload["applied"] = json!(applied);
                    Some(outcome)
                }
                Err(e) => {
                    if let Err(merge) = s.queue.merge_post_reflection(&[]) {
                        tracing::error!("steering requeue failed: {merge}");
                    }
                    payload["error"] = json!(e.to_string());
                    None
                }
            };
            s.current_loop += 1;
            s.status = SessionStatus::Running;
            let terminate = should_terminate(
                s.current_loop,
                s.max_loops,
                s.ledger.count(TaskStatus::Pending),
                outcome.as_ref(),
            );
            s.last_reflection = outcome.clone();
            payload["version"] = json!(s.ledger.version());
            payload["tasks"] = tasks_json(&s.ledger);
            payload["queued_steering"] = json!(s.queue.queued_count());
            payload["active_directives"] = json!(s.directives);
            payload["terminate"] = json!(terminate);
            payload["llm_calls"] = json!(reflection_calls);
            (outcome, terminate, payload)
        });
        session.emit(k, EventKind::Reflection, payload);

        LoopOutcome {
            loop_index: k,
            reflection: outcome,
            terminate,
        }
    }

    /// Final model pass, section assembly, and validation. A finished
    /// session returns the report it already has.
    pub async fn generate_report(&self, session: &Session) -> ResearchReport {
        if let Some(report) = session.read(|s| s.status.is_finished().then(|| s.report.clone()).flatten()) {
            return report;
        }
        let prompt = session.read(|s| {
            report::build_report_prompt(&s.topic, &s.summary.text, &s.registry, s.queue.messages())
        });
        let request = self.request(session, PromptKind::Report, REPORT_KEY, &prompt);
        let reply = self.llm.complete(&request).await;
        let (report, payload) = session.write(|s| {
            let mut payload = json!({});
            let body = match reply {
                Ok(text) if !text.trim().is_empty() => text,
                other => {
                    let reason = match other {
                        Err(e) => e.to_string(),
                        Ok(_) => "empty report".to_string(),
                    };
                    tracing::warn!("report generation fell back to the running summary: {reason}");
                    payload["fallback"] = json!(reason);
                    report::fallback_body(&s.topic, &s.summary.text)
                }
            };
            let keys = synthesis::citation_keys(&body);
            let resolvable: Vec<String> = keys.iter().filter(|k| s.registry.by_key(k).is_some()).cloned().collect();
            let usage = s.registry.mark_used(&resolvable).expect("filtered to resolvable keys");
            let mut cited: Vec<&SourceRecord> = resolvable.iter().filter_map(|k| s.registry.by_key(k)).collect();
            cited.sort_by_key(|r| r.key[1..].parse::<usize>().unwrap_or(usize::MAX));
            let markdown = report::assemble(&body, &cited, &s.ledger, s.queue.messages());
            let excluded: Vec<&str> = steering::terms_of(&s.directive_history, DirectiveKind::Exclude);
            let violations = report::validate(&markdown, &s.registry, &s.ledger, &excluded);
            let status = if violations.is_empty() {
                ReportStatus::Complete
            } else {
                ReportStatus::DraftWithViolations
            };
            let report = ResearchReport {
                markdown,
                status,
                violations,
                citations: cited.into_iter().cloned().collect(),
                unused_sources: usage.unused,
                steering_history: s.queue.messages().to_vec(),
            };
            payload["status"] = json!(report.status);
            payload["violations"] = json!(report.violations);
            payload["cited"] = json!(usage.used);
            payload["unused_sources"] = json!(report.unused_sources);
            payload["markdown"] = json!(report.markdown);
            payload["version"] = json!(s.ledger.version());
            payload["llm_calls"] = json!(1);
            s.report = Some(report.clone());
            s.status = SessionStatus::Completed;
            (report, payload)
        });
        let loop_index = session.read(|s| s.current_loop);
        session.emit(loop_index, EventKind::Report, payload);
        session.log().close();
        report
    }

    /// Drive a session from wherever it is to a final report.
    pub async fn run(&self, session: &Session) -> ResearchReport {
        if session.log().is_empty() {
            self.initialize(session).await;
        }
        loop {
            if session.status().is_finished() {
                return session.report().expect("finished sessions carry a report");
            }
            let (current, max) = session.read(|s| (s.current_loop, s.max_loops));
            if current >= max {
                break;
            }
            if self.run_loop(session).await.terminate {
                break;
            }
        }
        self.generate_report(session).await
    }
}

/// Add a directive, folding it into an existing one with the same kind and
/// terms.
fn merge_directive(into: &mut Vec<Directive>, d: Directive) {
    match into.iter_mut().find(|x| x.kind == d.kind && x.terms == d.terms) {
        Some(existing) => {
            for i in d.origin_indices {
                if !existing.origin_indices.contains(&i) {
                    existing.origin_indices.push(i);
                }
            }
        }
        None => into.push(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::{AddTaskSpec, TodoUpdates};

    #[test]
    fn mode_budgets() {
        assert_eq!(Mode::Quick.max_loops(), 2);
        assert_eq!(Mode::Standard.max_loops(), 5);
        assert_eq!(Mode::Deep.max_loops(), 10);
        assert_eq!("DEEP".parse::<Mode>(), Ok(Mode::Deep));
        assert!("turbo".parse::<Mode>().is_err());
    }

    #[test]
    fn termination_clauses() {
        let complete = ReflectionOutcome {
            research_complete: true,
            ..Default::default()
        };
        let adds = ReflectionOutcome {
            todo_updates: TodoUpdates {
                add_tasks: vec![AddTaskSpec {
                    description: "x".into(),
                    rationale: String::new(),
                }],
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(should_terminate(2, 5, 3, Some(&complete)));
        assert!(should_terminate(5, 5, 3, Some(&adds)));
        assert!(should_terminate(1, 5, 0, Some(&ReflectionOutcome::default())));
        assert!(!should_terminate(1, 5, 0, Some(&adds)));
        assert!(!should_terminate(1, 5, 2, None));
    }
}
