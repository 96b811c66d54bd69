//! Prompt construction and parsing for the initial decomposition and the
//! per-loop query plan, plus the quality-control pass that binds planned
//! queries to ledger tasks before dispatch.

use chrono::{DateTime, Datelike, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ledger::{LedgerError, NewTask, Task, TaskDraft, TaskId, TaskSource, TaskStatus, TodoLedger};
use crate::prompts;
use crate::retrieval::GENERAL_SEARCH;
use crate::steering::{terms_of, Directive, DirectiveKind};
use crate::text;

/// Hard cap on dispatched query length, in characters.
pub const MAX_QUERY_CHARS: usize = 400;

pub const MIN_INITIAL_TASKS: usize = 3;
pub const MAX_INITIAL_TASKS: usize = 5;
pub const MIN_COMPLEX_QUERIES: usize = 3;
pub const MAX_COMPLEX_QUERIES: usize = 7;

/// Research context used before any summary exists.
pub const FRESH_CONTEXT: &str = "Starting fresh research";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeContext {
    pub current_date: NaiveDate,
    pub current_year: i32,
    pub one_year_ago: NaiveDate,
}

impl TimeContext {
    pub fn at(now: DateTime<Utc>) -> Self {
        let today = now.date_naive();
        Self {
            current_date: today,
            current_year: today.year(),
            one_year_ago: today.checked_sub_months(Months::new(12)).unwrap_or(today),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanParseError {
    #[error("model output is not valid JSON: {0}")]
    Json(String),
    #[error("unexpected plan shape: {0}")]
    Shape(String),
    #[error("plan has {found} usable tasks, need at least {min}")]
    TooFew { found: usize, min: usize },
}

pub fn build_initial_prompt(topic: &str, initial_query: &str, context: &str) -> String {
    let context = if context.trim().is_empty() { FRESH_CONTEXT } else { context };
    prompts::render(
        prompts::INITIAL_PLAN,
        &[
            ("research_topic", topic),
            ("initial_query", initial_query),
            ("research_context", context),
        ],
    )
}

/// Parse the initial decomposition into 3 to 5 drafts. Priorities outside
/// 1..=10 are ignored; the rest are clamped into the ledger band.
pub fn parse_initial_plan(llm_text: &str) -> Result<Vec<TaskDraft>, PlanParseError> {
    let value = text::extract_json(llm_text, Some('[')).map_err(PlanParseError::Json)?;
    let items = match &value {
        Value::Array(items) => items.as_slice(),
        Value::Object(obj) => obj
            .get("tasks")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .ok_or_else(|| PlanParseError::Shape("expected a JSON array of tasks".into()))?,
        _ => return Err(PlanParseError::Shape("expected a JSON array of tasks".into())),
    };
    let drafts: Vec<TaskDraft> = items
        .iter()
        .filter_map(|item| {
            let description = text::tidy(item.get("description")?.as_str()?);
            if description.is_empty() {
                return None;
            }
            let priority = item
                .get("priority")
                .and_then(Value::as_i64)
                .filter(|p| (1..=10).contains(p))
                .map(|p| p.clamp(5, 10) as u8);
            Some(TaskDraft::new(description, priority))
        })
        .take(MAX_INITIAL_TASKS)
        .collect();
    if drafts.len() < MIN_INITIAL_TASKS {
        return Err(PlanParseError::TooFew {
            found: drafts.len(),
            min: MIN_INITIAL_TASKS,
        });
    }
    Ok(drafts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub name: String,
    pub query: String,
    pub aspect: String,
    pub tool: String,
    /// Backing ledger task. Always set once quality control has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub complexity: Complexity,
    pub main_query: String,
    pub planned: Vec<PlannedQuery>,
}

/// One line per open task, in scheduling order.
pub fn render_task_list(ledger: &TodoLedger) -> String {
    let open = ledger.open_tasks();
    if open.is_empty() {
        return "todo.md: (no open tasks)".into();
    }
    let mut out = String::from("todo.md open tasks:");
    for t in open {
        out.push_str(&format!(
            "\n- [{}] (P{}, {}, {}) {}",
            t.id,
            t.priority.get(),
            t.status,
            t.source,
            t.description
        ));
    }
    out
}

pub fn render_directives(directives: &[Directive]) -> String {
    if directives.is_empty() {
        return "Active steering directives: (none)".into();
    }
    let mut out = String::from("Active steering directives:");
    for d in directives {
        let label = match d.kind {
            DirectiveKind::Focus => "FOCUS ON",
            DirectiveKind::Exclude => "EXCLUDE",
            DirectiveKind::Prioritize => "PRIORITIZE",
        };
        out.push_str(&format!("\n- {label}: {}", d.terms.join("; ")));
    }
    out
}

pub fn render_tools<'a>(tools: impl IntoIterator<Item = &'a str>) -> String {
    tools
        .into_iter()
        .map(|name| {
            let what = match name {
                "general_search" => "broad web search with full content extraction",
                "academic_search" => "scholarly literature, recency weighted",
                "github_search" => "code and repositories",
                "linkedin_search" => "professional profiles, linkedin.com only",
                _ => "external tool connector",
            };
            format!("- {name}: {what}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inputs of the per-loop query-generation prompt.
#[derive(Debug, Clone, Copy)]
pub struct QueryPromptInput<'a> {
    pub topic: &'a str,
    pub running_summary: &'a str,
    pub ledger: &'a TodoLedger,
    pub directives: &'a [Directive],
    pub time: TimeContext,
    pub uploaded_knowledge: Option<&'a str>,
    pub tools: &'a [String],
}

pub fn build_query_prompt(input: &QueryPromptInput<'_>) -> String {
    let augment = match input.uploaded_knowledge.filter(|k| !k.trim().is_empty()) {
        Some(knowledge) => prompts::render(
            prompts::AUGMENT_KNOWLEDGE_BLOCKS,
            &[("augment_knowledge_context", knowledge)],
        ),
        None => String::new(),
    };
    let context = if input.running_summary.trim().is_empty() {
        FRESH_CONTEXT
    } else {
        input.running_summary
    };
    let time = input.time;
    prompts::render(
        prompts::QUERY_GENERATION,
        &[
            ("current_date", &time.current_date.to_string()),
            ("current_year", &time.current_year.to_string()),
            ("one_year_ago", &time.one_year_ago.to_string()),
            ("augment_knowledge_blocks", &augment),
            ("research_topic", input.topic),
            ("research_context", context),
            ("task_list", &render_task_list(input.ledger)),
            ("steering_directives", &render_directives(input.directives)),
            ("available_tools", &render_tools(input.tools.iter().map(String::as_str))),
        ],
    )
}

fn planned_from(item: &Value, index: usize, known_tools: &[String]) -> Option<PlannedQuery> {
    let field = |k: &str| item.get(k).and_then(Value::as_str).map(text::tidy).unwrap_or_default();
    let query = text::truncate_at_word_boundary(&field("query"), MAX_QUERY_CHARS);
    if query.is_empty() {
        return None;
    }
    let tool = field("tool");
    let tool = if known_tools.iter().any(|t| *t == tool) {
        tool
    } else {
        if !tool.is_empty() {
            tracing::warn!(%tool, "unknown tool in query plan, using general_search");
        }
        GENERAL_SEARCH.to_string()
    };
    let name = field("name");
    Some(PlannedQuery {
        name: if name.is_empty() { format!("query-{}", index + 1) } else { name },
        query,
        aspect: field("aspect"),
        tool,
        task_id: Some(field("task_id")).filter(|s| !s.is_empty()).map(TaskId::new),
    })
}

pub fn parse_query_plan(llm_text: &str, known_tools: &[String]) -> Result<QueryPlan, PlanParseError> {
    let value = text::extract_json(llm_text, Some('{')).map_err(PlanParseError::Json)?;
    if !value.is_object() {
        return Err(PlanParseError::Shape("expected a JSON object".into()));
    }
    let complexity = match value.get("query_complexity").and_then(Value::as_str) {
        Some(c) if c.eq_ignore_ascii_case("simple") => Complexity::Simple,
        _ => Complexity::Complex,
    };
    let main_query = text::truncate_at_word_boundary(
        &text::tidy(value.get("main_query").and_then(Value::as_str).unwrap_or("")),
        MAX_QUERY_CHARS,
    );
    let items = value.get("tasks").and_then(Value::as_array).cloned().unwrap_or_default();
    let planned: Vec<PlannedQuery> = items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| planned_from(item, i, known_tools))
        .collect();

    match complexity {
        Complexity::Simple => {
            let first = planned.into_iter().next();
            let query = if main_query.is_empty() {
                first.as_ref().map(|q| q.query.clone()).unwrap_or_default()
            } else {
                main_query.clone()
            };
            if query.is_empty() {
                return Err(PlanParseError::TooFew { found: 0, min: 1 });
            }
            let (tool, task_id, aspect) = first
                .map(|q| (q.tool, q.task_id, q.aspect))
                .unwrap_or_else(|| (GENERAL_SEARCH.to_string(), None, String::new()));
            Ok(QueryPlan {
                complexity,
                main_query: query.clone(),
                planned: vec![PlannedQuery {
                    name: "main".into(),
                    query,
                    aspect,
                    tool,
                    task_id,
                }],
            })
        }
        Complexity::Complex => {
            if planned.len() < MIN_COMPLEX_QUERIES {
                return Err(PlanParseError::TooFew {
                    found: planned.len(),
                    min: MIN_COMPLEX_QUERIES,
                });
            }
            Ok(QueryPlan {
                complexity,
                main_query,
                planned: planned.into_iter().take(MAX_COMPLEX_QUERIES).collect(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Excluded,
    DuplicateInPlan,
    AlreadyCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedQuery {
    pub query: PlannedQuery,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QcOutcome {
    pub plan: QueryPlan,
    pub dropped: Vec<DroppedQuery>,
    /// Existing tasks that absorbed a planned query by fuzzy match.
    pub merged_into: Vec<TaskId>,
    /// Tasks created for queries that matched nothing.
    pub created: Vec<TaskId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QcError {
    #[error("every planned query was removed by quality control")]
    EmptyPlanAfterQc { dropped: Vec<DroppedQuery> },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Semantic dedup against the ledger, steering constraints, and
/// steering-first ordering. Surviving queries end up backed by an
/// in-progress task; new tasks take `new_task_source`.
pub fn quality_control(
    plan: QueryPlan,
    ledger: &mut TodoLedger,
    directives: &[Directive],
    new_task_source: TaskSource,
    now: DateTime<Utc>,
) -> Result<QcOutcome, QcError> {
    let excluded = terms_of(directives, DirectiveKind::Exclude);
    let focus = terms_of(directives, DirectiveKind::Focus);
    let boosted: Vec<&str> = focus
        .iter()
        .copied()
        .chain(terms_of(directives, DirectiveKind::Prioritize))
        .collect();

    let mut kept: Vec<(PlannedQuery, bool)> = Vec::new();
    let mut dropped = Vec::new();
    let mut merged_into = Vec::new();
    let mut created = Vec::new();

    for mut q in plan.planned {
        let drop = |q: PlannedQuery, reason| DroppedQuery { query: q, reason };
        if excluded.iter().any(|term| text::contains_term(&q.query, term)) {
            dropped.push(drop(q, DropReason::Excluded));
            continue;
        }
        let mut query = q.query.clone();
        for term in &focus {
            if !text::contains_term(&query, term) {
                query.push(' ');
                query.push_str(term);
            }
        }
        let query = text::truncate_at_word_boundary(&query, MAX_QUERY_CHARS);
        // compare the emitted form too: shared focus suffixes can make distinct queries converge
        if kept.iter().any(|(k, _)| {
            text::is_fuzzy_duplicate(&k.query, &query) || text::is_fuzzy_duplicate(&k.query, &q.query)
        }) {
            dropped.push(drop(q, DropReason::DuplicateInPlan));
            continue;
        }

        let bound = q
            .task_id
            .as_ref()
            .and_then(|id| ledger.get(id))
            .filter(|t| t.status.is_open())
            .map(|t| t.id.clone());
        let task_id = match bound {
            Some(id) => id,
            None => match ledger.find_duplicate(&q.query).map(|t| (t.id.clone(), t.status)) {
                Some((_, TaskStatus::Completed)) => {
                    dropped.push(drop(q, DropReason::AlreadyCompleted));
                    continue;
                }
                _ => {
                    let outcome = ledger.add_task(
                        NewTask::new(q.query.clone(), new_task_source).tool(q.tool.clone()),
                        now,
                    )?;
                    if outcome.merged {
                        merged_into.push(outcome.task_id.clone());
                    } else {
                        created.push(outcome.task_id.clone());
                    }
                    outcome.task_id
                }
            },
        };

        let task: &Task = ledger.get(&task_id).expect("bound task exists");
        let aligned = task.source == TaskSource::Steering
            || boosted.iter().any(|term| text::contains_term(&q.query, term));
        q.query = query;
        q.task_id = Some(task_id);
        kept.push((q, aligned));
    }

    if kept.is_empty() {
        return Err(QcError::EmptyPlanAfterQc { dropped });
    }

    let priority_of = |q: &PlannedQuery| {
        q.task_id
            .as_ref()
            .and_then(|id| ledger.get(id))
            .map(|t| t.priority.get())
            .unwrap_or(0)
    };
    // stable sort keeps plan order among equals
    kept.sort_by_key(|(q, aligned)| (!*aligned, std::cmp::Reverse(priority_of(q))));

    for (q, _) in &kept {
        let id = q.task_id.as_ref().expect("set above");
        if ledger.get(id).map(|t| t.status) == Some(TaskStatus::Pending) {
            ledger.transition(id, TaskStatus::InProgress, now)?;
        }
    }

    Ok(QcOutcome {
        plan: QueryPlan {
            complexity: plan.complexity,
            main_query: plan.main_query,
            planned: kept.into_iter().map(|(q, _)| q).collect(),
        },
        dropped,
        merged_into,
        created,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;
    use crate::retrieval::SEARCH_PROVIDERS;

    fn tools() -> Vec<String> {
        SEARCH_PROVIDERS.iter().map(|s| s.to_string()).collect()
    }

    const SAMPLE_PLAN: &str = r#"<answer>
[
  {"description": "Survey major applications of generative AI in scientific discovery", "priority": 8, "type": "research"},
  {"description": "Identify key papers and institutions leading AI-assisted science research", "priority": 7, "type": "research"},
  {"description": "Examine methodological advances enabled by generative models in ...", "priority": 6, "type": "research"},
  {"description": "Assess challenges and ethical considerations of AI-generated scientific results", "priority": 5, "type": "research"}
]
</answer>"#;

    #[test]
    fn initial_plan_from_template_example() {
        let drafts = parse_initial_plan(SAMPLE_PLAN).unwrap();
        assert_eq!(drafts.len(), 4);
        assert_eq!(drafts[0].description, "Survey major applications of generative AI in scientific discovery");
        assert_eq!(drafts.iter().map(|d| d.llm_priority).collect::<Vec<_>>(), vec![Some(8), Some(7), Some(6), Some(5)]);
    }

    #[test]
    fn initial_plan_bounds() {
        let arr = |n: usize| {
            let items: Vec<String> = (0..n)
                .map(|i| format!(r#"{{"description": "task number {i}", "priority": 2}}"#))
                .collect();
            format!("<answer>[{}]</answer>", items.join(","))
        };
        assert!(matches!(parse_initial_plan(&arr(2)), Err(PlanParseError::TooFew { found: 2, .. })));
        let six = parse_initial_plan(&arr(6)).unwrap();
        assert_eq!(six.len(), 5);
        assert_eq!(six[0].llm_priority, Some(5));
        assert!(parse_initial_plan("no json here").is_err());
    }

    #[test]
    fn fenced_plan_is_repaired() {
        let fenced = "Here you go:\n```json\n[{\"description\":\"a b\"},{\"description\":\"c d\"},{\"description\":\"e f\"}]\n```";
        assert_eq!(parse_initial_plan(fenced).unwrap().len(), 3);
    }

    #[test]
    fn empty_context_fallback() {
        let p = build_initial_prompt("T", "Q", "  ");
        assert!(p.contains("Research Context: Starting fresh research"));
        assert_eq!(p, build_initial_prompt("T", "Q", ""));
    }

    #[test]
    fn simple_plan_collapses() {
        let plan = parse_query_plan(
            r#"{"query_complexity":"simple","main_query":"What is GPT-4?","tasks":[{"query":"x","tool":"academic_search"}]}"#,
            &tools(),
        )
        .unwrap();
        assert_eq!(plan.planned.len(), 1);
        assert_eq!(plan.planned[0].query, "What is GPT-4?");
        assert_eq!(plan.planned[0].tool, "academic_search");
    }

    #[test]
    fn complex_plan_clamps_and_falls_back() {
        let tasks: Vec<String> = (0..9)
            .map(|i| format!(r#"{{"name":"n{i}","query":"distinct facet {i}","tool":"bing"}}"#))
            .collect();
        let plan = parse_query_plan(
            &format!(r#"{{"query_complexity":"complex","main_query":"m","tasks":[{}]}}"#, tasks.join(",")),
            &tools(),
        )
        .unwrap();
        assert_eq!(plan.planned.len(), 7);
        assert!(plan.planned.iter().all(|q| q.tool == GENERAL_SEARCH));
    }

    #[test]
    fn long_queries_are_capped() {
        let long = "word ".repeat(90);
        let plan = parse_query_plan(
            &format!(r#"{{"query_complexity":"simple","main_query":"{long}"}}"#),
            &tools(),
        )
        .unwrap();
        let q = &plan.planned[0].query;
        assert!(q.chars().count() <= MAX_QUERY_CHARS);
        assert!(q.ends_with("word"));
    }

    #[test]
    fn time_context_leap_day() {
        let now = chrono::DateTime::parse_from_rfc3339("2024-02-29T12:00:00Z").unwrap().with_timezone(&Utc);
        let t = TimeContext::at(now);
        assert_eq!(t.one_year_ago.to_string(), "2023-02-28");
        assert_eq!(t.current_year, 2024);
    }

    fn plan(queries: &[&str]) -> QueryPlan {
        QueryPlan {
            complexity: Complexity::Complex,
            main_query: String::new(),
            planned: queries
                .iter()
                .map(|q| PlannedQuery {
                    name: q.to_string(),
                    query: q.to_string(),
                    aspect: String::new(),
                    tool: GENERAL_SEARCH.into(),
                    task_id: None,
                })
                .collect(),
        }
    }

    fn directive(kind: DirectiveKind, term: &str) -> Directive {
        Directive {
            kind,
            terms: vec![term.into()],
            origin_indices: vec![0],
        }
    }

    #[test]
    fn qc_merges_into_pending_task() {
        let mut ledger = TodoLedger::new("s");
        ledger
            .add_task(NewTask::new("Survey major applications of generative AI in scientific discovery", TaskSource::KnowledgeGap), fixture_epoch())
            .unwrap();
        let out = quality_control(
            plan(&["survey the major applications of generative AI in scientific discovery."]),
            &mut ledger,
            &[],
            TaskSource::InitialQuery,
            fixture_epoch(),
        )
        .unwrap();
        assert_eq!(ledger.len(), 1);
        assert_eq!(out.merged_into.len(), 1);
        let task = ledger.tasks().next().unwrap();
        assert_eq!(task.priority.get(), 9);
        assert_eq!(task.status, TaskStatus::InProgress);
    }

    #[test]
    fn qc_excludes_and_reorders() {
        let mut ledger = TodoLedger::new("s");
        let out = quality_control(
            plan(&["AI in drug discovery", "blockchain for lab data provenance", "peer-reviewed evaluations of AI tools"]),
            &mut ledger,
            &[directive(DirectiveKind::Exclude, "blockchain"), directive(DirectiveKind::Focus, "peer-reviewed")],
            TaskSource::KnowledgeGap,
            fixture_epoch(),
        )
        .unwrap();
        let queries: Vec<&str> = out.plan.planned.iter().map(|q| q.query.as_str()).collect();
        assert_eq!(queries, vec!["peer-reviewed evaluations of AI tools", "AI in drug discovery peer-reviewed"]);
        assert_eq!(out.dropped[0].reason, DropReason::Excluded);
        assert_eq!(ledger.len(), 2);
        assert!(ledger.tasks().all(|t| t.status == TaskStatus::InProgress));
    }

    #[test]
    fn qc_all_excluded_is_an_error_without_mutation() {
        let mut ledger = TodoLedger::new("s");
        let err = quality_control(
            plan(&["blockchain one", "blockchain two", "more blockchain"]),
            &mut ledger,
            &[directive(DirectiveKind::Exclude, "blockchain")],
            TaskSource::KnowledgeGap,
            fixture_epoch(),
        )
        .unwrap_err();
        assert!(matches!(err, QcError::EmptyPlanAfterQc { ref dropped } if dropped.len() == 3));
        assert_eq!(ledger.version(), 0);
    }

    #[test]
    fn augment_block_omitted_when_absent() {
        let ledger = TodoLedger::new("s");
        let tools = tools();
        let mut input = QueryPromptInput {
            topic: "T",
            running_summary: "",
            ledger: &ledger,
            directives: &[],
            time: TimeContext::at(fixture_epoch()),
            uploaded_knowledge: None,
            tools: &tools,
        };
        let without = build_query_prompt(&input);
        assert!(!without.contains("AUGMENT_KNOWLEDGE"));
        assert!(without.contains("Current date: 2025-06-01"));
        assert!(without.contains("One year ago: 2024-06-01"));
        input.uploaded_knowledge = Some("internal memo");
        let with = build_query_prompt(&input);
        assert!(with.contains("<AUGMENT_KNOWLEDGE_CONTEXT>\ninternal memo"));
    }
}
