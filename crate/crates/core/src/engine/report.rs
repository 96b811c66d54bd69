//! Final report assembly and validation.

use serde::{Deserialize, Serialize};

use crate::ledger::{Task, TaskStatus, TodoLedger};
use crate::prompts;
use crate::steering::{MessageState, SteeringMessage};
use crate::synthesis::{citation_keys, SourceRecord, SourceRegistry};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Complete,
    DraftWithViolations,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    CitationCompleteness,
    StructuralCoherence,
    QueryCoverage,
    DirectiveAdherence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: Check,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchReport {
    pub markdown: String,
    pub status: ReportStatus,
    pub violations: Vec<Violation>,
    /// Sources cited by the report, in key order.
    pub citations: Vec<SourceRecord>,
    /// Canonical URLs gathered but never cited.
    pub unused_sources: Vec<String>,
    pub steering_history: Vec<SteeringMessage>,
}

pub const SOURCES_HEADING: &str = "## Sources";
pub const COVERAGE_HEADING: &str = "## Appendix: Coverage";
pub const STEERING_HEADING: &str = "## Steering History";

pub fn render_sources_for_prompt(registry: &SourceRegistry) -> String {
    if registry.is_empty() {
        return "(no sources gathered)".into();
    }
    registry
        .records()
        .map(|r| format!("[{}] {} — {}", r.key, r.title, r.canonical_url))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_steering_history(messages: &[SteeringMessage]) -> String {
    if messages.is_empty() {
        return "(none)".into();
    }
    messages
        .iter()
        .map(|m| {
            let state = match m.state {
                MessageState::Cleared => "addressed",
                MessageState::Queued | MessageState::Snapshotted => "still queued",
            };
            format!(
                "- [{}] {} ({state}, received {})",
                m.index,
                m.text,
                crate::ledger::format_timestamp(m.arrived_at)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_report_prompt(topic: &str, summary: &str, registry: &SourceRegistry, history: &[SteeringMessage]) -> String {
    prompts::render(
        prompts::REPORT,
        &[
            ("research_topic", topic),
            ("running_summary", if summary.is_empty() { "(empty)" } else { summary }),
            ("sources", &render_sources_for_prompt(registry)),
            ("steering_history", &render_steering_history(history)),
        ],
    )
}

/// Report used when the model cannot produce one.
pub fn fallback_body(topic: &str, summary: &str) -> String {
    let findings = if summary.trim().is_empty() {
        "No findings were gathered."
    } else {
        summary.trim()
    };
    format!("# {topic}\n\n## Key Findings\n\n{findings}\n")
}

fn coverage_row(task: &Task) -> String {
    let status = match task.status {
        TaskStatus::InProgress => "in_progress (stale)".to_string(),
        s => s.to_string(),
    };
    format!(
        "| {} | {} | {} | {} | P{} |",
        task.id,
        task.description.replace('|', "/"),
        status,
        task.source,
        task.priority.get()
    )
}

/// Append the generated sections: cited sources, task coverage, and the
/// steering history.
pub fn assemble(
    body: &str,
    cited: &[&SourceRecord],
    ledger: &TodoLedger,
    history: &[SteeringMessage],
) -> String {
    let mut out = body.trim_end().to_string();
    out.push_str("\n\n");
    out.push_str(SOURCES_HEADING);
    out.push_str("\n\n");
    if cited.is_empty() {
        out.push_str("(none)\n");
    }
    for r in cited {
        out.push_str(&format!("- [{}] {} — {}\n", r.key, r.title, r.canonical_url));
    }
    out.push('\n');
    out.push_str(COVERAGE_HEADING);
    out.push_str("\n\n| Task | Description | Status | Source | Priority |\n|---|---|---|---|---|\n");
    for task in ledger.tasks() {
        out.push_str(&coverage_row(task));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(STEERING_HEADING);
    out.push_str("\n\n");
    out.push_str(&render_steering_history(history));
    out.push('\n');
    out
}

fn headings(markdown: &str) -> impl Iterator<Item = &str> {
    markdown.lines().filter(|l| l.trim_start().starts_with('#'))
}

/// Run the four report checks over the assembled markdown.
pub fn validate(
    markdown: &str,
    registry: &SourceRegistry,
    ledger: &TodoLedger,
    excluded_terms: &[&str],
) -> Vec<Violation> {
    let mut violations = Vec::new();

    for key in citation_keys(markdown) {
        if registry.by_key(&key).is_none() {
            violations.push(Violation {
                check: Check::CitationCompleteness,
                detail: format!("[{key}] does not resolve to a source"),
            });
        }
    }

    let first = markdown.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    if !first.starts_with("# ") {
        violations.push(Violation {
            check: Check::StructuralCoherence,
            detail: "report does not open with a \"# \" title".into(),
        });
    }
    if !headings(markdown).any(|h| h.starts_with("## ") && h.to_lowercase().contains("findings")) {
        violations.push(Violation {
            check: Check::StructuralCoherence,
            detail: "no findings section".into(),
        });
    }
    if !markdown.lines().any(|l| l.trim_end() == SOURCES_HEADING) {
        violations.push(Violation {
            check: Check::StructuralCoherence,
            detail: "no sources section".into(),
        });
    }

    let coverage = markdown
        .split_once(COVERAGE_HEADING)
        .map(|(_, rest)| rest.split("\n## ").next().unwrap_or(rest))
        .unwrap_or("");
    for task in ledger.with_status(TaskStatus::Completed) {
        let row_start = format!("| {} |", task.id);
        if !coverage.lines().any(|l| l.starts_with(&row_start)) {
            violations.push(Violation {
                check: Check::QueryCoverage,
                detail: format!("completed task {} missing from the coverage table", task.id),
            });
        }
    }

    for heading in headings(markdown) {
        for term in excluded_terms {
            if text::contains_term(heading, term) {
                violations.push(Violation {
                    check: Check::DirectiveAdherence,
                    detail: format!("excluded term {term:?} appears in heading {:?}", heading.trim()),
                });
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;
    use crate::ledger::{NewTask, TaskSource};
    use crate::retrieval::SearchResult;

    fn registry(n: usize) -> SourceRegistry {
        let mut reg = SourceRegistry::new();
        let rs: Vec<SearchResult> = (1..=n)
            .map(|i| SearchResult {
                url: format!("https://s.org/{i}"),
                title: format!("Source {i}"),
                snippet: String::new(),
                raw_content: None,
                score: 0.5,
                provider: "general_search".into(),
                repository_root: None,
            })
            .collect();
        reg.register(&rs, 0);
        reg
    }

    fn completed_ledger() -> TodoLedger {
        let mut l = TodoLedger::new("s");
        let now = fixture_epoch();
        let id = l.add_task(NewTask::new("alpha", TaskSource::InitialQuery), now).unwrap().task_id;
        l.transition(&id, TaskStatus::InProgress, now).unwrap();
        l.transition(&id, TaskStatus::Completed, now).unwrap();
        l.add_task(NewTask::new("beta", TaskSource::InitialQuery), now).unwrap();
        let b = crate::ledger::TaskId::new("task-2");
        l.transition(&b, TaskStatus::InProgress, now).unwrap();
        l
    }

    #[test]
    fn clean_report_passes() {
        let reg = registry(2);
        let ledger = completed_ledger();
        let cited: Vec<&SourceRecord> = reg.records().take(1).collect();
        let md = assemble("# T\n\n## Key Findings\n\nA claim [S1].", &cited, &ledger, &[]);
        assert_eq!(validate(&md, &reg, &ledger, &[]), vec![]);
        assert!(md.contains("| task-2 | beta | in_progress (stale) |"));
    }

    #[test]
    fn each_check_can_fail() {
        let reg = registry(1);
        let ledger = completed_ledger();
        let md = "Intro without title [S7]\n\n## Blockchain Angle\n";
        let checks: Vec<Check> = validate(md, &reg, &ledger, &["blockchain"]).into_iter().map(|v| v.check).collect();
        assert!(checks.contains(&Check::CitationCompleteness));
        assert!(checks.contains(&Check::StructuralCoherence));
        assert!(checks.contains(&Check::QueryCoverage));
        assert!(checks.contains(&Check::DirectiveAdherence));
    }

    #[test]
    fn zero_sources_is_a_valid_minimal_report() {
        let reg = SourceRegistry::new();
        let ledger = TodoLedger::new("s");
        let md = assemble(&fallback_body("T", ""), &[], &ledger, &[]);
        assert!(validate(&md, &reg, &ledger, &[]).is_empty());
        assert!(md.contains("## Sources\n\n(none)"));
    }
}
