//! Parse a model's query plan and run quality control over it: exclusion
//! directives, in-plan dedup, task binding, and focus terms.

use deepsteer::clock::fixture_epoch;
use deepsteer::ledger::{NewTask, TaskSource, TodoLedger};
use deepsteer::planning::{parse_query_plan, quality_control};
use deepsteer::retrieval::SEARCH_PROVIDERS;
use deepsteer::steering::{Directive, DirectiveKind};

const REPLY: &str = r#"<answer>
{"query_complexity": "complex", "main_query": "AI in drug discovery",
 "tasks": [
  {"name": "trials", "query": "AI designed molecules in clinical trials", "aspect": "evidence", "tool": "academic_search"},
  {"name": "trials-dup", "query": "AI-designed molecules in clinical trials", "aspect": "evidence", "tool": "general_search"},
  {"name": "tokens", "query": "blockchain for pharma data sharing", "aspect": "infra", "tool": "general_search"},
  {"name": "code", "query": "open source docking pipelines", "aspect": "tools", "tool": "github_search"}
 ]}
</answer>"#;

fn main() -> anyhow::Result<()> {
    let now = fixture_epoch();
    let tools: Vec<String> = SEARCH_PROVIDERS.iter().map(|s| s.to_string()).collect();
    let plan = parse_query_plan(REPLY, &tools)?;
    println!("parsed {} queries ({:?})", plan.planned.len(), plan.complexity);

    let mut ledger = TodoLedger::new("demo");
    ledger.add_task(NewTask::new("Open source docking pipelines", TaskSource::InitialQuery), now)?;
    let directives = vec![
        Directive { kind: DirectiveKind::Exclude, terms: vec!["blockchain".into()], origin_indices: vec![0] },
        Directive { kind: DirectiveKind::Focus, terms: vec!["peer-reviewed".into()], origin_indices: vec![1] },
    ];
    let qc = quality_control(plan, &mut ledger, &directives, TaskSource::KnowledgeGap, now)?;
    for q in &qc.plan.planned {
        println!("keep  {:<12} {:<16} {} -> {}", q.name, q.tool, q.task_id.as_ref().unwrap(), q.query);
    }
    for d in &qc.dropped {
        println!("drop  {:<12} {:?}", d.query.name, d.reason);
    }
    println!("\n{}", ledger.render_markdown());
    Ok(())
}
