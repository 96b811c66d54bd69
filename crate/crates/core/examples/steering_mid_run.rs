//! Steer a session between loops. The message is picked up at the next
//! reflection, which turns it into a priority-10 steering task that the
//! following loop searches first.

use std::sync::Arc;

use deepsteer::clock::{fixture_epoch, SteppingClock};
use deepsteer::engine::trajectory::EventKind;
use deepsteer::engine::{Engine, Mode};
use deepsteer::llm::{LlmGateway, PromptKind, RetryPolicy, Script, ScriptedProvider};
use deepsteer::retrieval::{FixtureCorpus, FixtureFetcher, ProviderRegistry};
use serde_json::json;

fn reflection(complete: bool, done: &[&str], add: &[&str], clear: &[usize]) -> String {
    let adds: Vec<_> = add.iter().map(|d| json!({"description": d})).collect();
    json!({
        "research_complete": complete, "section_gaps": {}, "priority_section": "",
        "knowledge_gap": "", "evaluation_notes": "",
        "todo_updates": {"mark_completed": done, "cancel_tasks": [], "add_tasks": adds},
        "clear_message_indices": clear
    })
    .to_string()
}

fn simple_plan(query: &str) -> String {
    json!({"query_complexity": "simple", "main_query": query, "tasks": []}).to_string()
}

fn script() -> Script {
    Script::new()
        .with(PromptKind::InitialPlan, "initial", r#"[{"description": "History of drought-tolerant maize breeding"}, {"description": "Yield data for drought-tolerant maize"}, {"description": "Seed adoption by smallholders"}]"#)
        .with(PromptKind::QueryPlan, "loop-0", simple_plan("History of drought-tolerant maize breeding"))
        .with(PromptKind::Synthesis, "loop-0", "Breeding began in the 1990s.")
        .with(PromptKind::Reflection, "loop-0", reflection(false, &["task-1"], &[], &[]))
        .with(PromptKind::QueryPlan, "loop-1", simple_plan("Yield data for drought-tolerant maize"))
        .with(PromptKind::Synthesis, "loop-1", "Yields improved under stress.")
        .with(PromptKind::Reflection, "loop-1", reflection(false, &["task-2"], &["Field trials of drought-tolerant maize in Kenya"], &[0]))
        .with(PromptKind::QueryPlan, "loop-2", simple_plan("Field trials of drought-tolerant maize in Kenya"))
        .with(PromptKind::Synthesis, "loop-2", "Kenyan trials confirmed gains.")
        .with(PromptKind::Reflection, "loop-2", reflection(true, &["task-4"], &[], &[]))
        .with(PromptKind::Report, "final", "# Drought-tolerant maize\n\n## Key Findings\n\nGains hold in field trials.")
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let llm = LlmGateway::new(Arc::new(ScriptedProvider::new(script())), RetryPolicy::test_profile());
    let fetcher = FixtureFetcher::new(FixtureCorpus::new()).lenient();
    let clock = Arc::new(SteppingClock::new(fixture_epoch(), 1_000));
    let engine = Engine::new(llm, ProviderRegistry::with_builtin(Arc::new(fetcher)), clock);

    let session = engine.start_session("Drought-tolerant maize", Mode::Standard).await?;
    engine.run_loop(&session).await;
    let index = session.enqueue_steering("focus on field trials in Kenya")?;
    println!("after loop 0: queued steering message #{index}");

    while !engine.run_loop(&session).await.terminate {}
    let report = engine.generate_report(&session).await;

    for e in session.events() {
        match e.kind {
            EventKind::Steering => println!("loop {} steering {:<8} {}", e.loop_index, e.action().unwrap_or("?"), e.payload["directives"]),
            EventKind::Reflection => println!("loop {} reflection applied {}", e.loop_index, e.payload["applied"]),
            EventKind::Plan => {
                let bound: Vec<_> = e.payload["planned"].as_array().unwrap().iter().map(|q| q["task_id"].clone()).collect();
                println!("loop {} plan bound to {:?}", e.loop_index, bound);
            }
            _ => {}
        }
    }
    println!("\n{}", report.markdown);
    Ok(())
}
