//! Versioned task ledger: priorities, fuzzy merging, lifecycle, and the
//! markdown rendering the steering UI shows.

use deepsteer::clock::fixture_epoch;
use deepsteer::ledger::{NewTask, TaskDraft, TaskSource, TaskStatus, TodoLedger};

fn main() -> anyhow::Result<()> {
    let now = fixture_epoch();
    let mut ledger = TodoLedger::new("demo");

    let drafts = [
        TaskDraft::new("Survey generative AI use in laboratories", None),
        TaskDraft::new("Identify reproducibility concerns", Some(9)),
        TaskDraft::new("Map funding trends", None),
    ];
    ledger.assign_priorities(&drafts, now)?;
    println!("after initial plan: version {}", ledger.version());

    let merged = ledger.add_task(NewTask::new("Survey generative AI use in the laboratories.", TaskSource::KnowledgeGap), now)?;
    println!("near-duplicate merged into {}: {}", merged.task_id, merged.merged);

    let steer = ledger.add_task(NewTask::new("Compare peer-reviewed benchmarks", TaskSource::Steering), now)?;
    println!("steering task {} gets P{}", steer.task_id, ledger.get(&steer.task_id).unwrap().priority.get());

    let batch: Vec<String> = ledger.next_batch(2).iter().map(|t| t.id.to_string()).collect();
    println!("next batch: {batch:?}");
    for id in ledger.next_batch(2).iter().map(|t| t.id.clone()).collect::<Vec<_>>() {
        ledger.transition(&id, TaskStatus::InProgress, now)?;
    }
    let first = ledger.next_batch(10)[0].id.clone();
    ledger.transition(&first, TaskStatus::Canceled, now)?;
    if let Err(e) = ledger.transition(&first, TaskStatus::Pending, now) {
        println!("rejected: {e}");
    }

    println!("\n{}", ledger.render_markdown());
    Ok(())
}
