//! Steering queue: messages arrive at any time, reflection snapshots them,
//! and only the ones it addresses are cleared.

use deepsteer::clock::fixture_epoch;
use deepsteer::steering::{extract_directive, SteeringQueue};

fn main() -> anyhow::Result<()> {
    let now = fixture_epoch();
    let mut queue = SteeringQueue::new();
    queue.enqueue("focus on peer-reviewed sources", now)?;
    queue.enqueue("exclude blockchain and crypto", now)?;

    let snapshot = queue.snapshot()?;
    for m in &snapshot {
        println!("snapshot #{} {:?} -> {:?}", m.index, m.text, extract_directive(m));
    }

    // arrives while reflection is running
    queue.enqueue("prioritize 2024 publications", now)?;

    // reflection handled only the exclusion
    queue.merge_post_reflection(&[snapshot[1].index])?;

    for m in queue.messages() {
        println!("#{} {:<32} {:?}", m.index, m.text, m.state);
    }
    let order: Vec<usize> = queue.queued().iter().map(|m| m.index).collect();
    println!("next reflection sees {order:?}");
    Ok(())
}
