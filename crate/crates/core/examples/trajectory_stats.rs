//! Aggregate statistics over trajectory exports. Defaults to the bundled
//! recording; pass JSONL paths to use your own.

use deepsteer::engine::stats::{compute_trajectory_stats, render_table, split_sessions};
use deepsteer::engine::trajectory::parse_jsonl;
use deepsteer::fixture::GOLDEN_TRAJECTORY;

fn main() -> anyhow::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let mut trajectories = Vec::new();
    if paths.is_empty() {
        trajectories.extend(split_sessions(parse_jsonl(GOLDEN_TRAJECTORY)?));
    }
    for path in paths {
        trajectories.extend(split_sessions(parse_jsonl(&std::fs::read_to_string(&path)?)?));
    }
    let stats = compute_trajectory_stats(&trajectories);
    print!("{}", render_table(&stats));
    Ok(())
}
