//! Aggregate statistics over recorded trajectories.
//!
//! Per trajectory:
//! - iterations: number of reflection events
//! - tool calls: model calls (`llm_calls` summed over all payloads) plus
//!   every dispatched query, search or connector
//! - searches: queries dispatched to the four built-in search providers
//! - report words: whitespace-separated words of the report markdown
//! - growth per iteration: words of the last running summary divided by
//!   the number of synthesis events
//!
//! Averages are taken across trajectories; per-iteration figures are the
//! mean of each trajectory's own ratio. A ratio with a zero denominator
//! counts as 0.

use serde::Serialize;
use serde_json::Value;

use super::trajectory::{EventKind, TrajectoryEvent};
use crate::retrieval::SEARCH_PROVIDERS;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryCounts {
    pub iterations: u64,
    pub tool_calls: u64,
    pub searches: u64,
    pub report_words: u64,
    pub final_summary_words: u64,
    pub synthesis_events: u64,
}

impl TrajectoryCounts {
    pub fn of(events: &[TrajectoryEvent]) -> Self {
        let mut c = TrajectoryCounts {
            iterations: 0,
            tool_calls: 0,
            searches: 0,
            report_words: 0,
            final_summary_words: 0,
            synthesis_events: 0,
        };
        for e in events {
            c.tool_calls += e.llm_calls();
            match e.kind {
                EventKind::Reflection => c.iterations += 1,
                EventKind::Search => {
                    for q in e.payload.get("queries").and_then(Value::as_array).into_iter().flatten() {
                        c.tool_calls += 1;
                        let tool = q.get("tool").and_then(Value::as_str).unwrap_or_default();
                        if SEARCH_PROVIDERS.contains(&tool) {
                            c.searches += 1;
                        }
                    }
                }
                EventKind::Synthesis => {
                    c.synthesis_events += 1;
                    if let Some(w) = e.payload.get("summary_words").and_then(Value::as_u64) {
                        c.final_summary_words = w;
                    }
                }
                EventKind::Report => {
                    let md = e.payload.get("markdown").and_then(Value::as_str).unwrap_or_default();
                    c.report_words = text::word_count(md) as u64;
                }
                _ => {}
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub trajectories: usize,
    pub avg_iterations: f64,
    pub avg_tool_calls: f64,
    pub avg_tool_calls_per_iteration: f64,
    pub avg_searches: f64,
    pub avg_report_words: f64,
    pub avg_growth_per_iteration: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Group events by session, preserving first-seen order.
pub fn split_sessions(events: Vec<TrajectoryEvent>) -> Vec<Vec<TrajectoryEvent>> {
    let mut groups: indexmap::IndexMap<String, Vec<TrajectoryEvent>> = indexmap::IndexMap::new();
    for e in events {
        groups.entry(e.session_id.clone()).or_default().push(e);
    }
    groups.into_values().collect()
}

pub fn compute_trajectory_stats(trajectories: &[Vec<TrajectoryEvent>]) -> TrajectoryStats {
    let counts: Vec<TrajectoryCounts> = trajectories.iter().map(|t| TrajectoryCounts::of(t)).collect();
    let n = counts.len();
    let mean = |f: &dyn Fn(&TrajectoryCounts) -> f64| {
        if n == 0 {
            0.0
        } else {
            counts.iter().map(f).sum::<f64>() / n as f64
        }
    };
    TrajectoryStats {
        trajectories: n,
        avg_iterations: mean(&|c| c.iterations as f64),
        avg_tool_calls: mean(&|c| c.tool_calls as f64),
        avg_tool_calls_per_iteration: mean(&|c| ratio(c.tool_calls, c.iterations)),
        avg_searches: mean(&|c| c.searches as f64),
        avg_report_words: mean(&|c| c.report_words as f64),
        avg_growth_per_iteration: mean(&|c| ratio(c.final_summary_words, c.synthesis_events)),
    }
}

/// Fixed-width table, two decimals, independent of locale.
pub fn render_table(stats: &TrajectoryStats) -> String {
    let rows = [
        ("Avg. Iterations per Trajectory", stats.avg_iterations),
        ("Avg. Tool Calls per Trajectory", stats.avg_tool_calls),
        ("Avg. Tool Calls per Iteration", stats.avg_tool_calls_per_iteration),
        ("Avg. Searches per Trajectory", stats.avg_searches),
        ("Avg. Report Length (words)", stats.avg_report_words),
        ("Avg. Report Growth per Iteration", stats.avg_growth_per_iteration),
    ];
    let mut out = format!("{:<36}{:>12}\n", "Statistic", "Value");
    out.push_str(&format!("{:<36}{:>12}\n", "Trajectories", stats.trajectories));
    for (label, value) in rows {
        out.push_str(&format!("{label:<36}{value:>12.2}\n"));
    }
    out
}
