//! Test support: independent oracles, a synthetic scripted engine, and
//! event-stream frame parsing.

#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use deepsteer::clock::{fixture_epoch, SteppingClock};
use deepsteer::engine::trajectory::{EventKind, TrajectoryEvent};
use deepsteer::engine::{Engine, EngineConfig, Mode};
use deepsteer::llm::{LlmGateway, PromptKind, RetryPolicy, Script, ScriptedProvider};
use deepsteer::retrieval::{FixtureCorpus, FixtureFetcher, ProviderRegistry};
use serde_json::{json, Value};

pub fn at(secs: i64) -> DateTime<Utc> {
    fixture_epoch() + Duration::seconds(secs)
}

// ---- oracles ----

/// Textbook two-row Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// `1 - distance / longer length`; two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

const VERBS: [&str; 7] = ["research", "investigate", "explore", "analyze", "survey", "examine", "study"];

/// Lowercase, keep letters, digits and whitespace, collapse runs of
/// whitespace, drop one leading research verb.
pub fn normalize(text: &str) -> String {
    let mut kept = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            kept.push(c);
        } else if c.is_whitespace() {
            kept.push(' ');
        }
    }
    let mut words: Vec<&str> = kept.split(' ').filter(|w| !w.is_empty()).collect();
    if words.first().is_some_and(|w| VERBS.contains(w)) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn is_duplicate(a: &str, b: &str) -> bool {
    similarity(&normalize(a), &normalize(b)) >= 0.85
}

/// Initial-plan priority for 0-based index `i` of `n` drafts.
pub fn formula_priority(n: usize, i: usize) -> u8 {
    (5 + n as i64 - i as i64).clamp(5, 10) as u8
}

// ---- synthetic sessions ----

const QUERIES: [&str; 12] = [
    "coral reef bleaching thresholds",
    "lithium battery recycling economics",
    "medieval trade routes in the baltic",
    "quantum error correction hardware",
    "urban heat island mitigation",
    "antibiotic resistance surveillance networks",
    "volcanic ash aviation hazards",
    "deep sea mining regulation",
    "migratory bird navigation cues",
    "permafrost methane release rates",
    "desalination membrane fouling",
    "ancient grain domestication genetics",
];

const GAPS: [&str; 12] = [
    "compare glacier retreat datasets",
    "map semiconductor supply chains",
    "assess wildfire smoke health burden",
    "quantify pollinator decline drivers",
    "trace microplastic ocean transport",
    "evaluate tidal energy prototypes",
    "catalog exoplanet atmosphere spectra",
    "review soil carbon sequestration trials",
    "measure groundwater depletion hotspots",
    "benchmark flood forecasting models",
    "document language extinction pace",
    "profile hydrogen storage materials",
];

pub const SYNTHETIC_TOPIC: &str = "Synthetic topic for engine tests";

/// Script for a session that never finishes early, or reports
/// `research_complete` at `complete_at`. Every loop adds a fresh task so the
/// pending set never empties on its own.
pub fn synthetic_script(loops: u32, complete_at: Option<u32>) -> Script {
    let mut script = Script::new().with(
        PromptKind::InitialPlan,
        "initial",
        json!([
            {"description": "Chart the history of the synthetic field", "priority": 9},
            {"description": "List the main open problems today", "priority": 8},
            {"description": "Identify leading groups and venues", "priority": 7}
        ])
        .to_string(),
    );
    for k in 0..loops {
        let key = format!("loop-{k}");
        let i = k as usize % QUERIES.len();
        script.insert(
            PromptKind::QueryPlan,
            key.clone(),
            json!({"query_complexity": "simple", "main_query": QUERIES[i], "tasks": []}).to_string(),
        );
        script.insert(PromptKind::Synthesis, key.clone(), format!("Summary after loop {k}."));
        let complete = complete_at == Some(k);
        let adds: Vec<Value> = if complete { vec![] } else { vec![json!({"description": GAPS[i]})] };
        script.insert(
            PromptKind::Reflection,
            key,
            json!({
                "research_complete": complete,
                "section_gaps": {},
                "priority_section": "",
                "knowledge_gap": "",
                "evaluation_notes": "",
                "todo_updates": {"mark_completed": [], "cancel_tasks": [], "add_tasks": adds},
                "clear_message_indices": []
            })
            .to_string(),
        );
    }
    script.insert(PromptKind::Report, "final", "# Synthetic\n\nNothing to cite.");
    script
}

pub fn engine_with(script: Script, fetcher: FixtureFetcher) -> Engine {
    let llm = LlmGateway::new(Arc::new(ScriptedProvider::new(script)), RetryPolicy::test_profile());
    let clock = Arc::new(SteppingClock::new(fixture_epoch(), 1_000));
    Engine::new(llm, ProviderRegistry::with_builtin(Arc::new(fetcher)), clock).with_config(EngineConfig::default())
}

pub fn synthetic_engine(mode: Mode, complete_at: Option<u32>) -> Engine {
    engine_with(
        synthetic_script(mode.max_loops(), complete_at),
        FixtureFetcher::new(FixtureCorpus::new()).lenient(),
    )
}

// ---- trajectories ----

pub fn event(session: &str, loop_index: u32, kind: EventKind, payload: Value) -> TrajectoryEvent {
    TrajectoryEvent {
        session_id: session.into(),
        loop_index,
        kind,
        at: at(loop_index as i64),
        payload,
    }
}

// ---- event-stream frames ----

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: Option<u64>,
    pub event: String,
    pub data: Value,
}

/// Parse `text/event-stream` text into frames; comment lines are skipped.
pub fn parse_frames(body: &str) -> Vec<Frame> {
    body.split("\n\n")
        .filter(|block| !block.trim().is_empty())
        .filter_map(|block| {
            let mut id = None;
            let mut event = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            Some(Frame {
                id,
                event: event?,
                data: serde_json::from_str(&data).unwrap_or(Value::Null),
            })
        })
        .collect()
}

/// Loop-order invariant over stream event names: per loop, plan_updated
/// then search_started, search_completed, synthesis, reflection, with
/// steering acks allowed anywhere before report_ready, and report_ready
/// last.
pub fn check_loop_order(names: &[&str]) -> Result<(), String> {
    let stages = ["search_started", "search_completed", "synthesis", "reflection"];
    let mut expect = 0usize;
    let mut seen_report = false;
    for (i, name) in names.iter().enumerate() {
        if seen_report {
            return Err(format!("{name} at {i} after report_ready"));
        }
        match *name {
            "plan_updated" | "steering_ack" | "heartbeat" => {}
            "report_ready" => {
                if expect != 0 {
                    return Err(format!("report_ready at {i} mid-loop"));
                }
                seen_report = true;
            }
            stage => {
                if stages.get(expect) != Some(&stage) {
                    return Err(format!("{stage} at {i}, expected {}", stages[expect]));
                }
                expect = (expect + 1) % stages.len();
            }
        }
    }
    if !seen_report {
        return Err("no report_ready".into());
    }
    Ok(())
}
