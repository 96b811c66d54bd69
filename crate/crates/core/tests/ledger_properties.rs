mod common;

use common::{at, is_duplicate, levenshtein, normalize, similarity};
use deepsteer::ledger::{LedgerError, NewTask, TaskId, TaskSource, TaskStatus, TodoLedger};
use deepsteer::text;
use proptest::prelude::*;

#[derive(Debug, PartialEq, Eq, Clone)]
struct ParsedTask {
    status: TaskStatus,
    priority: u8,
    description: String,
    source: String,
}

#[derive(Debug)]
struct ParsedTodo {
    session: String,
    version: u64,
    tasks: Vec<ParsedTask>,
}

/// Reads `todo.md` back: header line, four status sections, one task per
/// line of the form `- [m] (P<n>) <description> — <source> @<timestamp>`.
fn parse_todo(md: &str) -> ParsedTodo {
    let header = md.lines().find(|l| l.starts_with("session: ")).expect("header line");
    let (session, version) = header
        .strip_prefix("session: ")
        .and_then(|rest| rest.split_once(" | version: "))
        .expect("header format");
    let mut section = None;
    let mut tasks = Vec::new();
    for line in md.lines() {
        if let Some(title) = line.strip_prefix("## ") {
            section = Some(match title {
                "In Progress" => TaskStatus::InProgress,
                "Pending" => TaskStatus::Pending,
                "Completed" => TaskStatus::Completed,
                "Canceled" => TaskStatus::Canceled,
                other => panic!("unknown section {other}"),
            });
            continue;
        }
        let Some(rest) = line.strip_prefix("- [") else { continue };
        let status = section.expect("task before any section");
        let (mark, rest) = rest.split_at(1);
        let want_mark = match status {
            TaskStatus::Completed => "x",
            TaskStatus::Canceled => "-",
            _ => " ",
        };
        assert_eq!(mark, want_mark, "mark in {line:?}");
        let rest = rest.strip_prefix("] (P").expect("priority marker");
        let (priority, rest) = rest.split_once(") ").expect("priority close");
        let (description, tail) = rest.rsplit_once(" — ").expect("source separator");
        let (source, stamp) = tail.split_once(" @").expect("timestamp");
        assert!(stamp.ends_with('Z') && stamp.len() == 20, "timestamp {stamp:?}");
        tasks.push(ParsedTask {
            status,
            priority: priority.parse().expect("numeric priority"),
            description: description.to_string(),
            source: source.to_string(),
        });
    }
    ParsedTodo {
        session: session.to_string(),
        version: version.parse().expect("numeric version"),
        tasks,
    }
}

fn legal(from: TaskStatus, to: TaskStatus) -> bool {
    use TaskStatus::*;
    [(Pending, InProgress), (Pending, Canceled), (InProgress, Completed), (InProgress, Canceled)].contains(&(from, to))
}

fn source() -> impl Strategy<Value = TaskSource> {
    prop_oneof![
        Just(TaskSource::InitialQuery),
        Just(TaskSource::KnowledgeGap),
        Just(TaskSource::Steering)
    ]
}

fn status() -> impl Strategy<Value = TaskStatus> {
    proptest::sample::select(TaskStatus::ALL.to_vec())
}

const NOUNS: [&str; 12] = [
    "glaciers", "vaccines", "satellites", "enzymes", "railways", "wetlands", "semiconductors", "coral", "pollinators",
    "fusion", "aquifers", "telescopes",
];

const DISTINCT: [&str; 15] = [
    "orbital debris tracking",
    "malaria vaccine trials",
    "desert solar farms",
    "children's literacy programs",
    "wolf reintroduction outcomes",
    "river delta subsidence",
    "quantum sensing prototypes",
    "fermented food microbiomes",
    "bridge fatigue monitoring",
    "sign language corpora",
    "hurricane intensification forecasts",
    "ancient dna sequencing",
    "carbon border tariffs",
    "honeybee colony collapse",
    "deep learning compilers",
];

fn description() -> impl Strategy<Value = String> {
    (
        proptest::sample::select(&NOUNS[..]),
        proptest::sample::select(&NOUNS[..]),
        0u32..1000,
    )
        .prop_map(|(a, b, n)| format!("Study {a} and {b} case {n}"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalization_matches_oracle(s in "[ A-Za-z0-9,.!?'-]{0,40}") {
        prop_assert_eq!(text::normalize(&s), normalize(&s));
    }

    #[test]
    fn similarity_matches_levenshtein_oracle(a in "[a-e ]{0,20}", b in "[a-e ]{0,20}") {
        let got = text::similarity(&a, &b);
        prop_assert!((got - similarity(&a, &b)).abs() < 1e-12, "{} vs {}", got, similarity(&a, &b));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
    }

    #[test]
    fn adding_the_same_description_twice_is_idempotent(d in description(), s in source()) {
        let mut ledger = TodoLedger::new("s");
        ledger.add_task(NewTask::new(d.clone(), s), at(0)).unwrap();
        let n = ledger.len();
        let again = ledger.add_task(NewTask::new(d, s), at(1)).unwrap();
        prop_assert!(again.merged);
        prop_assert_eq!(ledger.len(), n);
    }

    #[test]
    fn merged_priority_never_decreases(d in description(), first in 5u8..=10, later in proptest::collection::vec(5u8..=10, 1..6)) {
        let mut ledger = TodoLedger::new("s");
        let id = ledger.add_task(NewTask::new(d.clone(), TaskSource::KnowledgeGap).priority(first), at(0)).unwrap().task_id;
        let mut expected = first;
        for (i, p) in later.into_iter().enumerate() {
            let out = ledger.add_task(NewTask::new(format!("{d}."), TaskSource::KnowledgeGap).priority(p), at(i as i64 + 1)).unwrap();
            prop_assert_eq!(&out.task_id, &id);
            expected = expected.max(p);
            prop_assert_eq!(ledger.get(&id).unwrap().priority.get(), expected);
        }
    }

    #[test]
    fn lifecycle_fuzzing_never_takes_an_illegal_edge(moves in proptest::collection::vec((0usize..4, status()), 1..80)) {
        let mut ledger = TodoLedger::new("s");
        for n in 0..4 {
            ledger.add_task(NewTask::new(format!("independent topic {}", NOUNS[n * 3]), TaskSource::InitialQuery), at(0)).unwrap();
        }
        for (i, (which, next)) in moves.into_iter().enumerate() {
            let id = TaskId::new(format!("task-{}", which + 1));
            let from = ledger.get(&id).unwrap().status;
            match ledger.transition(&id, next, at(i as i64)) {
                Ok(()) => {
                    prop_assert!(legal(from, next));
                    prop_assert_eq!(ledger.get(&id).unwrap().status, next);
                }
                Err(LedgerError::IllegalTransition { from: f, to, .. }) => {
                    prop_assert!(!legal(from, next));
                    prop_assert_eq!((f, to), (from, next));
                    prop_assert_eq!(ledger.get(&id).unwrap().status, from);
                }
                Err(other) => prop_assert!(false, "unexpected {other}"),
            }
        }
    }

    #[test]
    fn markdown_round_trips_through_the_parser(
        tasks in proptest::collection::vec((description(), source(), proptest::option::of(5u8..=10), 0u8..4), 1..12),
    ) {
        let mut ledger = TodoLedger::new("rt-session");
        for (i, (d, s, p, steps)) in tasks.iter().enumerate() {
            let mut new = NewTask::new(d.clone(), *s);
            if let Some(p) = p {
                new = new.priority(*p);
            }
            let id = ledger.add_task(new, at(i as i64)).unwrap().task_id;
            let path: &[TaskStatus] = match steps {
                0 => &[],
                1 => &[TaskStatus::InProgress],
                2 => &[TaskStatus::InProgress, TaskStatus::Completed],
                _ => &[TaskStatus::Canceled],
            };
            for next in path {
                // a merged duplicate may already be past this step
                let _ = ledger.transition(&id, *next, at(i as i64));
            }
        }
        let md = ledger.render_markdown();
        prop_assert_eq!(&md, &ledger.render_markdown());
        let parsed = parse_todo(&md);
        prop_assert_eq!(parsed.session, "rt-session");
        prop_assert_eq!(parsed.version, ledger.version());
        prop_assert_eq!(parsed.tasks.len(), ledger.len());

        // a canceled task and its re-added twin may share a description
        let mut want: Vec<(String, TaskStatus, u8, String)> = ledger
            .tasks()
            .map(|t| (t.description.clone(), t.status, t.priority.get(), t.source.to_string()))
            .collect();
        let mut got: Vec<(String, TaskStatus, u8, String)> = parsed
            .tasks
            .iter()
            .map(|t| (t.description.clone(), t.status, t.priority, t.source.clone()))
            .collect();
        want.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        got.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        prop_assert_eq!(got, want);

        // pending section is listed in scheduling order
        let pending: Vec<String> = parsed.tasks.iter().filter(|t| t.status == TaskStatus::Pending).map(|t| t.description.clone()).collect();
        let batch: Vec<String> = ledger.next_batch(usize::MAX).iter().map(|t| t.description.clone()).collect();
        prop_assert_eq!(pending, batch);
    }

    #[test]
    fn next_batch_matches_sort_oracle(
        tasks in proptest::collection::vec((source(), 5u8..=10, 0i64..5), 0..=15),
        k in 1usize..8,
    ) {
        let mut ledger = TodoLedger::new("s");
        let mut rows = Vec::new();
        for (i, (s, p, t)) in tasks.into_iter().enumerate() {
            let out = ledger.add_task(NewTask::new(DISTINCT[i], s).priority(p), at(t)).unwrap();
            prop_assert!(!out.merged);
            {
                let rank = match s {
                    TaskSource::Steering => 0,
                    TaskSource::InitialQuery => 1,
                    TaskSource::KnowledgeGap => 2,
                };
                rows.push((std::cmp::Reverse(p), rank, t, i, out.task_id));
            }
        }
        rows.sort();
        let want: Vec<TaskId> = rows.into_iter().take(k).map(|r| r.4).collect();
        let got: Vec<TaskId> = ledger.next_batch(k).iter().map(|t| t.id.clone()).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn trailing_period_and_article_variant_merges() {
    let a = "Survey major applications of generative AI in scientific discovery";
    let b = "survey the major applications of generative AI in scientific discovery.";
    let sim = similarity(&normalize(a), &normalize(b));
    assert!(sim >= 0.85, "oracle similarity {sim}");
    let mut ledger = TodoLedger::new("s");
    ledger.add_task(NewTask::new(a, TaskSource::InitialQuery), at(0)).unwrap();
    let out = ledger.add_task(NewTask::new(b, TaskSource::KnowledgeGap), at(1)).unwrap();
    assert!(out.merged);
    assert_eq!(ledger.len(), 1);
    assert_eq!(ledger.tasks().next().unwrap().priority.get(), 9);
}

#[test]
fn source_defaults_and_illegal_reopen() {
    let mut ledger = TodoLedger::new("s");
    let steer = ledger.add_task(NewTask::new("prefer peer reviewed trials", TaskSource::Steering), at(0)).unwrap();
    let gap = ledger.add_task(NewTask::new("collect regional adoption numbers", TaskSource::KnowledgeGap), at(0)).unwrap();
    assert_eq!(ledger.get(&steer.task_id).unwrap().priority.get(), 10);
    let g = ledger.get(&gap.task_id).unwrap();
    assert_eq!((g.priority.get(), g.status), (7, TaskStatus::Pending));

    ledger.transition(&gap.task_id, TaskStatus::InProgress, at(1)).unwrap();
    ledger.transition(&gap.task_id, TaskStatus::Completed, at(2)).unwrap();
    let v = ledger.version();
    assert!(matches!(
        ledger.transition(&gap.task_id, TaskStatus::InProgress, at(3)),
        Err(LedgerError::IllegalTransition { .. })
    ));
    assert!(matches!(
        ledger.transition(&TaskId::new("task-99"), TaskStatus::InProgress, at(3)),
        Err(LedgerError::NotFound(_))
    ));
    assert_eq!(ledger.version(), v);
}

#[test]
fn canceled_tasks_do_not_absorb_duplicates() {
    let mut ledger = TodoLedger::new("s");
    let first = ledger.add_task(NewTask::new("map aquifer depletion", TaskSource::KnowledgeGap), at(0)).unwrap();
    ledger.transition(&first.task_id, TaskStatus::Canceled, at(1)).unwrap();
    let again = ledger.add_task(NewTask::new("map aquifer depletion", TaskSource::KnowledgeGap), at(2)).unwrap();
    assert!(!again.merged);
    assert_eq!(ledger.len(), 2);
    assert!(is_duplicate("map aquifer depletion", "Map aquifer depletion!"));
}
