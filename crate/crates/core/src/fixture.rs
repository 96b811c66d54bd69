//! Offline profiles: a scripted model, a canned search corpus, and a
//! stepping clock, wired into an [`Engine`] that never touches the network.
//!
//! A fixture directory holds:
//! - `script.json`: canned model replies, see [`Script`]
//! - `corpus.json` and/or `corpus/`: canned search results
//! - `session.json` (optional): topic, mode, and scheduled steering
//!
//! The golden profile ships inside the crate.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{fixture_epoch, SteppingClock};
use crate::engine::report::ResearchReport;
use crate::engine::{Engine, EngineConfig, Mode, ScheduledSteering, SessionHandle};
use crate::llm::{LlmGateway, RetryPolicy, Script, ScriptedProvider};
use crate::retrieval::{FixtureCorpus, FixtureFetcher, ProviderRegistry};

pub const GOLDEN_SCRIPT: &str = include_str!("../fixtures/golden/script.json");
pub const GOLDEN_CORPUS: &str = include_str!("../fixtures/golden/corpus.json");
pub const GOLDEN_SESSION: &str = include_str!("../fixtures/golden/session.json");
/// Recorded export of the golden session.
pub const GOLDEN_TRAJECTORY: &str = include_str!("../fixtures/golden/trajectory.jsonl");

/// Fixture clocks advance one second per reading.
pub const FIXTURE_CLOCK_STEP_MILLIS: i64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub scheduled_steering: Vec<ScheduledSteering>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct FixtureProfile {
    pub script: Script,
    pub corpus: FixtureCorpus,
    pub session: SessionSpec,
}

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl FixtureProfile {
    pub fn golden() -> Self {
        Self {
            script: Script::from_json(GOLDEN_SCRIPT).expect("golden script parses"),
            corpus: FixtureCorpus::from_bundle_json(GOLDEN_CORPUS).expect("golden corpus parses"),
            session: serde_json::from_str(GOLDEN_SESSION).expect("golden session parses"),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        let parse_err = |path: PathBuf, message: String| FixtureError::Parse { path, message };

        let script_path = dir.join("script.json");
        let script = Script::from_json(&read(&script_path)?).map_err(|e| parse_err(script_path, e.to_string()))?;

        let mut corpus = FixtureCorpus::new();
        let bundle = dir.join("corpus.json");
        if bundle.is_file() {
            corpus = FixtureCorpus::from_bundle_json(&read(&bundle)?).map_err(|m| parse_err(bundle, m))?;
        }
        let corpus_dir = dir.join("corpus");
        if corpus_dir.is_dir() {
            corpus.merge(FixtureCorpus::load_dir(&corpus_dir).map_err(|m| parse_err(corpus_dir, m))?);
        }

        let session_path = dir.join("session.json");
        let session = if session_path.is_file() {
            serde_json::from_str(&read(&session_path)?).map_err(|e| parse_err(session_path, e.to_string()))?
        } else {
            SessionSpec {
                topic: None,
                mode: None,
                scheduled_steering: Vec::new(),
            }
        };
        Ok(Self { script, corpus, session })
    }

    pub fn topic(&self) -> Option<&str> {
        self.session.topic.as_deref()
    }

    pub fn mode(&self) -> Mode {
        self.session.mode.unwrap_or(Mode::Standard)
    }

    pub fn fetcher(&self) -> FixtureFetcher {
        FixtureFetcher::new(self.corpus.clone())
    }

    /// Engine over this profile with a fresh clock starting at the fixture
    /// epoch.
    pub fn engine(&self) -> Engine {
        self.engine_with_fetcher(self.fetcher())
    }

    pub fn engine_with_fetcher(&self, fetcher: FixtureFetcher) -> Engine {
        let llm = LlmGateway::new(
            Arc::new(ScriptedProvider::new(self.script.clone())),
            RetryPolicy::test_profile(),
        );
        let clock = Arc::new(SteppingClock::new(fixture_epoch(), FIXTURE_CLOCK_STEP_MILLIS));
        Engine::new(llm, ProviderRegistry::with_builtin(Arc::new(fetcher)), clock).with_config(EngineConfig {
            scheduled_steering: self.session.scheduled_steering.clone(),
            ..EngineConfig::default()
        })
    }
}

/// Run the golden session to completion.
pub async fn run_golden() -> (SessionHandle, ResearchReport) {
    let profile = FixtureProfile::golden();
    let engine = profile.engine();
    let session = engine
        .create_session(profile.topic().expect("golden topic"), profile.mode(), None)
        .expect("golden topic is non-empty");
    let report = engine.run(&session).await;
    (session, report)
}
