//! Offline fetch backend over a corpus of canned results.
//!
//! A corpus maps `(provider, slug)` to a result list, where the slug is
//! derived from the query text by [`query_slug`]. On disk each entry is a
//! JSON array of result objects at `<dir>/<provider>/<slug>.json`; a file
//! at `<dir>/<slug>.json` answers that query for every provider.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;

use super::{Fetcher, RawResult};

const MAX_SLUG_LEN: usize = 96;

/// Lowercase alphanumeric runs of `query` joined by `-`, at most 96 chars.
pub fn query_slug(query: &str) -> String {
    let joined = query
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    let cut: String = joined.chars().take(MAX_SLUG_LEN).collect();
    cut.trim_end_matches('-').to_string()
}

#[derive(Debug, Clone, Default)]
pub struct FixtureCorpus {
    by_provider: HashMap<(String, String), Vec<RawResult>>,
    shared: HashMap<String, Vec<RawResult>>,
}

impl FixtureCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add results for `query` (or a precomputed slug) under `provider`, or
    /// for every provider when `provider` is `None`.
    pub fn insert(&mut self, provider: Option<&str>, query: &str, results: Vec<RawResult>) {
        let slug = query_slug(query);
        match provider {
            Some(p) => {
                self.by_provider.insert((p.to_string(), slug), results);
            }
            None => {
                self.shared.insert(slug, results);
            }
        }
    }

    pub fn insert_json(&mut self, provider: Option<&str>, query: &str, json: &str) -> Result<(), String> {
        let results: Vec<RawResult> =
            serde_json::from_str(json).map_err(|e| format!("fixture {query:?}: {e}"))?;
        self.insert(provider, query, results);
        Ok(())
    }

    /// Parse a single-file corpus: `{"<provider>": {"<query>": [results]}}`.
    /// The provider key `*` answers for every provider.
    pub fn from_bundle_json(text: &str) -> Result<Self, String> {
        let bundle: HashMap<String, HashMap<String, Vec<RawResult>>> =
            serde_json::from_str(text).map_err(|e| format!("corpus bundle: {e}"))?;
        let mut corpus = Self::new();
        corpus.extend_bundle(bundle);
        Ok(corpus)
    }

    fn extend_bundle(&mut self, bundle: HashMap<String, HashMap<String, Vec<RawResult>>>) {
        for (provider, entries) in bundle {
            let provider = (provider != "*").then_some(provider);
            for (query, results) in entries {
                self.insert(provider.as_deref(), &query, results);
            }
        }
    }

    /// Absorb every entry of `other`, which wins on conflicts.
    pub fn merge(&mut self, other: FixtureCorpus) {
        self.by_provider.extend(other.by_provider);
        self.shared.extend(other.shared);
    }

    /// Load every `*.json` file under `dir`, one directory level deep.
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut corpus = Self::new();
        let read = |p: &Path| std::fs::read_dir(p).map_err(|e| format!("{}: {e}", p.display()));
        for entry in read(dir)? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                let provider = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                for inner in read(&path)? {
                    let file = inner.map_err(|e| e.to_string())?.path();
                    corpus.load_file(Some(&provider), &file)?;
                }
            } else {
                corpus.load_file(None, &path)?;
            }
        }
        Ok(corpus)
    }

    fn load_file(&mut self, provider: Option<&str>, path: &Path) -> Result<(), String> {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            return Ok(());
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.insert_json(provider, stem, &text)
    }

    pub fn lookup(&self, provider: &str, query: &str) -> Option<&[RawResult]> {
        let slug = query_slug(query);
        self.by_provider
            .get(&(provider.to_string(), slug.clone()))
            .or_else(|| self.shared.get(&slug))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_provider.len() + self.shared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves a [`FixtureCorpus`]. Unknown queries fail loudly unless the
/// fetcher was built with [`FixtureFetcher::lenient`].
#[derive(Debug, Clone)]
pub struct FixtureFetcher {
    corpus: Arc<FixtureCorpus>,
    delay: Option<Duration>,
    lenient: bool,
    calls: Arc<AtomicUsize>,
}

impl FixtureFetcher {
    pub fn new(corpus: FixtureCorpus) -> Self {
        Self {
            corpus: Arc::new(corpus),
            delay: None,
            lenient: false,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Answer unknown queries with an empty list instead of an error.
    pub fn lenient(mut self) -> Self {
        self.lenient = true;
        self
    }

    /// Sleep before every response, to simulate a slow backend.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Fetcher for FixtureFetcher {
    async fn fetch(&self, provider: &str, query: &str) -> Result<Vec<RawResult>, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        match self.corpus.lookup(provider, query) {
            Some(results) => Ok(results.to_vec()),
            None if self.lenient => Ok(Vec::new()),
            None => Err(format!("no fixture for {provider}/{}", query_slug(query))),
        }
    }
}
