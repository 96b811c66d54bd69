//! Search providers: per-domain profiles over a pluggable fetch backend,
//! bounded parallel dispatch, and external tool connectors.

mod connector;
mod fixture;
mod live;

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, NaiveDate, Utc};
use futures::stream::{self, StreamExt};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planning::PlannedQuery;
use crate::text;

pub use connector::{ConnectorFetcher, ToolConnector, Transport};
pub use fixture::{query_slug, FixtureCorpus, FixtureFetcher};
pub use live::{LiveFetcher, ACADEMIC_DOMAINS};

pub const GENERAL_SEARCH: &str = "general_search";
pub const ACADEMIC_SEARCH: &str = "academic_search";
pub const GITHUB_SEARCH: &str = "github_search";
pub const LINKEDIN_SEARCH: &str = "linkedin_search";

/// The four built-in search providers.
pub const SEARCH_PROVIDERS: [&str; 4] = [GENERAL_SEARCH, ACADEMIC_SEARCH, GITHUB_SEARCH, LINKEDIN_SEARCH];

/// Score assigned when a backend does not supply one.
pub const DEFAULT_SCORE: f64 = 0.5;

pub const DEFAULT_FAN_OUT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupRule {
    Url,
    FuzzyTitle,
    Repository,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawContentPolicy {
    Keep,
    Drop,
    /// Keep raw content for the top-ranked result only.
    TopOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub name: String,
    pub top_k: usize,
    pub dedup_rule: DedupRule,
    pub domain_allowlist: Option<Vec<String>>,
    pub temporal_weighting: bool,
    pub raw_content: RawContentPolicy,
}

impl ProviderProfile {
    pub fn general() -> Self {
        Self {
            name: GENERAL_SEARCH.into(),
            top_k: 5,
            dedup_rule: DedupRule::Url,
            domain_allowlist: None,
            temporal_weighting: false,
            raw_content: RawContentPolicy::Keep,
        }
    }

    pub fn academic() -> Self {
        Self {
            name: ACADEMIC_SEARCH.into(),
            top_k: 10,
            dedup_rule: DedupRule::FuzzyTitle,
            domain_allowlist: None,
            temporal_weighting: true,
            raw_content: RawContentPolicy::Keep,
        }
    }

    pub fn github() -> Self {
        Self {
            name: GITHUB_SEARCH.into(),
            top_k: 5,
            dedup_rule: DedupRule::Repository,
            domain_allowlist: None,
            temporal_weighting: false,
            raw_content: RawContentPolicy::Keep,
        }
    }

    pub fn linkedin() -> Self {
        Self {
            name: LINKEDIN_SEARCH.into(),
            top_k: 5,
            dedup_rule: DedupRule::Url,
            domain_allowlist: Some(vec!["linkedin.com".into()]),
            temporal_weighting: false,
            raw_content: RawContentPolicy::TopOnly,
        }
    }

    /// Profile used for tool connectors.
    pub fn tool(id: &str) -> Self {
        Self {
            name: id.into(),
            top_k: 10,
            dedup_rule: DedupRule::Url,
            domain_allowlist: None,
            temporal_weighting: false,
            raw_content: RawContentPolicy::Keep,
        }
    }

    pub fn builtin() -> Vec<Self> {
        vec![Self::general(), Self::academic(), Self::github(), Self::linkedin()]
    }
}

/// A result as returned by a backend, before profile rules run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawResult {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub title: String,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_content: Option<String>,
    pub score: f64,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repository_root: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
pub enum ProviderError {
    #[error("{provider}: {message}")]
    Backend { provider: String, message: String },
    #[error("no provider named {0:?}")]
    UnknownProvider(String),
}

impl ProviderError {
    pub fn backend(provider: &str, message: impl fmt::Display) -> Self {
        ProviderError::Backend {
            provider: provider.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool {0:?} is already registered")]
    DuplicateTool(String),
    #[error("provider {0:?} is already registered")]
    DuplicateProvider(String),
    #[error("invalid connector {id:?}: {reason}")]
    InvalidConnector { id: String, reason: String },
}

/// Backend that turns a query into raw results for a named provider.
/// Implementations must tolerate concurrent calls.
#[async_trait]
pub trait Fetcher: Send + Sync {
    /// Whether calls leave the process over the network.
    fn is_live(&self) -> bool {
        false
    }

    async fn fetch(&self, provider: &str, query: &str) -> Result<Vec<RawResult>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Search,
    Tool,
}

#[derive(Clone)]
struct Registered {
    profile: ProviderProfile,
    fetcher: Arc<dyn Fetcher>,
    kind: ProviderKind,
}

#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: IndexMap<String, Registered>,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.providers.keys()).finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the four built-in profiles served by `fetcher`.
    pub fn with_builtin(fetcher: Arc<dyn Fetcher>) -> Self {
        let mut registry = Self::new();
        for profile in ProviderProfile::builtin() {
            registry
                .register_profile(profile, fetcher.clone())
                .expect("builtin names are unique");
        }
        registry
    }

    pub fn register_profile(
        &mut self,
        profile: ProviderProfile,
        fetcher: Arc<dyn Fetcher>,
    ) -> Result<(), RegistryError> {
        if self.providers.contains_key(&profile.name) {
            return Err(RegistryError::DuplicateProvider(profile.name));
        }
        self.providers.insert(
            profile.name.clone(),
            Registered {
                profile,
                fetcher,
                kind: ProviderKind::Search,
            },
        );
        Ok(())
    }

    /// Make an external tool callable as a provider under its id.
    pub fn register_tool(&mut self, connector: ToolConnector) -> Result<(), RegistryError> {
        if self.providers.contains_key(&connector.id) {
            return Err(RegistryError::DuplicateTool(connector.id));
        }
        connector.validate()?;
        let id = connector.id.clone();
        self.providers.insert(
            id.clone(),
            Registered {
                profile: ProviderProfile::tool(&id),
                fetcher: Arc::new(ConnectorFetcher::new(connector)),
                kind: ProviderKind::Tool,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.providers.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    pub fn kind(&self, name: &str) -> Option<ProviderKind> {
        self.providers.get(name).map(|r| r.kind)
    }

    pub fn profile(&self, name: &str) -> Option<&ProviderProfile> {
        self.providers.get(name).map(|r| &r.profile)
    }

    /// True when any registered backend reaches the network.
    pub fn has_live_backend(&self) -> bool {
        self.providers.values().any(|r| r.fetcher.is_live())
    }

    pub async fn search(
        &self,
        provider: &str,
        query: &str,
        now: DateTime<Utc>,
    ) -> Result<Vec<SearchResult>, ProviderError> {
        let reg = self
            .providers
            .get(provider)
            .ok_or_else(|| ProviderError::UnknownProvider(provider.to_string()))?;
        provider_search(&reg.profile, query, reg.fetcher.as_ref(), now).await
    }
}

/// Run one query through a profile: fetch, domain filter, dedup, temporal
/// weighting, rank, and cut to `top_k`.
pub async fn provider_search(
    profile: &ProviderProfile,
    query: &str,
    fetcher: &dyn Fetcher,
    now: DateTime<Utc>,
) -> Result<Vec<SearchResult>, ProviderError> {
    if query.trim().is_empty() {
        return Err(ProviderError::backend(&profile.name, "empty query"));
    }
    let raw = fetcher
        .fetch(&profile.name, query)
        .await
        .map_err(|e| ProviderError::backend(&profile.name, e))?;
    Ok(apply_profile(profile, raw, now))
}

/// The post-fetch half of [`provider_search`].
pub fn apply_profile(profile: &ProviderProfile, raw: Vec<RawResult>, now: DateTime<Utc>) -> Vec<SearchResult> {
    let mut candidates: Vec<(SearchResult, Option<NaiveDate>)> = raw
        .into_iter()
        .filter_map(|r| {
            let Ok(parsed) = url::Url::parse(r.url.trim()) else {
                tracing::warn!(provider = %profile.name, url = %r.url, "dropping result with invalid url");
                return None;
            };
            if let Some(allow) = &profile.domain_allowlist {
                let host = parsed.host_str().unwrap_or("").to_lowercase();
                if !allow.iter().any(|d| host == *d || host.ends_with(&format!(".{d}"))) {
                    return None;
                }
            }
            let repository_root = (profile.dedup_rule == DedupRule::Repository).then(|| repository_root(&parsed));
            Some((
                SearchResult {
                    url: r.url.trim().to_string(),
                    title: text::tidy(&r.title),
                    snippet: r.snippet,
                    raw_content: r.raw_content.filter(|c| !c.trim().is_empty()),
                    score: r.score.unwrap_or(DEFAULT_SCORE).clamp(0.0, 1.0),
                    provider: profile.name.clone(),
                    repository_root,
                },
                r.published_date,
            ))
        })
        .collect();

    candidates = match profile.dedup_rule {
        DedupRule::Url => dedup_by(candidates, |a, b| canonical(&a.url) == canonical(&b.url), better),
        DedupRule::FuzzyTitle => dedup_by(
            candidates,
            |a, b| {
                canonical(&a.url) == canonical(&b.url)
                    || (!a.title.is_empty() && text::is_fuzzy_duplicate(&a.title, &b.title))
            },
            better,
        ),
        DedupRule::Repository => dedup_by(
            candidates,
            |a, b| a.repository_root == b.repository_root,
            |a, b| {
                let depth = |r: &SearchResult| r.url.trim_end_matches('/').len() > r.repository_root.as_deref().unwrap_or("").len();
                (depth(a), a.score) > (depth(b), b.score)
            },
        ),
    };

    if profile.temporal_weighting {
        let today = now.date_naive();
        for (result, published) in &mut candidates {
            if let Some(date) = published {
                let age_years = ((today - *date).num_days().max(0) as f64) / 365.25;
                result.score *= 1.0 / (1.0 + age_years);
            }
        }
    }

    let mut results: Vec<SearchResult> = candidates.into_iter().map(|(r, _)| r).collect();
    results.sort_by(|a, b| b.score.total_cmp(&a.score));
    results.truncate(profile.top_k);
    match profile.raw_content {
        RawContentPolicy::Keep => {}
        RawContentPolicy::Drop => results.iter_mut().for_each(|r| r.raw_content = None),
        RawContentPolicy::TopOnly => results.iter_mut().skip(1).for_each(|r| r.raw_content = None),
    }
    results
}

fn canonical(url: &str) -> String {
    text::canonicalize_url(url).unwrap_or_else(|| url.to_string())
}

/// Preferred representation: one carrying raw content, then higher score.
fn better(a: &SearchResult, b: &SearchResult) -> bool {
    (a.raw_content.is_some(), a.score) > (b.raw_content.is_some(), b.score)
}

/// Collapse duplicates onto the first-seen member of each group, keeping
/// the preferred representation in that slot.
fn dedup_by<D>(
    items: Vec<(SearchResult, D)>,
    same: impl Fn(&SearchResult, &SearchResult) -> bool,
    prefer: impl Fn(&SearchResult, &SearchResult) -> bool,
) -> Vec<(SearchResult, D)> {
    // anchors stay fixed so group membership does not drift
    let mut groups: Vec<(SearchResult, (SearchResult, D))> = Vec::new();
    for item in items {
        match groups.iter_mut().find(|(anchor, _)| same(anchor, &item.0)) {
            Some((_, best)) => {
                if prefer(&item.0, &best.0) {
                    *best = item;
                }
            }
            None => groups.push((item.0.clone(), item)),
        }
    }
    groups.into_iter().map(|(_, best)| best).collect()
}

/// `https://github.com/<owner>/<repo>` for code-host URLs; the URL's own
/// origin and path otherwise.
pub fn repository_root(url: &url::Url) -> String {
    let host = url.host_str().unwrap_or("").to_lowercase();
    let segments: Vec<&str> = url
        .path_segments()
        .map(|s| s.filter(|p| !p.is_empty()).collect())
        .unwrap_or_default();
    if (host == "github.com" || host == "www.github.com") && segments.len() >= 2 {
        format!("https://github.com/{}/{}", segments[0].to_lowercase(), segments[1].to_lowercase())
    } else {
        text::canonicalize_url(url.as_str()).unwrap_or_else(|| url.to_string())
    }
}

/// Outcome of one dispatched query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query: PlannedQuery,
    pub result: Result<Vec<SearchResult>, ProviderError>,
}

/// Execute planned queries concurrently with at most `fan_out_limit` in
/// flight. Outcomes come back in input order; failures stay per-query.
pub async fn dispatch_parallel(
    planned: &[PlannedQuery],
    registry: &ProviderRegistry,
    fan_out_limit: usize,
    now: DateTime<Utc>,
) -> Vec<QueryOutcome> {
    let limit = fan_out_limit.max(1);
    let mut outcomes: Vec<(usize, QueryOutcome)> = stream::iter(planned.iter().cloned().enumerate())
        .map(|(i, q)| async move {
            let result = registry.search(&q.tool, &q.query, now).await;
            (i, QueryOutcome { query: q, result })
        })
        .buffer_unordered(limit)
        .collect()
        .await;
    outcomes.sort_by_key(|(i, _)| *i);
    outcomes.into_iter().map(|(_, o)| o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixture_epoch;

    fn raw(url: &str, title: &str, score: Option<f64>) -> RawResult {
        RawResult {
            url: url.into(),
            title: title.into(),
            snippet: String::new(),
            raw_content: None,
            score,
            published_date: None,
        }
    }

    #[test]
    fn linkedin_allowlist() {
        let out = apply_profile(
            &ProviderProfile::linkedin(),
            vec![
                raw("https://www.linkedin.com/in/someone", "Someone", Some(0.4)),
                raw("https://example.com/someone", "Someone elsewhere", Some(0.9)),
                raw("https://notlinkedin.com/x", "Tricky", Some(0.9)),
            ],
            fixture_epoch(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].url, "https://www.linkedin.com/in/someone");
    }

    #[test]
    fn github_prefers_file_level_url() {
        let out = apply_profile(
            &ProviderProfile::github(),
            vec![
                raw("https://github.com/org/repo", "org/repo", Some(0.9)),
                raw("https://github.com/org/repo/blob/main/src/lib.rs", "lib.rs", Some(0.3)),
                raw("https://github.com/other/thing", "other", Some(0.5)),
            ],
            fixture_epoch(),
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].url, "https://github.com/other/thing");
        assert_eq!(out[1].url, "https://github.com/org/repo/blob/main/src/lib.rs");
        assert_eq!(out[1].repository_root.as_deref(), Some("https://github.com/org/repo"));
    }

    #[test]
    fn academic_collapses_title_variants() {
        let out = apply_profile(
            &ProviderProfile::academic(),
            vec![
                raw("https://arxiv.org/abs/1706.03762", "Attention Is All You Need", Some(0.8)),
                raw("https://papers.nips.cc/paper/7181", "Attention is all you need.", Some(0.6)),
            ],
            fixture_epoch(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].url, "https://arxiv.org/abs/1706.03762");
    }

    #[test]
    fn temporal_weighting_and_defaults() {
        let mut old = raw("https://a.org/old", "Old paper on topic", None);
        old.published_date = Some(NaiveDate::from_ymd_opt(2023, 6, 1).unwrap());
        let mut new = raw("https://a.org/new", "New paper on topic", Some(0.5));
        new.published_date = Some(NaiveDate::from_ymd_opt(2025, 6, 1).unwrap());
        let out = apply_profile(&ProviderProfile::academic(), vec![old, new], fixture_epoch());
        assert_eq!(out[0].url, "https://a.org/new");
        assert!((out[0].score - 0.5).abs() < 1e-12);
        let expected_old = 0.5 / (1.0 + 731.0 / 365.25);
        assert!((out[1].score - expected_old).abs() < 1e-12);
    }

    #[test]
    fn top_k_and_raw_content_policy() {
        let results: Vec<RawResult> = (0..9)
            .map(|i| RawResult {
                raw_content: Some(format!("body {i}")),
                ..raw(&format!("https://www.linkedin.com/in/p{i}"), &format!("P {i}"), Some(i as f64 / 10.0))
            })
            .collect();
        let out = apply_profile(&ProviderProfile::linkedin(), results, fixture_epoch());
        assert_eq!(out.len(), 5);
        assert!(out[0].raw_content.is_some());
        assert!(out[1..].iter().all(|r| r.raw_content.is_none()));
    }

    #[test]
    fn invalid_urls_are_dropped() {
        let out = apply_profile(
            &ProviderProfile::general(),
            vec![raw("not a url", "x", None), raw("https://ok.org", "ok", None)],
            fixture_epoch(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, DEFAULT_SCORE);
    }
}
