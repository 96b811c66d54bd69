//! Result consolidation, the source registry, and the running summary.
//!
//! Each loop's results are consolidated across providers (canonical URL,
//! then fuzzy title), registered under stable `[S<n>]` keys, and merged into
//! the running summary by the model. Keys the model invents are stripped.

use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, LlmError, LlmGateway, PromptKind};
use crate::prompts;
use crate::retrieval::SearchResult;
use crate::text;

/// Maximum running-summary length, in characters.
pub const SUMMARY_CAP: usize = 20_000;

/// Per-result excerpt length in the synthesis prompt.
const EXCERPT_CHARS: usize = 1_500;

/// Titles shorter than this many words only merge by URL.
const MIN_FUZZY_TITLE_WORDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub key: String,
    pub canonical_url: String,
    pub title: String,
    pub provider: String,
    pub first_seen_loop: u32,
    pub used_in_report: bool,
}

/// Deduplicated URL-to-metadata map backing citations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SourceRegistry {
    records: IndexMap<String, SourceRecord>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &SourceRecord> {
        self.records.values()
    }

    pub fn get(&self, canonical_url: &str) -> Option<&SourceRecord> {
        self.records.get(canonical_url)
    }

    pub fn by_key(&self, key: &str) -> Option<&SourceRecord> {
        let n: usize = key.strip_prefix('S')?.parse().ok()?;
        self.records.get_index(n.checked_sub(1)?).map(|(_, r)| r)
    }

    /// Citation key of `url`, if registered.
    pub fn key_for(&self, url: &str) -> Option<&str> {
        let canonical = text::canonicalize_url(url)?;
        self.records.get(&canonical).map(|r| r.key.as_str())
    }

    /// Register consolidated results; returns the keys that are new.
    pub fn register(&mut self, results: &[SearchResult], loop_index: u32) -> Vec<String> {
        let mut added = Vec::new();
        for r in results {
            let canonical = canonical_or_raw(&r.url);
            if self.records.contains_key(&canonical) {
                continue;
            }
            let key = format!("S{}", self.records.len() + 1);
            self.records.insert(
                canonical.clone(),
                SourceRecord {
                    key: key.clone(),
                    canonical_url: canonical,
                    title: r.title.clone(),
                    provider: r.provider.clone(),
                    first_seen_loop: loop_index,
                    used_in_report: false,
                },
            );
            added.push(key);
        }
        added
    }

    /// Flag the records cited by `keys`. Fails without mutating anything if
    /// a key has no record.
    pub fn mark_used(&mut self, keys: &[String]) -> Result<SourceUsage, DanglingCitation> {
        let dangling: Vec<String> = keys.iter().filter(|k| self.by_key(k).is_none()).cloned().collect();
        if !dangling.is_empty() {
            return Err(DanglingCitation(dangling));
        }
        for record in self.records.values_mut() {
            if keys.contains(&record.key) {
                record.used_in_report = true;
            }
        }
        let (used, unused): (Vec<_>, Vec<_>) = self.records.values().partition(|r| r.used_in_report);
        Ok(SourceUsage {
            used: used.into_iter().map(|r| r.key.clone()).collect(),
            unused: unused.into_iter().map(|r| r.canonical_url.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceUsage {
    pub used: Vec<String>,
    /// Canonical URLs of sources the report never cites.
    pub unused: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("citation keys without a source: {0:?}")]
pub struct DanglingCitation(pub Vec<String>);

fn canonical_or_raw(url: &str) -> String {
    text::canonicalize_url(url).unwrap_or_else(|| url.to_string())
}

fn fuzzy_title_match(a: &str, b: &str) -> bool {
    text::word_count(a) >= MIN_FUZZY_TITLE_WORDS
        && text::word_count(b) >= MIN_FUZZY_TITLE_WORDS
        && text::is_fuzzy_duplicate(a, b)
}

/// Collapse cross-provider duplicates. A result joins the first group that
/// already holds its canonical URL, else the first group whose anchor title
/// it fuzzy-matches. Each group yields its best member (raw content first,
/// then score) under the canonical URL and the anchor's title.
pub fn consolidate<'a>(results: impl IntoIterator<Item = &'a SearchResult>) -> Vec<SearchResult> {
    struct Group {
        anchor_title: String,
        urls: Vec<String>,
        best: SearchResult,
    }
    let mut groups: Vec<Group> = Vec::new();
    for r in results {
        let canonical = canonical_or_raw(&r.url);
        let title = text::tidy(&r.title);
        let slot = groups
            .iter()
            .position(|g| g.urls.contains(&canonical))
            .or_else(|| groups.iter().position(|g| fuzzy_title_match(&g.anchor_title, &title)));
        match slot {
            Some(i) => {
                let g = &mut groups[i];
                if !g.urls.contains(&canonical) {
                    g.urls.push(canonical);
                }
                let rank = |x: &SearchResult| (x.raw_content.is_some(), x.score);
                if rank(r) > rank(&g.best) {
                    g.best = r.clone();
                }
            }
            None => groups.push(Group {
                anchor_title: title,
                urls: vec![canonical],
                best: r.clone(),
            }),
        }
    }
    groups
        .into_iter()
        .map(|g| SearchResult {
            url: canonical_or_raw(&g.best.url),
            title: g.anchor_title,
            ..g.best
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningSummary {
    pub text: String,
    pub loop_index: u32,
    pub cited_urls: Vec<String>,
    /// Code fragments carried through to the report. Nothing in the
    /// pipeline fills this yet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub code_snippets: Vec<String>,
}

fn citation_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\[S(\d+)\]").unwrap())
}

/// Distinct citation keys in order of first appearance, without brackets.
pub fn citation_keys(text: &str) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for caps in citation_pattern().captures_iter(text) {
        let key = format!("S{}", &caps[1]);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys
}

/// Remove keys the registry cannot resolve; returns the cleaned text and
/// the stripped keys.
pub fn strip_unresolved(text: &str, registry: &SourceRegistry) -> (String, Vec<String>) {
    let mut stripped = Vec::new();
    let cleaned = citation_pattern().replace_all(text, |caps: &regex::Captures<'_>| {
        let key = format!("S{}", &caps[1]);
        if registry.by_key(&key).is_some() {
            caps[0].to_string()
        } else {
            if !stripped.contains(&key) {
                stripped.push(key);
            }
            String::new()
        }
    });
    // removing a key can leave a dangling space before punctuation
    let tidied = cleaned.replace(" .", ".").replace(" ,", ",");
    (tidied, stripped)
}

pub fn render_results(results: &[SearchResult], registry: &SourceRegistry) -> String {
    if results.is_empty() {
        return "(no new results this loop)".into();
    }
    results
        .iter()
        .map(|r| {
            let key = registry.key_for(&r.url).unwrap_or("?");
            let body = r.raw_content.as_deref().unwrap_or(&r.snippet);
            let excerpt = text::truncate_at_word_boundary(&text::tidy(body), EXCERPT_CHARS);
            format!("[{key}] {} ({})\n{excerpt}", r.title, r.url)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_synthesis_prompt(
    topic: &str,
    previous: &str,
    results_block: &str,
    knowledge_gaps: &str,
    uploaded_knowledge: Option<&str>,
) -> String {
    let uploaded = match uploaded_knowledge.filter(|k| !k.trim().is_empty()) {
        Some(k) => format!("<UPLOADED_KNOWLEDGE>\n{k}\n</UPLOADED_KNOWLEDGE>\n\n"),
        None => String::new(),
    };
    prompts::render(
        prompts::SYNTHESIS,
        &[
            ("research_topic", topic),
            ("previous_summary", if previous.is_empty() { "(none yet)" } else { previous }),
            ("new_results", results_block),
            ("knowledge_gaps", if knowledge_gaps.is_empty() { "(none identified)" } else { knowledge_gaps }),
            ("uploaded_knowledge_block", &uploaded),
        ],
    )
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("synthesis failed: {0}")]
    Llm(#[from] LlmError),
    #[error("model returned an empty summary")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub summary: RunningSummary,
    pub stripped_keys: Vec<String>,
    pub truncated: bool,
}

/// Inputs of one synthesis pass.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisInput<'a> {
    pub topic: &'a str,
    pub previous: &'a RunningSummary,
    pub results: &'a [SearchResult],
    pub knowledge_gaps: &'a str,
    pub uploaded_knowledge: Option<&'a str>,
}

/// Merge this loop's results into the running summary.
pub async fn synthesize(
    input: SynthesisInput<'_>,
    registry: &SourceRegistry,
    llm: &LlmGateway,
    request_key: &str,
) -> Result<SynthesisOutcome, SynthesisError> {
    let prompt = build_synthesis_prompt(
        input.topic,
        &input.previous.text,
        &render_results(input.results, registry),
        input.knowledge_gaps,
        input.uploaded_knowledge,
    );
    let reply = llm
        .complete(&CompletionRequest::new(PromptKind::Synthesis, request_key, &prompt))
        .await?;
    let reply = reply.trim();
    if reply.is_empty() {
        return Err(SynthesisError::Empty);
    }
    let (cleaned, stripped_keys) = strip_unresolved(reply, registry);
    for key in &stripped_keys {
        tracing::warn!(%key, "summary cited an unknown source; key stripped");
    }
    let truncated = cleaned.chars().count() > SUMMARY_CAP;
    let text = text::truncate_at_word_boundary(&cleaned, SUMMARY_CAP);
    let cited_urls = citation_keys(&text)
        .iter()
        .filter_map(|k| registry.by_key(k))
        .map(|r| r.canonical_url.clone())
        .collect();
    Ok(SynthesisOutcome {
        summary: RunningSummary {
            text,
            loop_index: input.previous.loop_index + 1,
            cited_urls,
            code_snippets: input.previous.code_snippets.clone(),
        },
        stripped_keys,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(url: &str, title: &str, provider: &str, raw: Option<&str>, score: f64) -> SearchResult {
        SearchResult {
            url: url.into(),
            title: title.into(),
            snippet: String::new(),
            raw_content: raw.map(str::to_string),
            score,
            provider: provider.into(),
            repository_root: None,
        }
    }

    #[test]
    fn tracking_variants_collapse() {
        let input = vec![
            result("https://A.com/x?utm_source=y", "X page", "general_search", None, 0.5),
            result("https://a.com/x/", "X page again", "general_search", None, 0.4),
        ];
        let out = consolidate(&input);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].url, "https://a.com/x");
        let mut reg = SourceRegistry::new();
        assert_eq!(reg.register(&out, 0), vec!["S1"]);
        assert_eq!(reg.records().next().unwrap().canonical_url, "https://a.com/x");
    }

    #[test]
    fn raw_content_wins() {
        let input = vec![
            result("https://p.org/paper", "A paper", "general_search", None, 0.9),
            result("https://p.org/paper", "A paper", "academic_search", Some("full text"), 0.3),
        ];
        let out = consolidate(&input);
        assert_eq!(out[0].provider, "academic_search");
    }

    #[test]
    fn idempotent_on_title_chains() {
        let input = vec![
            result("https://a.org/1", "Generative models in chemistry", "g", None, 0.5),
            result("https://b.org/2", "Generative models in chemistry.", "g", Some("x"), 0.6),
            result("https://c.org/3", "Short", "g", None, 0.7),
        ];
        let once = consolidate(&input);
        assert_eq!(once.len(), 2);
        assert_eq!(consolidate(&once), once);
    }

    #[test]
    fn registry_keys_and_usage() {
        let mut reg = SourceRegistry::new();
        let rs: Vec<SearchResult> =
            (1..=5).map(|i| result(&format!("https://s.org/{i}"), "t", "g", None, 0.5)).collect();
        reg.register(&rs, 0);
        reg.register(&rs[..2], 1);
        assert_eq!(reg.len(), 5);
        assert_eq!(reg.by_key("S3").unwrap().canonical_url, "https://s.org/3");
        assert!(reg.by_key("S0").is_none());
        let usage = reg.mark_used(&["S1".into(), "S3".into(), "S5".into()]).unwrap();
        assert_eq!(usage.unused, vec!["https://s.org/2", "https://s.org/4"]);
        assert_eq!(reg.mark_used(&["S9".into()]), Err(DanglingCitation(vec!["S9".into()])));
    }

    #[test]
    fn unknown_keys_are_stripped() {
        let mut reg = SourceRegistry::new();
        reg.register(&[result("https://s.org/1", "t", "g", None, 0.5)], 0);
        let (text, stripped) = strip_unresolved("Claim [S1]. Other [S99].", &reg);
        assert_eq!(text, "Claim [S1]. Other.");
        assert_eq!(stripped, vec!["S99"]);
        assert_eq!(citation_keys("[S2] [S1] [S2]"), vec!["S2", "S1"]);
    }

    #[test]
    fn uploaded_section_omitted_when_absent() {
        let p = build_synthesis_prompt("t", "", "r", "", None);
        assert!(!p.contains("UPLOADED_KNOWLEDGE"));
        assert!(build_synthesis_prompt("t", "", "r", "", Some("memo")).contains("<UPLOADED_KNOWLEDGE>\nmemo"));
    }
}
