//! Live search backends. Compiled in, inert until credentials are set:
//! `TAVILY_API_KEY` serves the general, academic, and professional-network
//! profiles; `GITHUB_TOKEN` serves code search.

use async_trait::async_trait;
use chrono::NaiveDate;
use serde_json::{json, Value};

use super::{Fetcher, RawResult, ACADEMIC_SEARCH, GENERAL_SEARCH, GITHUB_SEARCH, LINKEDIN_SEARCH};

/// Scholarly hosts the academic profile restricts web search to.
pub const ACADEMIC_DOMAINS: &[&str] = &[
    "arxiv.org",
    "semanticscholar.org",
    "pubmed.ncbi.nlm.nih.gov",
    "nature.com",
    "science.org",
    "acm.org",
    "ieee.org",
    "springer.com",
    "sciencedirect.com",
    "openreview.net",
];

const TAVILY_URL: &str = "https://api.tavily.com/search";
const GITHUB_CODE_SEARCH_URL: &str = "https://api.github.com/search/code";

pub struct LiveFetcher {
    client: reqwest::Client,
    tavily_key: Option<String>,
    github_token: Option<String>,
}

impl LiveFetcher {
    pub fn new(tavily_key: Option<String>, github_token: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            tavily_key,
            github_token,
        }
    }

    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self::new(var("TAVILY_API_KEY"), var("GITHUB_TOKEN"))
    }

    pub fn has_credentials(&self) -> bool {
        self.tavily_key.is_some() || self.github_token.is_some()
    }

    async fn tavily(&self, query: &str, domains: &[&str], raw: bool) -> Result<Vec<RawResult>, String> {
        let key = self.tavily_key.as_deref().ok_or("TAVILY_API_KEY is not set")?;
        let mut body = json!({
            "query": query,
            "max_results": 10,
            "search_depth": "advanced",
            "include_raw_content": raw,
        });
        if !domains.is_empty() {
            body["include_domains"] = json!(domains);
        }
        let response = self
            .client
            .post(TAVILY_URL)
            .bearer_auth(key)
            .json(&body)
            .send()
            .await
            .map_err(|e| format!("tavily request failed: {e}"))?;
        if !response.status().is_success() {
            return Err(format!("tavily returned HTTP {}", response.status().as_u16()));
        }
        let value: Value = response.json().await.map_err(|e| format!("tavily body: {e}"))?;
        let results = value["results"].as_array().cloned().unwrap_or_default();
        Ok(results
            .iter()
            .map(|r| RawResult {
                url: r["url"].as_str().unwrap_or_default().to_string(),
                title: r["title"].as_str().unwrap_or_default().to_string(),
                snippet: r["content"].as_str().unwrap_or_default().to_string(),
                raw_content: r["raw_content"].as_str().map(str::to_string),
                score: r["score"].as_f64(),
                published_date: r["published_date"]
                    .as_str()
                    .and_then(|d| NaiveDate::parse_from_str(d.get(..10).unwrap_or(d), "%Y-%m-%d").ok()),
            })
            .collect())
    }

    async fn github(&self, query: &str) -> Result<Vec<RawResult>, String> {
        let token = self.github_token.as_deref().ok_or("GITHUB_TOKEN is not set")?;
        let url = url::Url::parse_with_params(GITHUB_CODE_SEARCH_URL, &[("q", query), ("per_page", "10")])
            .map_err(|e| e.to_string())?;
        let response = self
            .client
            .get(url)
            .bearer_auth(token)
            .header("User-Agent", "deepsteer")
            .header("Accept", "application/vnd.github.text-match+json")
            .send()
            .await
            .map_err(|e| format!("github request failed: {e}"))?;
        if !response.status().is_success() {
            return Err(format!("github returned HTTP {}", response.status().as_u16()));
        }
        let value: Value = response.json().await.map_err(|e| format!("github body: {e}"))?;
        let items = value["items"].as_array().cloned().unwrap_or_default();
        Ok(items
            .iter()
            .map(|item| RawResult {
                url: item["html_url"].as_str().unwrap_or_default().to_string(),
                title: format!(
                    "{}: {}",
                    item["repository"]["full_name"].as_str().unwrap_or_default(),
                    item["path"].as_str().unwrap_or_default()
                ),
                snippet: item["text_matches"][0]["fragment"]
                    .as_str()
                    .or(item["repository"]["description"].as_str())
                    .unwrap_or_default()
                    .to_string(),
                raw_content: None,
                // code-search scores are unbounded; leave ranking to defaults
                score: None,
                published_date: None,
            })
            .collect())
    }
}

#[async_trait]
impl Fetcher for LiveFetcher {
    fn is_live(&self) -> bool {
        true
    }

    async fn fetch(&self, provider: &str, query: &str) -> Result<Vec<RawResult>, String> {
        match provider {
            GENERAL_SEARCH => self.tavily(query, &[], true).await,
            ACADEMIC_SEARCH => self.tavily(query, ACADEMIC_DOMAINS, true).await,
            LINKEDIN_SEARCH => self.tavily(query, &["linkedin.com"], true).await,
            GITHUB_SEARCH => self.github(query).await,
            other => Err(format!("no live backend for {other}")),
        }
    }
}
