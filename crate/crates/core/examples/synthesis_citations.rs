//! Consolidate results, assign stable citation keys, and let synthesis
//! drop citations that do not resolve.

use std::sync::Arc;

use deepsteer::llm::{LlmGateway, RetryPolicy, SequenceProvider};
use deepsteer::retrieval::SearchResult;
use deepsteer::synthesis::{consolidate, synthesize, RunningSummary, SourceRegistry, SynthesisInput};

fn result(url: &str, title: &str, score: f64) -> SearchResult {
    SearchResult {
        url: url.into(),
        title: title.into(),
        snippet: format!("About {title}"),
        raw_content: None,
        score,
        provider: "general_search".into(),
        repository_root: None,
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let results = vec![
        result("https://nature.com/a?utm_source=feed", "Lab automation", 0.9),
        result("https://nature.com/a/", "Lab automation (dup)", 0.4),
        result("https://science.org/b", "AI peer review", 0.7),
    ];
    let unique = consolidate(&results);
    let mut registry = SourceRegistry::new();
    let keys = registry.register(&unique, 0);
    println!("{} results -> {} sources {:?}", results.len(), unique.len(), keys);

    let reply = "Labs automate routine assays [S1]. Reviews use AI triage [S2]. A rumour says otherwise [S7].";
    let llm = LlmGateway::new(Arc::new(SequenceProvider::new(vec![Ok(reply.into())])), RetryPolicy::test_profile());
    let previous = RunningSummary::default();
    let input = SynthesisInput { topic: "AI in science", previous: &previous, results: &unique, knowledge_gaps: "", uploaded_knowledge: None };
    let out = synthesize(input, &registry, &llm, "loop-0").await?;
    println!("summary: {}", out.summary.text);
    println!("stripped: {:?}", out.stripped_keys);
    println!("cited: {:?}", out.summary.cited_urls);
    Ok(())
}
