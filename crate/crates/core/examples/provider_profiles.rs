//! The four search profiles applied to the same noisy result set.

use deepsteer::clock::fixture_epoch;
use deepsteer::retrieval::{apply_profile, ProviderProfile, RawResult};

fn row(url: &str, title: &str, score: f64) -> RawResult {
    RawResult {
        url: url.into(),
        title: title.into(),
        snippet: String::new(),
        raw_content: Some("full text".into()),
        score: Some(score),
        published_date: None,
    }
}

fn main() {
    let raw = vec![
        row("https://www.linkedin.com/in/jane-doe", "Jane Doe, ML scientist", 0.6),
        row("https://linkedin.com.evil.io/in/jane", "Jane Doe (mirror)", 0.9),
        row("https://github.com/acme/fold", "acme/fold", 0.8),
        row("https://github.com/acme/fold/blob/main/README.md", "fold README", 0.4),
        row("https://arxiv.org/abs/2401.00001?utm_source=x", "Protein Folding with Diffusion", 0.7),
        row("https://openreview.net/forum?id=abc", "Protein folding with diffusion.", 0.5),
    ];
    for profile in ProviderProfile::builtin() {
        let out = apply_profile(&profile, raw.clone(), fixture_epoch());
        println!("{} (top_k {}, {:?})", profile.name, profile.top_k, profile.dedup_rule);
        for r in out {
            let raw = if r.raw_content.is_some() { "raw" } else { "-" };
            println!("  {:.2} {:<3} {}", r.score, raw, r.url);
        }
    }
}
