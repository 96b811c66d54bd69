//! Gateway retry behaviour against a provider that fails transiently,
//! with sleeps recorded instead of taken.

use std::sync::Arc;

use deepsteer::llm::{CompletionRequest, LlmError, LlmGateway, PromptKind, RecordingSleeper, RetryPolicy, SequenceProvider};

#[tokio::main]
async fn main() {
    let busy = || Err(LlmError::Transient("429 rate limited".into()));
    let scenarios: Vec<(&str, Vec<Result<String, LlmError>>)> = vec![
        ("recovers", vec![busy(), busy(), Ok("plan".into())]),
        ("exhausts", vec![busy(), busy(), busy(), busy()]),
        ("auth", vec![Err(LlmError::Auth("401 bad key".into()))]),
    ];
    for (name, responses) in scenarios {
        let sleeper = Arc::new(RecordingSleeper::default());
        let gateway = LlmGateway::new(Arc::new(SequenceProvider::new(responses)), RetryPolicy::test_profile())
            .with_sleeper(sleeper.clone());
        let outcome = gateway.complete(&CompletionRequest::new(PromptKind::InitialPlan, "initial", "plan it")).await;
        let waits: Vec<u128> = sleeper.delays().iter().filter(|d| !d.is_zero()).map(|d| d.as_millis()).collect();
        println!("{name:<9} attempts={} waits_ms={waits:?} -> {outcome:?}", gateway.audit_log().len());
    }
}
