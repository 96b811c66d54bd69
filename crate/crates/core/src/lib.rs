//! Steerable deep-research orchestration.
//!
//! A session decomposes a query into a versioned task ledger, then loops
//! through query planning, parallel retrieval, incremental synthesis, and
//! reflection until the research is complete or the loop budget runs out.
//! A human can redirect the run at any time through the steering queue.

pub mod cli;
pub mod clock;
pub mod engine;
pub mod fixture;
pub mod ledger;
pub mod llm;
pub mod planning;
pub mod prompts;
pub mod reflection;
pub mod replay;
pub mod retrieval;
pub mod service;
pub mod steering;
pub mod stream;
pub mod synthesis;
pub mod text;
