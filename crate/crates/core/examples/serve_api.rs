//! Serve the HTTP API over the offline profile.
//!
//! `cargo run --example serve_api`, then:
//! `curl -XPOST localhost:8000/deep-research -H 'content-type: application/json' -d '{"query":"Impacts of Generative AI on Scientific Research"}'`
//! `curl -N localhost:8000/stream/session-1`

use std::net::SocketAddr;
use std::sync::Arc;

use deepsteer::fixture::FixtureProfile;
use deepsteer::service::{serve, AppState, ServiceConfig};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter("deepsteer=info").init();
    let port = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(8000);
    let engine = FixtureProfile::golden().engine();
    let app = AppState::new(Some(Arc::new(engine)), ServiceConfig::default());
    serve(app, SocketAddr::from(([127, 0, 0, 1], port))).await?;
    Ok(())
}
