//! Register an external tool as a search provider. The tool here is a
//! shell one-liner speaking the connector protocol over stdio.

use deepsteer::clock::fixture_epoch;
use deepsteer::retrieval::{ProviderRegistry, ToolConnector};

const TOOL: &str = r#"read request
echo '{"results": [{"region": "EU", "revenue": 120}, {"url": "https://wiki.local/q3", "title": "Q3 notes", "snippet": "EU up 8%"}]}'"#;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let connector: ToolConnector = serde_json::from_value(serde_json::json!({
        "id": "nl2sql",
        "transport": "stdio",
        "command": ["sh", "-c", TOOL],
    }))?;
    let mut registry = ProviderRegistry::new();
    registry.register_tool(connector)?;
    println!("providers: {:?}", registry.names().collect::<Vec<_>>());
    for r in registry.search("nl2sql", "revenue by region", fixture_epoch()).await? {
        println!("{} | {} | {}", r.url, r.title, r.snippet);
    }
    Ok(())
}
