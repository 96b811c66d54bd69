//! Run the bundled offline session end to end and print its report.
//!
//! Pass a path to also write the trajectory export there:
//! `cargo run --example scripted_session -- /tmp/golden.jsonl`

use deepsteer::engine::trajectory::write_jsonl;
use deepsteer::fixture::run_golden;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let (session, report) = run_golden().await;
    let events = session.events();
    for e in &events {
        println!("loop {} {:<15} llm_calls={}", e.loop_index, e.kind.as_str(), e.llm_calls());
    }
    println!("\nstatus: {:?}, violations: {}", report.status, report.violations.len());
    println!("cited: {}, unused: {:?}\n", report.citations.len(), report.unused_sources);
    println!("{}", report.markdown);
    if let Some(path) = std::env::args().nth(1) {
        write_jsonl(path.as_ref(), &events)?;
        println!("trajectory written to {path}");
    }
    Ok(())
}
