//! Command-line entry points: `run`, `serve`, `replay`, `stats`.
//!
//! Exit codes: 0 success, 1 failed session or unreadable input, 2 usage or
//! configuration error.

use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::clock::SystemClock;
use crate::engine::stats::{compute_trajectory_stats, render_table, split_sessions};
use crate::engine::trajectory::{parse_jsonl, write_jsonl};
use crate::engine::{Engine, EngineConfig, Mode, SessionStatus};
use crate::fixture::FixtureProfile;
use crate::llm::{live_provider_from_env, LlmGateway, RetryPolicy};
use crate::replay::{session_from_recording, Replayer};
use crate::retrieval::{LiveFetcher, ProviderRegistry, ToolConnector};
use crate::service::{self, AppState, ServiceConfig};
use crate::stream::stream_events;

pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "deepsteer", version, about = "Steerable deep-research engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one research session to completion, headless.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Serve or print a recorded trajectory as a live event stream.
    Replay(ReplayArgs),
    /// Aggregate statistics over trajectory files.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Real model and search backends, configured from the environment.
    Live,
    /// Scripted model and canned search corpus; no network access.
    Fixture,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "fixture")]
    pub profile: Profile,
    /// Fixture directory; the built-in golden fixture when omitted.
    #[arg(long)]
    pub fixture_dir: Option<PathBuf>,
    /// Model name passed to the live provider.
    #[arg(long, env = "LLM_MODEL")]
    pub model: Option<String>,
    /// JSON file holding an array of tool connectors to register.
    #[arg(long)]
    pub connectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub topic: String,
    #[arg(long, default_value = "standard")]
    pub mode: Mode,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Where report.md and trajectory.jsonl are written.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value_t = 15)]
    pub heartbeat_secs: u64,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub trajectory: PathBuf,
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
    /// Delay between recorded events.
    #[arg(long, default_value_t = 500)]
    pub pace_ms: u64,
    /// Print the event-stream frames and exit instead of serving.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub paths: Vec<PathBuf>,
    /// Emit JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILED,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failed(msg: impl Into<String>) -> CliError {
    CliError::Failed(msg.into())
}

fn load_connectors(path: &Path) -> Result<Vec<ToolConnector>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Build the engine for a backend profile.
pub fn build_engine(args: &BackendArgs) -> Result<Engine, CliError> {
    let engine = match args.profile {
        Profile::Fixture => {
            if std::env::var("LLM_PROVIDER").is_ok_and(|v| !v.trim().is_empty()) {
                return Err(usage("the fixture profile cannot be combined with LLM_PROVIDER; unset it or use --profile live"));
            }
            let profile = match &args.fixture_dir {
                Some(dir) => FixtureProfile::load_dir(dir).map_err(|e| usage(e.to_string()))?,
                None => FixtureProfile::golden(),
            };
            profile.engine()
        }
        Profile::Live => {
            if args.fixture_dir.is_some() {
                return Err(usage("--fixture-dir only applies to the fixture profile"));
            }
            let provider = std::env::var("LLM_PROVIDER").map_err(|_| usage("LLM_PROVIDER must be set for the live profile"))?;
            let model = args.model.clone().ok_or_else(|| usage("--model (or LLM_MODEL) is required for the live profile"))?;
            let llm = LlmGateway::new(live_provider_from_env(&provider, &model).map_err(usage)?, RetryPolicy::live_profile());
            let fetcher = LiveFetcher::from_env();
            if !fetcher.has_credentials() {
                tracing::warn!("no search credentials configured; searches will fail");
            }
            Engine::new(llm, ProviderRegistry::with_builtin(Arc::new(fetcher)), Arc::new(SystemClock))
                .with_config(EngineConfig::default())
        }
    };
    let mut engine = engine;
    if let Some(path) = &args.connectors {
        let mut registry = engine.registry().clone();
        for c in load_connectors(path)? {
            registry.register_tool(c).map_err(|e| usage(e.to_string()))?;
        }
        engine = engine.with_registry(registry);
    }
    Ok(engine)
}

async fn run(args: RunArgs) -> Result<(), CliError> {
    let engine = build_engine(&args.backend)?;
    if args.backend.profile == Profile::Fixture && (engine.llm().is_live() || engine.registry().has_live_backend()) {
        return Err(usage("fixture profile resolved a live backend"));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| failed(format!("{}: {e}", args.out_dir.display())))?;
    let session = engine
        .create_session(&args.topic, args.mode, args.backend.model.clone())
        .map_err(|e| usage(e.to_string()))?;
    let report = engine.run(&session).await;

    let trajectory = args.out_dir.join("trajectory.jsonl");
    write_jsonl(&trajectory, &session.events()).map_err(|e| failed(format!("{}: {e}", trajectory.display())))?;
    println!("trajectory: {}", trajectory.display());
    if session.status() == SessionStatus::Failed {
        let reason = session.read(|s| s.error.clone()).unwrap_or_default();
        return Err(failed(format!("session failed: {reason}")));
    }
    let report_path = args.out_dir.join("report.md");
    std::fs::write(&report_path, &report.markdown).map_err(|e| failed(format!("{}: {e}", report_path.display())))?;
    println!("report: {}", report_path.display());
    println!("status: {}", serde_json::to_value(report.status).unwrap_or_default().as_str().unwrap_or("?"));
    for v in &report.violations {
        println!("violation: {v:?}");
    }
    let live_calls = engine.llm().audit_log().iter().filter(|a| a.live).count();
    println!("live model calls: {live_calls}");
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<(), CliError> {
    let engine = build_engine(&args.backend)?;
    let config = ServiceConfig {
        heartbeat: Duration::from_secs(args.heartbeat_secs.max(1)),
        allowed_origins: (!args.cors_origins.is_empty()).then_some(args.cors_origins),
    };
    let app = AppState::new(Some(Arc::new(engine)), config);
    service::serve(app, SocketAddr::from((Ipv4Addr::LOCALHOST, args.port)))
        .await
        .map_err(|e| failed(e.to_string()))
}

async fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let path = &args.trajectory;
    let text = std::fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let events = parse_jsonl(&text).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    if args.stdout {
        let mut out = std::io::stdout().lock();
        for e in stream_events(&events) {
            // a closed pipe just ends the listing
            if out.write_all(e.to_sse_frame().as_bytes()).is_err() {
                break;
            }
        }
        return Ok(());
    }
    let session = session_from_recording(&events, Arc::new(SystemClock)).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let app = AppState::new(None, ServiceConfig::default());
    app.insert(session.clone());
    println!("replaying {} events as session {}", events.len(), session.id());
    tokio::spawn(Replayer::new(session).run(events, Duration::from_millis(args.pace_ms)));
    service::serve(app, SocketAddr::from((Ipv4Addr::LOCALHOST, args.port)))
        .await
        .map_err(|e| failed(e.to_string()))
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    if args.paths.is_empty() {
        return Err(failed("no trajectory files given"));
    }
    let mut trajectories = Vec::new();
    for path in &args.paths {
        let text = std::fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        let events = parse_jsonl(&text).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        trajectories.extend(split_sessions(events));
    }
    let stats = compute_trajectory_stats(&trajectories);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    } else {
        print!("{}", render_table(&stats));
    }
    Ok(())
}

pub async fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => run(a).await,
        Command::Serve(a) => serve(a).await,
        Command::Replay(a) => replay(a).await,
        Command::Stats(a) => stats(a),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "deepsteer=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    match runtime.block_on(execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
