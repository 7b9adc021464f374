//! The `clientsim` command line. [`run`] takes the full argument list and
//! returns the process exit code: 0 on success, 2 for usage errors, missing
//! inputs and unknown groups, 1 for anything that fails while running.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};

use clientsim_core::model::{CorpusFormat, SessionStore};
use clientsim_core::pipeline::{self, PipelineError, ReportSpec, RunPlan, Selector, SimMode, Workspace};
use clientsim_core::reporting::{self, Format, ReportError};
use clientsim_service::{AppState, ServiceOptions};

#[derive(Debug, Parser)]
#[command(name = "clientsim", version, about = "Assess counseling sessions with simulated clients")]
pub struct Cli {
    /// Provider configuration (TOML). Without it every role uses the offline mock.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// Worker threads for per-session steps.
    #[arg(long, global = true, default_value_t = 4)]
    pub jobs: usize,
    /// Seed for random-pair baselines.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a transcript corpus into a store.
    Ingest {
        src: PathBuf,
        /// json or csv
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a psychological profile per session.
    ExtractProfiles {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long, default_value = "origin=corpus")]
        sessions: String,
        /// Re-extract sessions that already have a profile.
        #[arg(long)]
        force: bool,
    },
    /// Run simulated sessions from a plan.
    Simulate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// client-x-mirror or client-x-under-test
        #[arg(long)]
        mode: String,
    },
    /// Complete questionnaires and score sessions.
    Assess {
        #[arg(long)]
        store: PathBuf,
        /// `all`, or terms like `origin=sim-client-x-llm,quality=high` or ids.
        #[arg(long, default_value = "all")]
        sessions: String,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Assemble, compare and render group reports.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        /// json, md or csv; repeatable. Defaults to all three.
        #[arg(long)]
        format: Vec<String>,
    },
    /// Serve the live-session API.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 1800)]
        idle_timeout_secs: u64,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::NotFound(_)
            | PipelineError::Invalid(_)
            | PipelineError::Report(ReportError::UnknownGroup(_) | ReportError::EmptyGroup(_) | ReportError::BadRunId(_)) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_store(path: &Path) -> Result<(), Failure> {
    if path.join("index.json").exists() {
        Ok(())
    } else {
        Err(usage(format!("{} is not a session store (run ingest first)", path.display())))
    }
}

fn workspace(cli: &Cli, store: &Path) -> Result<Workspace, Failure> {
    require_store(store)?;
    if let Some(c) = &cli.config {
        require_file(c, "config")?;
    }
    Ok(Workspace::open(store, cli.config.as_deref(), cli.templates.as_deref(), cli.jobs)?)
}

fn selection(ws: &Workspace, spec: &str) -> Result<Vec<String>, Failure> {
    let sel: Selector = spec.parse().map_err(usage)?;
    Ok(sel.resolve(&ws.store)?)
}

fn report_failures(failed_items: &[(String, String)]) -> Result<(), Failure> {
    for (id, e) in failed_items {
        eprintln!("{id}: {e}");
    }
    if failed_items.is_empty() {
        Ok(())
    } else {
        Err(failed(format!("{} sessions failed", failed_items.len())))
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { src, format, out } => {
            require_file(src, "source")?;
            let format: CorpusFormat = format.parse().map_err(|e| usage(format!("{e}")))?;
            let store = SessionStore::open(out).map_err(|e| failed(e.to_string()))?;
            let s = pipeline::ingest(src, format, &store)?;
            println!(
                "accepted {} rejected {} (rejects in {})",
                s.accepted,
                s.rejected,
                s.rejects_path.display()
            );
        }
        Command::ExtractProfiles {
            store,
            provider,
            sessions,
            force,
        } => {
            let ws = workspace(cli, store)?;
            let ids = selection(&ws, sessions)?;
            let s = pipeline::extract_profiles(&ws, &ids, provider.as_deref(), *force)?;
            println!(
                "extracted {} skipped {} failed {}",
                s.extracted.len(),
                s.skipped.len(),
                s.failed.len()
            );
            report_failures(&s.failed)?;
        }
        Command::Simulate { store, plan, mode } => {
            let mode: SimMode = mode.parse().map_err(usage)?;
            require_file(plan, "plan")?;
            let ws = workspace(cli, store)?;
            let plan = RunPlan::load(plan)?;
            let outcomes = pipeline::simulate(&ws, &plan, mode)?;
            let mut failures = Vec::new();
            for o in outcomes {
                match o.result {
                    Ok(id) => println!("{id}"),
                    Err(e) => failures.push((o.session_id, e)),
                }
            }
            report_failures(&failures)?;
        }
        Command::Assess {
            store,
            sessions,
            provider,
            force,
        } => {
            let ws = workspace(cli, store)?;
            let ids = selection(&ws, sessions)?;
            let s = pipeline::assess(&ws, &ids, provider.as_deref(), *force);
            println!(
                "assessed {} skipped {} failed {}",
                s.assessed.len(),
                s.skipped.len(),
                s.failed.len()
            );
            report_failures(&s.failed)?;
        }
        Command::Report {
            store,
            groups,
            run_id,
            format,
        } => {
            require_file(groups, "group spec")?;
            let ws = workspace(cli, store)?;
            let spec = ReportSpec::load(groups)?;
            let formats: Vec<Format> = if format.is_empty() {
                Format::ALL.to_vec()
            } else {
                format.iter().map(|f| f.parse()).collect::<Result<_, _>>().map_err(usage)?
            };
            let run_id = run_id.clone().or(spec.run_id.clone()).unwrap_or_else(|| "report".into());
            let report = pipeline::build_report(&ws, &spec, &run_id, cli.seed)?;
            let paths = reporting::write_report(ws.root(), &report, &formats).map_err(PipelineError::from)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Serve {
            store,
            port,
            host,
            idle_timeout_secs,
        } => {
            let ws = workspace(cli, store)?;
            let options = ServiceOptions {
                idle_timeout: Duration::from_secs(*idle_timeout_secs),
                ..Default::default()
            };
            let addr = std::net::SocketAddr::new(*host, *port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| failed(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .map_err(|e| failed(format!("cannot bind {addr}: {e}")))?;
                println!("listening on http://{}", listener.local_addr().map_err(|e| failed(e.to_string()))?);
                clientsim_service::serve(listener, AppState::new(ws, options), clientsim_service::shutdown_signal())
                    .await
                    .map_err(|e| failed(e.to_string()))
            })?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
