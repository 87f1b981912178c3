//! The `adhere` operator CLI.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use adhere_core::game::{parse_trace, score_trace};
use adhere_core::model::DateRange;
use adhere_core::sim::{simulate_cohort, CohortConfig};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

use crate::api::{router, AppState};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::export::write_cohort;
use crate::service::{ArmRule, Service};

pub const DATA_ENV: &str = "ADHERE_DATA";
pub const TOKEN_ENV: &str = "ADHERE_TOKEN";
const DEFAULT_DATA: &str = "adhere-data";
/// How often `serve` closes frozen days.
const CLOSE_TICK: StdDuration = StdDuration::from_secs(60);

#[derive(Debug, Parser)]
#[command(name = "adhere", version, about = "Medication adherence engine: store, API and analytics")]
pub struct Cli {
    /// Data directory. ADHERE_DATA, when set, takes precedence.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Close every frozen day up to and including DATE.
    CloseDay {
        #[arg(long)]
        date: NaiveDate,
        /// Evaluate as if the current time were NOW (RFC 3339).
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// Simulate a cohort into a fresh store directory.
    Simulate {
        /// TOML or JSON cohort config; the 18 vs 49 trial-shaped preset if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cohort report over a store.
    Report(ReportArgs),
    /// Score a daily adherence trace of 1s and 0s.
    Score {
        #[arg(long)]
        trace: String,
        #[arg(long)]
        json: bool,
    },
    /// Import a labs CSV (patient_id,draw_date,analyte,value_ng_ml).
    ImportLabs { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// FROM..TO, inclusive ISO dates; the whole record if omitted.
    #[arg(long)]
    pub window: Option<DateRange>,
    #[arg(long, conflicts_with = "json")]
    pub text: bool,
    #[arg(long)]
    pub json: bool,
    /// assigned (registration arm) or engagement (any logged intake).
    #[arg(long, default_value = "assigned")]
    pub arms: ArmRule,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Service(#[from] crate::service::ServiceError),
    #[error(transparent)]
    Export(#[from] crate::export::ExportError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Data directory after applying the environment override.
pub fn data_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map_or_else(|| PathBuf::from(DEFAULT_DATA), Path::to_path_buf),
    }
}

pub fn load_config(path: &Path) -> Result<CohortConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let config: CohortConfig = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    };
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let data = data_dir(cli.data.as_deref());
    match cli.command {
        Command::Serve { port, host } => serve(&data, &host, port),
        Command::CloseDay { date, now } => {
            let clock: Arc<dyn Clock> = match now {
                Some(t) => Arc::new(ManualClock::new(t)),
                None => Arc::new(SystemClock),
            };
            let service = Service::open(&data, clock)?;
            let summary = service.close_due(Some(date))?;
            println!("closed {} day(s), {} award(s)", summary.days_closed, summary.awards.len());
            for (patient, award) in summary.awards {
                println!("{patient}\t{}\t{:?}\t{}", award.day, award.kind, award.detail);
            }
            Ok(())
        }
        Command::Simulate { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => load_config(&path)?,
                None => CohortConfig::trial_shaped(0),
            };
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            let cohort = simulate_cohort(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            write_cohort(&out, &cfg, &cohort)?;
            println!("wrote {} patients to {}", cohort.patients.len(), out.display());
            Ok(())
        }
        Command::Report(args) => {
            let service = Service::open(&data, Arc::new(SystemClock))?;
            let report = service.cohort_report(args.window.unwrap_or_else(DateRange::all), args.arms);
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Score { trace, json } => {
            let bits = parse_trace(&trace).map_err(|e| CliError::Usage(e.to_string()))?;
            let score = score_trace(&bits);
            if json {
                println!("{}", serde_json::to_string(&score).expect("score serializes"));
            } else {
                let milestones = if score.milestones.is_empty() {
                    "none".to_string()
                } else {
                    score.milestones.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
                };
                println!("points: {}", score.points);
                println!("challenges: {}", score.challenges);
                println!("milestones: {milestones}");
            }
            Ok(())
        }
        Command::ImportLabs { file } => {
            let service = Service::open(&data, Arc::new(SystemClock))?;
            let import = service.ingest_labs(std::fs::File::open(&file)?)?;
            println!("accepted {}, rejected {}", import.accepted, import.rejected.len());
            for r in import.rejected {
                println!("line {}: {}", r.line, r.reason);
            }
            Ok(())
        }
    }
}

fn serve(data: &Path, host: &str, port: u16) -> Result<(), CliError> {
    std::fs::create_dir_all(data)?;
    let service = Arc::new(Service::open(data, Arc::new(SystemClock))?);
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()).map(Arc::from);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let ticker = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(CLOSE_TICK);
            loop {
                tick.tick().await;
                let s = ticker.clone();
                match tokio::task::spawn_blocking(move || s.close_due(None)).await {
                    Ok(Ok(summary)) if summary.days_closed > 0 => {
                        tracing::info!(days = summary.days_closed, awards = summary.awards.len(), "closed days");
                    }
                    Ok(Err(e)) => tracing::error!(error = %e, "day close failed"),
                    _ => {}
                }
            }
        });
        let app = router(AppState { service, token });
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, data = %data.display(), "serving");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
