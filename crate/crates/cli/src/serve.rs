use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, TimeZone, Utc};
use clap::Args;

use segrate_core::experiment::ingest_manifest;
use segrate_core::replica::RatingPlan;
use segrate_service::driver::{drive, DriverOptions};
use segrate_service::{router, AppState, Clock, ServiceConfig, SteppingClock, SystemClock};

use crate::{create_output, open, write_file, DEFAULT_SEED};

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Trial manifest (manifest.json) with stimuli next to it.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Directory for the event logs and, when simulating, the exports.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Environment variable holding the bearer token for the export endpoint.
    #[arg(long, default_value = "SEGRATE_EXPORT_TOKEN")]
    pub export_token_env: String,
    /// Drive the service in-process with the raters of a plan.json, write the exports and exit.
    #[arg(long, value_name = "PLAN")]
    pub simulate_raters: Option<PathBuf>,
}

fn fixed_instant(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).expect("valid literal").with_timezone(&Utc)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<String> {
    let loaded = ingest_manifest(&args.input).with_context(|| format!("cannot load {}", args.input.display()))?;
    let experiment_id = loaded.manifest.experiment_id.clone();
    create_output(&args.output)?;
    let env_token = std::env::var(&args.export_token_env).ok().filter(|t| !t.is_empty());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().context("tokio runtime")?;

    let Some(plan_path) = &args.simulate_raters else {
        if env_token.is_none() {
            log::warn!("{} is unset; export endpoint disabled", args.export_token_env);
        }
        let config = ServiceConfig { seed: args.seed, data_dir: args.output.clone(), export_token: env_token };
        let state = AppState::new(vec![loaded], &config, Arc::new(SystemClock))?;
        let addr = SocketAddr::from(([127, 0, 0, 1], args.port));
        eprintln!("serving '{experiment_id}' on http://{addr}");
        runtime.block_on(segrate_service::serve(addr, state)).context("server failed")?;
        return Ok(String::new());
    };

    let plan: RatingPlan = serde_json::from_reader(std::io::BufReader::new(open(plan_path)?))
        .with_context(|| format!("cannot parse {}", plan_path.display()))?;
    if plan.experiment_id != experiment_id {
        bail!("plan is for '{}' but the manifest is '{experiment_id}'", plan.experiment_id);
    }
    let log_dir = args.output.join("log");
    create_output(&log_dir)?;
    let log_file = log_dir.join(format!("{experiment_id}.jsonl"));
    if log_file.exists() {
        bail!("{} already exists; simulate into a fresh output directory", log_file.display());
    }
    let token = env_token.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    let config = ServiceConfig { seed: args.seed, data_dir: log_dir, export_token: Some(token.clone()) };
    let clock: Arc<dyn Clock> = Arc::new(SteppingClock::new(Utc.with_ymd_and_hms(2026, 1, 5, 9, 0, 0).unwrap(), 1000));
    let state = AppState::new(vec![loaded], &config, clock)?;
    let opts = DriverOptions {
        seed: args.seed,
        start: fixed_instant("2026-01-05T09:00:00Z"),
        export_token: token,
        reload_after: Some(7),
        resend_every: Some(11),
    };
    let report = runtime.block_on(drive(router(Arc::new(state)), &plan, &opts))?;
    write_file(&args.output.join("ratings.jsonl"), &report.ratings_jsonl)?;
    write_file(&args.output.join("survey.jsonl"), &report.survey_jsonl)?;
    Ok(format!(
        "simulated {} participants, {} responses ({} resends acknowledged, {} resumes) -> {}",
        report.participants,
        report.responses,
        report.duplicates_acknowledged,
        report.resumes,
        args.output.display()
    ))
}
