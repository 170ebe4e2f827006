use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use segrate_core::replica::{generate_replica, write_replica, ReplicaConfig};

use crate::DEFAULT_SEED;

#[derive(Debug, Clone, Args)]
pub struct ReplicaArgs {
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Regular exams, not counting the attention-check exam.
    #[arg(long, default_value_t = 24)]
    pub exams: usize,
    #[arg(long, default_value_t = 15)]
    pub raters: usize,
}

pub fn cmd_replica(args: &ReplicaArgs) -> Result<String> {
    let config = ReplicaConfig { seed: args.seed, exams: args.exams, raters: args.raters, ..ReplicaConfig::default() };
    let replica = generate_replica(&config);
    write_replica(&replica, &args.output).with_context(|| format!("cannot write replica to {}", args.output.display()))?;
    Ok(format!(
        "replica: {} exams, {} trials, {} raters -> {}",
        replica.exams.len(),
        replica.manifest.trials.len(),
        replica.plan.participants.len(),
        args.output.display()
    ))
}
