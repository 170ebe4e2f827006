//! The `segrate` pipeline as a library, so tests can run subcommands in-process.
//!
//! `replica` → `evaluate` → `serve --simulate-raters` → `analyze` → `discover`
//! runs end to end on files, each step reading the previous step's outputs.

pub mod analyze;
pub mod discover;
pub mod evaluate;
pub mod replica;
pub mod serve;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "segrate", version, about = "Segmentation quality metrics, expert ratings and loss discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metric and loss CSVs for prediction/reference label volumes.
    Evaluate(evaluate::EvaluateArgs),
    /// Rater bias, condition means and rating-score correlations.
    Analyze(analyze::AnalyzeArgs),
    /// Loss clustering, PCA, mixed models and compound loss specs.
    Discover(discover::DiscoverArgs),
    /// Run the rating service, or drive it with synthetic raters.
    Serve(serve::ServeArgs),
    /// Write a synthetic four-condition rating experiment.
    Replica(replica::ReplicaArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Input files.
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate(a) => evaluate::cmd_evaluate(&a).map(|s| println!("{s}")),
        Command::Analyze(a) => analyze::cmd_analyze(&a).map(|s| println!("{s}")),
        Command::Discover(a) => discover::cmd_discover(&a).map(|s| println!("{s}")),
        Command::Serve(a) => serve::cmd_serve(&a).map(|s| println!("{s}")),
        Command::Replica(a) => replica::cmd_replica(&a).map(|s| println!("{s}")),
    }
}

pub(crate) fn create_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Write a file produced by a CSV-writing closure.
pub(crate) fn write_with<E>(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> Result<()>
where
    E: std::error::Error + Send + Sync + 'static,
{
    let mut buf = Vec::new();
    f(&mut buf).with_context(|| format!("cannot encode {}", path.display()))?;
    write_file(path, buf)
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

/// First line of a text file, for sniffing CSV headers.
pub(crate) fn first_line(path: &Path) -> Result<String> {
    use std::io::BufRead;
    let mut line = String::new();
    std::io::BufReader::new(open(path)?)
        .read_line(&mut line)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(line.trim_end().to_string())
}
