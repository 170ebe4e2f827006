#![allow(dead_code)]

use std::path::{Path, PathBuf};

use segrate_cli::analyze::{cmd_analyze, AnalyzeArgs};
use segrate_cli::discover::{cmd_discover, DiscoverArgs};
use segrate_cli::evaluate::{cmd_evaluate, EvaluateArgs};
use segrate_cli::serve::{cmd_serve, ServeArgs};
use segrate_cli::Common;
use segrate_core::compound::{Preset, WeightScale};
use segrate_core::replica::{generate_replica, write_replica, ReplicaConfig};
use segrate_core::stats::Linkage;

pub fn small_config(seed: u64) -> ReplicaConfig {
    ReplicaConfig { seed, exams: 3, raters: 4, dims: [20, 20, 12], ..ReplicaConfig::default() }
}

pub fn common(input: Vec<PathBuf>, output: PathBuf, seed: u64) -> Common {
    Common { input, output, seed }
}

/// Output directories of one pipeline run.
pub struct Run {
    pub replica: PathBuf,
    pub evaluate: PathBuf,
    pub serve: PathBuf,
    pub analyze: PathBuf,
    pub discover: PathBuf,
}

/// replica -> evaluate -> serve --simulate-raters -> analyze -> discover, in-process.
pub fn run_pipeline(root: &Path, config: &ReplicaConfig) -> Run {
    let run = Run {
        replica: root.join("replica"),
        evaluate: root.join("evaluate"),
        serve: root.join("serve"),
        analyze: root.join("analyze"),
        discover: root.join("discover"),
    };
    let seed = config.seed;
    write_replica(&generate_replica(config), &run.replica).unwrap();
    cmd_evaluate(&EvaluateArgs {
        common: common(vec![run.replica.join("cases.csv")], run.evaluate.clone(), seed),
        hd_percentile: 100.0,
        surface_tolerance: 1.0,
    })
    .unwrap();
    cmd_serve(&ServeArgs {
        input: run.replica.join("experiment/manifest.json"),
        output: run.serve.clone(),
        port: 0,
        seed,
        export_token_env: "SEGRATE_TEST_UNSET_TOKEN".into(),
        simulate_raters: Some(run.replica.join("experiment/plan.json")),
    })
    .unwrap();
    cmd_analyze(&AnalyzeArgs {
        common: common(
            vec![run.serve.join("ratings.jsonl"), run.evaluate.join("metrics.csv"), run.evaluate.join("losses.csv")],
            run.analyze.clone(),
            seed,
        ),
        no_bias_correct: false,
    })
    .unwrap();
    cmd_discover(&DiscoverArgs {
        common: common(
            vec![run.evaluate.join("losses.csv"), run.analyze.join("aggregated.csv")],
            run.discover.clone(),
            seed,
        ),
        linkage: Linkage::Average,
        no_standardize: false,
        clusters: 10,
        preset: Preset::GdiceBce,
        weight_scale: WeightScale::Raw,
    })
    .unwrap();
    run
}

/// Relative path and contents of every file under `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
