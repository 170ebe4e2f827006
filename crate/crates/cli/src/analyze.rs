use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use segrate_core::ratings::{
    aggregate_over_views, bias_correct, condition_means, consensus, correlation_svg, participant_bias,
    pearson_correlation_matrix, AggregatedRating, RatingTable, DEFAULT_AGGREGATES,
};
use segrate_core::table::{read_loss_csv, read_metric_csv, ScoreTable, LOSS_HEADER, METRIC_HEADER};

use crate::{create_output, first_line, open, write_file, write_with, Common};

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// A ratings export (.jsonl), plus optional metrics.csv and losses.csv from `evaluate`.
    #[command(flatten)]
    pub common: Common,
    /// Use raw stars instead of bias-corrected ratings.
    #[arg(long)]
    pub no_bias_correct: bool,
}

#[derive(Debug, Default)]
struct Inputs {
    ratings: Option<PathBuf>,
    metrics: Option<PathBuf>,
    losses: Option<PathBuf>,
}

fn classify(paths: &[PathBuf]) -> Result<Inputs> {
    let mut inputs = Inputs::default();
    for p in paths {
        let slot = if p.extension().is_some_and(|e| e == "jsonl") {
            &mut inputs.ratings
        } else {
            let header = first_line(p)?;
            if header == METRIC_HEADER.join(",") {
                &mut inputs.metrics
            } else if header == LOSS_HEADER.join(",") {
                &mut inputs.losses
            } else {
                bail!("{}: not a ratings export, metric CSV or loss CSV", p.display());
            }
        };
        if slot.replace(p.clone()).is_some() {
            bail!("{}: more than one input of this kind", p.display());
        }
    }
    Ok(inputs)
}

pub fn read_ratings(path: &Path) -> Result<RatingTable> {
    RatingTable::read_jsonl(BufReader::new(open(path)?)).with_context(|| format!("cannot read {}", path.display()))
}

/// Aggregated ratings as CSV: participant, exam, method, mean, views, attention_check.
pub fn write_aggregated(out: &mut Vec<u8>, rows: &[AggregatedRating]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["participant", "exam", "method", "mean", "views", "attention_check"])?;
    for r in rows {
        w.write_record([
            r.participant.as_str(),
            &r.exam,
            &r.method,
            &format!("{:.10}", r.mean),
            &r.views.to_string(),
            &r.attention_check.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregated(path: &Path) -> Result<Vec<AggregatedRating>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        let bad = || format!("{}: line {}: malformed row", path.display(), i + 2);
        if rec.len() != 6 {
            bail!(bad());
        }
        rows.push(AggregatedRating {
            participant: rec[0].to_string(),
            exam: rec[1].to_string(),
            method: rec[2].to_string(),
            mean: rec[3].parse().with_context(bad)?,
            views: rec[4].parse().with_context(bad)?,
            attention_check: rec[5].parse().with_context(bad)?,
        });
    }
    Ok(rows)
}

fn correlate(out: &Path, name: &str, title: &str, ratings: &RatingTable, scores: &ScoreTable) -> Result<()> {
    let matrix = pearson_correlation_matrix(&consensus(&aggregate_over_views(ratings)), scores, DEFAULT_AGGREGATES);
    write_with(&out.join(format!("{name}.csv")), |buf| matrix.write_csv(buf))?;
    write_file(&out.join(format!("{name}.svg")), correlation_svg(&matrix, title))
}

fn mean_by<'a>(rows: impl Iterator<Item = (&'a str, f64)>) -> BTreeMap<&'a str, (f64, usize)> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (k, v) in rows {
        let e = acc.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, (s / n as f64, n))).collect()
}

/// Bias, condition means, attention-check summary, view-aggregated ratings and
/// correlation matrices (raw and, unless disabled, bias-corrected).
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String> {
    let inputs = classify(&args.common.input)?;
    let ratings_path = inputs.ratings.context("analyze needs a ratings export (.jsonl)")?;
    let raw = read_ratings(&ratings_path)?;
    if raw.is_empty() {
        bail!("{}: no ratings", ratings_path.display());
    }
    let out = &args.common.output;
    create_output(out)?;

    let corrected = if args.no_bias_correct {
        None
    } else {
        let bias = participant_bias(&raw).context("bias correction (use --no-bias-correct to skip)")?;
        let counts = mean_by(raw.records().iter().map(|r| (r.participant.as_str(), 0.0)));
        write_with(&out.join("bias.csv"), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["participant", "bias", "ratings"])?;
            for (p, b) in &bias {
                w.write_record([p.as_str(), &format!("{b:.10}"), &counts[p.as_str()].1.to_string()])?;
            }
            w.flush()
        })?;
        Some((bias, bias_correct(&raw)?))
    };
    let selected = corrected.as_ref().map_or(&raw, |(_, t)| t);

    let raw_means = condition_means(&raw);
    let corrected_means = corrected.as_ref().map(|(_, t)| condition_means(t));
    let counts = mean_by(raw.records().iter().filter(|r| !r.attention_check).map(|r| (r.method.as_str(), 0.0)));
    write_with(&out.join("condition_means.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["method", "raw_mean", "corrected_mean", "ratings"])?;
        for (m, v) in &raw_means {
            let c = corrected_means.as_ref().map(|c| format!("{:.6}", c[m])).unwrap_or_default();
            w.write_record([m.as_str(), &format!("{v:.6}"), &c, &counts[m.as_str()].1.to_string()])?;
        }
        w.flush()
    })?;

    let attention = mean_by(
        raw.records().iter().filter(|r| r.attention_check).map(|r| (r.participant.as_str(), f64::from(r.stars))),
    );
    write_with(&out.join("attention_check.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["participant", "mean_stars", "ratings"])?;
        for (p, (m, n)) in &attention {
            w.write_record([*p, &format!("{m:.6}"), &n.to_string()])?;
        }
        w.flush()
    })?;

    let aggregated = aggregate_over_views(selected);
    write_with(&out.join("aggregated.csv"), |buf| write_aggregated(buf, &aggregated))?;

    let mut score_tables = Vec::new();
    if let Some(p) = &inputs.metrics {
        let t = read_metric_csv(open(p)?).with_context(|| format!("cannot read {}", p.display()))?;
        score_tables.push(("metrics", t));
    }
    if let Some(p) = &inputs.losses {
        let (t, _) = read_loss_csv(open(p)?).with_context(|| format!("cannot read {}", p.display()))?;
        score_tables.push(("losses", t));
    }
    for (kind, table) in &score_tables {
        correlate(out, &format!("correlation_{kind}_raw"), &format!("Raw ratings vs {kind}"), &raw, table)?;
        if let Some((_, t)) = &corrected {
            let title = format!("Bias-corrected ratings vs {kind}");
            correlate(out, &format!("correlation_{kind}_corrected"), &title, t, table)?;
        }
    }

    let mut report = String::new();
    let participants = raw.participants();
    let _ = writeln!(report, "Rating analysis");
    let _ = writeln!(report, "Ratings: {} from {} participants", raw.len(), participants.len());
    let _ = writeln!(report, "Mode: {}", if corrected.is_some() { "bias-corrected" } else { "raw" });
    let _ = writeln!(report);
    let _ = writeln!(report, "Condition means (attention-check trials excluded):");
    for (m, v) in &raw_means {
        match &corrected_means {
            Some(c) => {
                let _ = writeln!(report, "  {m:<16} raw {v:.4}  corrected {:.4}", c[m]);
            }
            None => {
                let _ = writeln!(report, "  {m:<16} raw {v:.4}");
            }
        }
    }
    if let Some((bias, _)) = &corrected {
        let (lo, hi) = bias.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let _ = writeln!(report);
        let _ = writeln!(report, "Participant bias: min {lo:.4}, max {hi:.4}, sum {:.2e}", bias.values().sum::<f64>());
    }
    if !attention.is_empty() {
        let n: usize = attention.values().map(|(_, n)| n).sum();
        let mean = attention.values().map(|(m, n)| m * *n as f64).sum::<f64>() / n as f64;
        let _ = writeln!(report, "Attention-check trials: {n} ratings, mean {mean:.4} stars");
    }
    write_file(&out.join("analysis_report.txt"), &report)?;
    Ok(report)
}
