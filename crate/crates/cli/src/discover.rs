use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use segrate_core::compound::{
    build_compound, derive_weights_from_lmm, CompoundChannel, CompoundLossSpec, Preset, WeightScale,
};
use segrate_core::losses::LossSpec;
use segrate_core::ratings::AggregatedRating;
use segrate_core::stats::{
    euclidean_distance_matrix, fit_lmm, hierarchical_cluster, pca, pseudo_r2, LmmData, LmmOptions, Linkage,
    PcaOptions,
};
use segrate_core::table::{read_loss_csv, ScoreTable, LOSS_HEADER};
use segrate_core::volume::{ENHANCING_TUMOR, TUMOR_CORE, WHOLE_TUMOR};

use crate::analyze::read_aggregated;
use crate::{create_output, first_line, open, write_file, write_with, Common};

#[derive(Debug, Clone, Args)]
pub struct DiscoverArgs {
    /// losses.csv from `evaluate`, plus optionally aggregated.csv from `analyze` for the mixed models.
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "average")]
    pub linkage: Linkage,
    /// Cluster raw loss values instead of z-scored ones; PCA on the covariance matrix.
    #[arg(long)]
    pub no_standardize: bool,
    /// Number of cluster groups cut from the tree.
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long, default_value = "gdice_bce")]
    pub preset: Preset,
    /// `raw` coefficients or `unit-l1` normalized weights.
    #[arg(long, default_value = "raw")]
    pub weight_scale: WeightScale,
}

/// Compound channel name and the evaluated channel it draws losses from.
const CHANNEL_MAP: [(&str, &str); 3] = [("WT", WHOLE_TUMOR), ("TC", TUMOR_CORE), ("ET", ENHANCING_TUMOR)];

fn usable_columns(table: &ScoreTable, standardize: bool) -> (ScoreTable, Vec<String>) {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in table.columns().iter().enumerate() {
        let col = table.column(j);
        let finite = col.iter().all(|v| v.is_finite());
        let varies = col.iter().any(|v| *v != col[0]);
        if finite && (varies || !standardize) {
            keep.push(j);
        } else {
            dropped.push(name.clone());
        }
    }
    let mut out = ScoreTable::new(keep.iter().map(|j| table.columns()[*j].clone()).collect());
    for (i, key) in table.rows().iter().enumerate() {
        let row = keep.iter().map(|j| table.get(i, *j)).collect();
        out.push_row(key.clone(), row).expect("rows are unique in the source table");
    }
    (out, dropped)
}

/// Loss value per (exam, method) for `column`, averaged over `channels`.
fn predictor(table: &ScoreTable, column: &str, channels: &[&str]) -> Result<BTreeMap<(String, String), f64>> {
    let j = table
        .column_index(column)
        .with_context(|| format!("loss column '{column}' is missing from the loss table"))?;
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (i, key) in table.rows().iter().enumerate() {
        if channels.contains(&key.channel.as_str()) {
            let e = acc.entry((key.exam.clone(), key.method.clone())).or_insert((0.0, 0));
            e.0 += table.get(i, j);
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .filter(|(_, (_, n))| *n == channels.len())
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect())
}

fn lmm_data(ratings: &[AggregatedRating], table: &ScoreTable, columns: &[String], channels: &[&str]) -> Result<LmmData> {
    let preds: Vec<_> = columns.iter().map(|c| predictor(table, c, channels)).collect::<Result<_>>()?;
    let mut data = LmmData { response: vec![], fixed: columns.iter().map(|c| (c.clone(), vec![])).collect(), intercept: true, exam: vec![], method: vec![] };
    for r in ratings.iter().filter(|r| !r.attention_check) {
        let key = (r.exam.clone(), r.method.clone());
        for (k, p) in preds.iter().enumerate() {
            let v = p
                .get(&key)
                .with_context(|| format!("no {} loss for exam '{}' method '{}'", columns[k], r.exam, r.method))?;
            data.fixed[k].1.push(*v);
        }
        data.response.push(r.mean);
        data.exam.push(r.exam.clone());
        data.method.push(r.method.clone());
    }
    Ok(data)
}

/// Dendrograms, clusters, PCA, and (with ratings) one mixed model per compound
/// channel group plus the derived compound spec.
pub fn cmd_discover(args: &DiscoverArgs) -> Result<String> {
    let mut losses_path: Option<PathBuf> = None;
    let mut ratings_path: Option<PathBuf> = None;
    for p in &args.common.input {
        let slot = if first_line(p)? == LOSS_HEADER.join(",") { &mut losses_path } else { &mut ratings_path };
        if slot.replace(p.clone()).is_some() {
            bail!("{}: more than one input of this kind", p.display());
        }
    }
    let losses_path = losses_path.context("discover needs a loss CSV from `evaluate`")?;
    let (full, _) = read_loss_csv(open(&losses_path)?).with_context(|| format!("cannot read {}", losses_path.display()))?;
    let out = &args.common.output;
    create_output(out)?;
    let standardize = !args.no_standardize;
    let mut report = String::new();
    let _ = writeln!(report, "Loss discovery");
    let _ = writeln!(report, "Loss table: {} rows x {} losses", full.n_rows(), full.n_cols());

    let (table, dropped) = usable_columns(&full, standardize);
    if !dropped.is_empty() {
        let _ = writeln!(report, "Excluded (non-finite or constant): {}", dropped.join(", "));
    }
    if table.n_cols() < 2 {
        bail!("fewer than two usable loss columns");
    }

    let distances = euclidean_distance_matrix(&table, standardize)?;
    let k = args.clusters.min(table.n_cols());
    for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
        let (tree, assignment) = hierarchical_cluster(&distances, linkage, k)?;
        write_file(&out.join(format!("dendrogram_{linkage}.nwk")), tree.to_newick() + "\n")?;
        if linkage == args.linkage {
            write_with(&out.join("clusters.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["loss", "cluster"])?;
                for (name, c) in tree.labels.iter().zip(&assignment) {
                    w.write_record([name.as_str(), &c.to_string()])?;
                }
                w.flush()
            })?;
            let _ = writeln!(report, "Clustering: {linkage} linkage, {k} groups");
            let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
            for (name, c) in tree.labels.iter().zip(&assignment) {
                groups.entry(*c).or_default().push(name);
            }
            for (c, members) in groups {
                let _ = writeln!(report, "  {c:>2}: {}", members.join(" "));
            }
        }
    }

    let pca_result = pca(&table, &PcaOptions { standardize, seed: args.common.seed, ..PcaOptions::default() })?;
    write_with(&out.join("pca.csv"), |buf| pca_result.write_csv(buf))?;
    let _ = writeln!(report, "PCA ({} matrix):", if standardize { "correlation" } else { "covariance" });
    for (i, (ev, ratio)) in pca_result.eigenvalues.iter().zip(&pca_result.explained_ratio).take(5).enumerate() {
        let _ = writeln!(report, "  PC{} eigenvalue {ev:.6} explained {ratio:.4}", i + 1);
    }
    let _ = writeln!(
        report,
        "  components suggested: Kaiser {}, parallel analysis {}",
        pca_result.kaiser_components, pca_result.parallel_components
    );

    if let Some(path) = ratings_path {
        let ratings = read_aggregated(&path)?;
        let spec = discover_compound(args, &full, &ratings, &mut report)?;
        let text = spec.to_text();
        if CompoundLossSpec::from_text(&text)? != spec {
            bail!("compound spec does not survive its text round trip");
        }
        write_file(&out.join(format!("compound_{}.txt", args.preset)), &text)?;
    } else {
        let _ = writeln!(report, "No ratings given; mixed models skipped.");
    }
    write_file(&out.join("discovery_report.txt"), &report)?;
    Ok(report)
}

fn discover_compound(
    args: &DiscoverArgs,
    table: &ScoreTable,
    ratings: &[AggregatedRating],
    report: &mut String,
) -> Result<CompoundLossSpec> {
    let out = &args.common.output;
    let template = args.preset.spec();
    let shared = matches!(args.preset, Preset::GdiceBce | Preset::GdiceSsBce);
    let all_channels: Vec<&str> = CHANNEL_MAP.iter().map(|(_, c)| *c).collect();
    let mut fitted: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for ch in template.channels() {
        let (group, channels): (String, Vec<&str>) = if shared {
            ("shared".into(), all_channels.clone())
        } else {
            let source = CHANNEL_MAP.iter().find(|(n, _)| *n == ch.name).map(|(_, c)| *c).context("unmapped channel")?;
            (ch.name.clone(), vec![source])
        };
        if fitted.contains_key(&group) {
            continue;
        }
        let specs: BTreeMap<String, LossSpec> = ch.components.iter().map(|c| (c.loss.label(), c.loss.clone())).collect();
        let columns: Vec<String> = ch.components.iter().map(|c| c.loss.label()).collect();
        let unique: BTreeSet<&String> = columns.iter().collect();
        if unique.len() != columns.len() {
            bail!("preset {} repeats a loss in channel {}", args.preset, ch.name);
        }
        let data = lmm_data(ratings, table, &columns, &channels)?;
        let fit = fit_lmm(&data, &LmmOptions::default())
            .with_context(|| format!("mixed model for {} ({group})", args.preset))?;
        let title = format!("{} {group}: rating ~ {} + (1|exam) + (1|method)", args.preset, columns.join(" + "));
        write_file(&out.join(format!("lmm_{}_{group}.txt", args.preset)), fit.report(&title))?;
        write_with(&out.join(format!("lmm_{}_{group}.csv", args.preset)), |buf| fit.write_csv(buf))?;
        let r2 = pseudo_r2(&fit);
        let _ = writeln!(
            report,
            "LMM {group}: n {}, converged {}, pseudo R2 marginal {:.4} conditional {:.4}",
            fit.n_obs, fit.converged, r2.marginal, r2.conditional
        );
        for (name, (b, se)) in fit.columns.iter().zip(fit.beta.iter().zip(&fit.se)) {
            let _ = writeln!(report, "  {name:<16} {b:>12.6} (SE {se:.6})");
        }
        let weights = derive_weights_from_lmm(&fit, &specs, args.weight_scale)
            .with_context(|| format!("weights for {group}"))?;
        fitted.insert(group, weights);
    }
    let channels = template
        .channels()
        .iter()
        .map(|ch| {
            let group = if shared { "shared" } else { ch.name.as_str() };
            let mut c = CompoundChannel::new(ch.name.clone(), ch.alpha, fitted[group].clone());
            c.provenance = Some(format!("lmm_{}_{group}", args.preset));
            c
        })
        .collect();
    let spec = build_compound(channels)?;
    let _ = writeln!(report, "Compound spec: compound_{}.txt ({} weights)", args.preset, match args.weight_scale {
        WeightScale::Raw => "raw",
        WeightScale::UnitL1 => "unit-l1",
    });
    Ok(spec)
}
