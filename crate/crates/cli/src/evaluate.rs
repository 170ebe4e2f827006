use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use segrate_core::losses::{loss_response_matrix, LossCase, LossSpec, SoftPrediction};
use segrate_core::metrics::{metric_report, MetricParams, MetricReport};
use segrate_core::table::{write_metric_csv, CaseKey};
use segrate_core::volume::{brats_channels, load_label_volume, BratsLegend, LabelVolume, VolumeFormat};

use crate::{create_output, write_file, write_with, Common};

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// A cases CSV (exam,method,prediction,reference) or one prediction and one reference volume.
    #[command(flatten)]
    pub common: Common,
    /// Percentile of surface distances for HDRFDST; 100 is the maximum.
    #[arg(long, default_value_t = 100.0)]
    pub hd_percentile: f64,
    /// Tolerance in mm for surface Dice.
    #[arg(long, default_value_t = 1.0)]
    pub surface_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub exam: String,
    pub method: String,
    pub prediction: PathBuf,
    pub reference: PathBuf,
}

/// Cases from `exam,method,prediction,reference`; paths are relative to the CSV.
pub fn read_cases(path: &Path) -> Result<Vec<Case>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_reader(crate::open(path)?);
    let headers = reader.headers().with_context(|| format!("{}: no header", path.display()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["exam", "method", "prediction", "reference"] {
        bail!("{}: header must be exam,method,prediction,reference", path.display());
    }
    let mut cases = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        cases.push(Case {
            exam: rec[0].to_string(),
            method: rec[1].to_string(),
            prediction: base.join(&rec[2]),
            reference: base.join(&rec[3]),
        });
    }
    if cases.is_empty() {
        bail!("{}: no cases", path.display());
    }
    Ok(cases)
}

fn cases_from_inputs(inputs: &[PathBuf]) -> Result<Vec<Case>> {
    match inputs {
        [csv] if csv.extension().is_some_and(|e| e == "csv") => read_cases(csv),
        [pred, reference] => Ok(vec![Case {
            exam: "case".into(),
            method: "prediction".into(),
            prediction: pred.clone(),
            reference: reference.clone(),
        }]),
        _ => bail!("--input takes a cases CSV or a prediction and a reference volume"),
    }
}

fn load(path: &Path) -> Result<LabelVolume> {
    if !path.is_file() {
        bail!("volume not found: {}", path.display());
    }
    let format = VolumeFormat::from_path(path)
        .with_context(|| format!("{}: unknown volume format (expected .nii, .rg or .png)", path.display()))?;
    load_label_volume(path, format).with_context(|| format!("cannot read {}", path.display()))
}

type CaseOutput = (Vec<(CaseKey, MetricReport)>, Vec<LossCase>);

fn evaluate_case(case: &Case, params: &MetricParams) -> Result<CaseOutput> {
    let pred = load(&case.prediction)?;
    let reference = load(&case.reference)?;
    if pred.dims() != reference.dims() {
        bail!(
            "{}: grid {:?} differs from reference {} grid {:?}",
            case.prediction.display(),
            pred.dims(),
            case.reference.display(),
            reference.dims()
        );
    }
    let legend = BratsLegend::default();
    let pred_ch = brats_channels(&pred, &legend);
    let ref_ch = brats_channels(&reference, &legend);
    let mut reports = Vec::new();
    let mut losses = Vec::new();
    for (channel, r) in ref_ch.iter() {
        let p = pred_ch.get(channel).expect("same channel set");
        let key = CaseKey::new(&case.exam, &case.method, channel);
        let report = metric_report(p, r, params)
            .with_context(|| format!("{} / {} / {channel}", case.exam, case.method))?;
        reports.push((key.clone(), report));
        losses.push(LossCase { key, pred: SoftPrediction::from_mask(p), reference: r.clone() });
    }
    Ok((reports, losses))
}

/// Writes `metrics.csv` and `losses.csv` for every case and BraTS channel.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let params = MetricParams {
        hd_percentile: args.hd_percentile,
        surface_tolerance: args.surface_tolerance,
        ..MetricParams::default()
    };
    params.validate()?;
    let cases = cases_from_inputs(&args.common.input)?;
    let out = &args.common.output;
    create_output(out)?;

    let per_case: Vec<CaseOutput> = cases.par_iter().map(|c| evaluate_case(c, &params)).collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut loss_cases = Vec::new();
    for (r, l) in per_case {
        reports.extend(r);
        loss_cases.extend(l);
    }
    write_with(&out.join("metrics.csv"), |buf| write_metric_csv(buf, &reports))?;
    let specs = LossSpec::default_battery();
    let losses = loss_response_matrix(&loss_cases, &specs)?;
    let mut buf = Vec::new();
    losses.write_csv(&mut buf)?;
    write_file(&out.join("losses.csv"), buf)?;
    Ok(format!(
        "evaluated {} cases, {} channel rows, {} losses -> {}",
        cases.len(),
        reports.len(),
        specs.len(),
        out.display()
    ))
}
