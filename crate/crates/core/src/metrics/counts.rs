//! Metric families that depend only on the confusion counts.

use serde::{Deserialize, Serialize};

use super::{check_shapes, Metric, MetricError, MetricReport, MetricValue, Result};
use crate::volume::BinaryMask;

/// Voxel-wise confusion counts of one (prediction, reference) channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn reference_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Counts with prediction and reference exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tn,
        }
    }
}

pub fn confusion_counts(pred: &BinaryMask, reference: &BinaryMask) -> Result<ConfusionCounts> {
    check_shapes(pred, reference)?;
    let mut c = ConfusionCounts::default();
    for (p, g) in pred.data().iter().zip(reference.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Overlap family plus the raw counts. `beta` weights recall in FMEASR.
pub fn overlap_metrics(c: &ConfusionCounts, beta: f64) -> MetricReport {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let n = c.n() as f64;
    let b2 = beta * beta;
    let mut r = MetricReport::new();
    r.insert(Metric::Dice, MetricValue::ratio(2.0 * tp, 2.0 * tp + fp + fn_));
    r.insert(Metric::Jaccard, MetricValue::ratio(tp, tp + fp + fn_));
    r.insert(Metric::Sensitivity, MetricValue::ratio(tp, tp + fn_));
    r.insert(Metric::Specificity, MetricValue::ratio(tn, tn + fp));
    r.insert(Metric::Fallout, MetricValue::ratio(fp, fp + tn));
    r.insert(Metric::FalseNegativeRate, MetricValue::ratio(fn_, fn_ + tp));
    r.insert(Metric::Accuracy, MetricValue::ratio(tp + tn, n));
    r.insert(Metric::Precision, MetricValue::ratio(tp, tp + fp));
    r.insert(Metric::FalsePositives, MetricValue::of(fp));
    r.insert(Metric::TruePositives, MetricValue::of(tp));
    r.insert(Metric::FalseNegatives, MetricValue::of(fn_));
    r.insert(Metric::TrueNegatives, MetricValue::of(tn));
    // (1+b²)PR/(b²P+R) with P, R expanded; defined whenever DICE is.
    r.insert(
        Metric::FMeasure,
        MetricValue::ratio((1.0 + b2) * tp, (1.0 + b2) * tp + b2 * fn_ + fp),
    );
    r
}

pub fn volume_metrics(c: &ConfusionCounts, spacing: [f64; 3]) -> MetricReport {
    let voxel = spacing[0] * spacing[1] * spacing[2];
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let mut r = MetricReport::new();
    r.insert(Metric::PredictionVolume, MetricValue::of((tp + fp) * voxel));
    r.insert(Metric::ReferenceVolume, MetricValue::of((tp + fn_) * voxel));
    let den = 2.0 * tp + fp + fn_;
    r.insert(
        Metric::VolumeSimilarity,
        if den == 0.0 {
            MetricValue::invalid()
        } else {
            MetricValue::of(1.0 - (fn_ - fp).abs() / den)
        },
    );
    r
}

fn pairs(k: u64) -> f64 {
    (k as f64) * (k.saturating_sub(1) as f64) / 2.0
}

/// Rand and adjusted Rand index of the two binary partitions.
pub fn pair_counting_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    let n = c.n();
    if n < 2 {
        return Err(MetricError::TooFewVoxels {
            metric: "RNDIND",
            needed: 2,
            got: n,
        });
    }
    let total = pairs(n);
    let cells = pairs(c.tp) + pairs(c.fp) + pairs(c.fn_) + pairs(c.tn);
    let rows = pairs(c.predicted_positive()) + pairs(c.fn_ + c.tn);
    let cols = pairs(c.reference_positive()) + pairs(c.fp + c.tn);
    let mut r = MetricReport::new();
    r.insert(Metric::RandIndex, MetricValue::of((total + 2.0 * cells - rows - cols) / total));
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    r.insert(Metric::AdjustedRandIndex, MetricValue::ratio(cells - expected, max - expected));
    Ok(r)
}

fn entropy(ps: &[f64]) -> f64 {
    -ps.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Mutual information and variation of information in nats.
pub fn information_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    let n = c.n();
    if n < 1 {
        return Err(MetricError::TooFewVoxels {
            metric: "MUTINF",
            needed: 1,
            got: n,
        });
    }
    let n = n as f64;
    let p = |k: u64| k as f64 / n;
    let h_pred = entropy(&[p(c.predicted_positive()), p(c.fn_ + c.tn)]);
    let h_ref = entropy(&[p(c.reference_positive()), p(c.fp + c.tn)]);
    let h_joint = entropy(&[p(c.tp), p(c.fp), p(c.fn_), p(c.tn)]);
    let mi = h_pred + h_ref - h_joint;
    let mut r = MetricReport::new();
    r.insert(Metric::MutualInformation, MetricValue::of(mi));
    r.insert(Metric::VariationOfInformation, MetricValue::of(h_pred + h_ref - 2.0 * mi));
    Ok(r)
}

pub fn probabilistic_metrics(pred: &BinaryMask, reference: &BinaryMask) -> Result<MetricReport> {
    probabilistic_from_counts(&confusion_counts(pred, reference)?)
}

/// ICCORR, PROBDST, KAPPA and AUC for hard labels.
pub fn probabilistic_from_counts(c: &ConfusionCounts) -> Result<MetricReport> {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let n = c.n() as f64;
    let mut r = MetricReport::new();

    if c.n() == 0 {
        for m in [Metric::Kappa, Metric::InterclassCorrelation] {
            r.insert(m, MetricValue::invalid());
        }
    } else {
        let p_o = (tp + tn) / n;
        let p_e = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        r.insert(Metric::Kappa, MetricValue::ratio(p_o - p_e, 1.0 - p_e));
        r.insert(Metric::InterclassCorrelation, icc_from_counts(c));
    }

    let fallout = MetricValue::ratio(fp, fp + tn);
    let fnr = MetricValue::ratio(fn_, fn_ + tp);
    r.insert(
        Metric::Auc,
        match (fallout.get(), fnr.get()) {
            (Some(a), Some(b)) => MetricValue::of(1.0 - (a + b) / 2.0),
            _ => MetricValue::invalid(),
        },
    );
    r.insert(Metric::ProbabilisticDistance, MetricValue::ratio(fp + fn_, 2.0 * tp));
    Ok(r)
}

/// One-way random ICC with voxels as subjects and the two masks as raters.
fn icc_from_counts(c: &ConfusionCounts) -> MetricValue {
    let n = c.n();
    if n < 2 {
        return MetricValue::invalid();
    }
    let nf = n as f64;
    let disagree = (c.fp + c.fn_) as f64;
    let grand = (2.0 * c.tp as f64 + disagree) / (2.0 * nf);
    // Subject means are 1 (tp), 0 (tn) or 1/2 (fp, fn).
    let between_ss = 2.0
        * (c.tp as f64 * (1.0 - grand).powi(2)
            + c.tn as f64 * grand.powi(2)
            + disagree * (0.5 - grand).powi(2));
    let within_ss = 0.5 * disagree;
    let bms = between_ss / (nf - 1.0);
    let wms = within_ss / nf;
    MetricValue::ratio(bms - wms, bms + wms)
}

/// Global consistency error, binary closed form; empty groups contribute zero.
pub fn gcoerr(c: &ConfusionCounts) -> Result<f64> {
    let n = c.n();
    if n < 1 {
        return Err(MetricError::TooFewVoxels {
            metric: "GCOERR",
            needed: 1,
            got: n,
        });
    }
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let term = |a: f64, b: f64, den: f64| if den == 0.0 { 0.0 } else { a * (a + 2.0 * b) / den };
    let e1 = (term(fn_, tp, tp + fn_) + term(fp, tn, tn + fp)) / n as f64;
    let e2 = (term(fp, tp, tp + fp) + term(fn_, tn, tn + fn_)) / n as f64;
    Ok(e1.min(e2))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: ConfusionCounts = ConfusionCounts {
        tp: 1,
        fp: 1,
        fn_: 0,
        tn: 2,
    };

    #[test]
    fn counts_on_two_by_two() {
        let p = BinaryMask::new([2, 2, 1], [1.0; 3], vec![true, true, false, false]).unwrap();
        let g = BinaryMask::new([2, 2, 1], [1.0; 3], vec![true, false, false, false]).unwrap();
        assert_eq!(confusion_counts(&p, &g).unwrap(), WORKED);
        assert_eq!(confusion_counts(&g, &p).unwrap(), WORKED.swapped());
    }

    #[test]
    fn identity_counts() {
        let m = BinaryMask::new([3, 1, 1], [1.0; 3], vec![true, false, true]).unwrap();
        assert_eq!(confusion_counts(&m, &m).unwrap(), ConfusionCounts::new(2, 0, 0, 1));
    }

    #[test]
    fn overlap_worked_example() {
        let r = overlap_metrics(&WORKED, 1.0);
        assert_eq!(r.value(Metric::Dice), Some(2.0 / 3.0));
        assert_eq!(r.value(Metric::Jaccard), Some(0.5));
        assert_eq!(r.value(Metric::Precision), Some(0.5));
        assert_eq!(r.value(Metric::Sensitivity), Some(1.0));
        assert_eq!(r.value(Metric::Accuracy), Some(0.75));
        assert_eq!(r.value(Metric::FMeasure), r.value(Metric::Dice));
    }

    #[test]
    fn disjoint_masks_have_zero_overlap() {
        let r = overlap_metrics(&ConfusionCounts::new(0, 3, 2, 5), 1.0);
        assert_eq!(r.value(Metric::Dice), Some(0.0));
        assert_eq!(r.value(Metric::Jaccard), Some(0.0));
        assert_eq!(r.value(Metric::FMeasure), Some(0.0));
    }

    #[test]
    fn fmeasure_beta_weights_recall() {
        // P = 1/2, R = 1, beta = 2: 5 * 0.5 / (4 * 0.5 + 1) = 5/6
        let r = overlap_metrics(&WORKED, 2.0);
        assert!((r.value(Metric::FMeasure).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_ratios_are_flagged() {
        let r = overlap_metrics(&ConfusionCounts::new(0, 0, 0, 4), 1.0);
        assert!(!r.get(Metric::Dice).unwrap().valid);
        assert!(!r.get(Metric::Precision).unwrap().valid);
        assert_eq!(r.value(Metric::Specificity), Some(1.0));
    }

    #[test]
    fn volume_worked_example() {
        let r = volume_metrics(&WORKED, [1.0; 3]);
        assert_eq!(r.value(Metric::PredictionVolume), Some(2.0));
        assert_eq!(r.value(Metric::ReferenceVolume), Some(1.0));
        assert_eq!(r.value(Metric::VolumeSimilarity), Some(1.0 - 1.0 / 3.0));
        let r = volume_metrics(&ConfusionCounts::new(0, 0, 3, 1), [1.0; 3]);
        assert_eq!(r.value(Metric::VolumeSimilarity), Some(0.0));
        let r = volume_metrics(&ConfusionCounts::new(2, 1, 1, 1), [0.5, 2.0, 3.0]);
        assert_eq!(r.value(Metric::VolumeSimilarity), Some(1.0));
        assert_eq!(r.value(Metric::PredictionVolume), Some(9.0));
    }

    #[test]
    fn rand_worked_example() {
        let r = pair_counting_metrics(&WORKED).unwrap();
        assert_eq!(r.value(Metric::RandIndex), Some(0.5));
        let r = pair_counting_metrics(&ConfusionCounts::new(3, 0, 0, 5)).unwrap();
        assert_eq!(r.value(Metric::RandIndex), Some(1.0));
        assert_eq!(r.value(Metric::AdjustedRandIndex), Some(1.0));
        assert!(pair_counting_metrics(&ConfusionCounts::new(1, 0, 0, 0)).is_err());
    }

    #[test]
    fn information_identities() {
        let r = information_metrics(&ConfusionCounts::new(3, 0, 0, 5)).unwrap();
        let h = -(3.0f64 / 8.0 * (3.0f64 / 8.0).ln() + 5.0 / 8.0 * (5.0f64 / 8.0).ln());
        assert!((r.value(Metric::MutualInformation).unwrap() - h).abs() < 1e-15);
        assert!(r.value(Metric::VariationOfInformation).unwrap().abs() < 1e-15);
        // Joint equal to the product of marginals (1/2 x 1/2 each cell).
        let r = information_metrics(&ConfusionCounts::new(1, 1, 1, 1)).unwrap();
        assert!(r.value(Metric::MutualInformation).unwrap().abs() < 1e-15);
    }

    #[test]
    fn information_worked_example() {
        let r = information_metrics(&WORKED).unwrap();
        // H(pred) = ln 2, H(ref) = H(1/4, 3/4), H(joint) = H(1/4, 1/4, 1/2)
        let h_ref = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let h_joint = -(2.0 * 0.25 * 0.25f64.ln() + 0.5 * 0.5f64.ln());
        let mi = 2f64.ln() + h_ref - h_joint;
        assert!((r.value(Metric::MutualInformation).unwrap() - mi).abs() < 1e-15);
    }

    #[test]
    fn kappa_worked_example() {
        let r = probabilistic_from_counts(&WORKED).unwrap();
        assert_eq!(r.value(Metric::Kappa), Some(0.5));
        assert_eq!(r.value(Metric::ProbabilisticDistance), Some(0.5));
        assert_eq!(r.value(Metric::Auc), Some(1.0 - (1.0 / 3.0) / 2.0));
    }

    #[test]
    fn complement_gives_negative_kappa() {
        let g = BinaryMask::new([4, 1, 1], [1.0; 3], vec![true, true, false, false]).unwrap();
        let r = probabilistic_metrics(&g.complement(), &g).unwrap();
        assert!(r.value(Metric::Kappa).unwrap() < 0.0);
        assert!(!r.get(Metric::ProbabilisticDistance).unwrap().valid);
    }

    #[test]
    fn gcoerr_values() {
        assert_eq!(gcoerr(&ConfusionCounts::new(3, 0, 0, 5)).unwrap(), 0.0);
        // E1 = [0 + 1*(1+4)/3]/4 = 5/12, E2 = [1*(1+2)/2 + 0]/4 = 3/8
        assert_eq!(gcoerr(&WORKED).unwrap(), 3.0 / 8.0);
    }
}
