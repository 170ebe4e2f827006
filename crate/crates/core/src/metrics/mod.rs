//! Segmentation quality metrics for a (prediction, reference) mask pair.
//!
//! Metric names follow the usual evaluation-toolkit abbreviations (`DICE`,
//! `HDRFDST`, ...). No metric carries a smoothing epsilon: a ratio whose
//! denominator is zero produces a value flagged invalid rather than a guess.

mod counts;
mod distance;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::BinaryMask;

pub use counts::{
    confusion_counts, gcoerr, information_metrics, overlap_metrics, pair_counting_metrics,
    probabilistic_from_counts, probabilistic_metrics, volume_metrics, ConfusionCounts,
};
pub use distance::{distance_metrics, percentile};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction grid {pred:?} does not match reference grid {reference:?}")]
    ShapeMismatch {
        pred: [usize; 3],
        reference: [usize; 3],
    },
    #[error("{metric} needs at least {needed} voxels, got {got}")]
    TooFewVoxels {
        metric: &'static str,
        needed: u64,
        got: u64,
    },
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

macro_rules! metrics {
    ($($variant:ident => $abbrev:literal),* $(,)?) => {
        /// Every metric of the battery, in reporting order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum Metric {
            $($variant),*
        }

        impl Metric {
            pub const ALL: &'static [Metric] = &[$(Metric::$variant),*];

            pub fn abbrev(self) -> &'static str {
                match self {
                    $(Metric::$variant => $abbrev),*
                }
            }
        }

        impl FromStr for Metric {
            type Err = MetricError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($abbrev => Ok(Metric::$variant),)*
                    other => Err(MetricError::UnknownMetric(other.to_string())),
                }
            }
        }
    };
}

metrics! {
    Dice => "DICE",
    Jaccard => "JACRD",
    Sensitivity => "SNSVTY",
    Specificity => "SPCFTY",
    Fallout => "FALLOUT",
    FalseNegativeRate => "FNR",
    Accuracy => "ACURCY",
    Precision => "PRCISON",
    FalsePositives => "FP",
    TruePositives => "TP",
    FalseNegatives => "FN",
    TrueNegatives => "TN",
    FMeasure => "FMEASR",
    VolumeSimilarity => "VOLSMTY",
    PredictionVolume => "PREDVOL",
    ReferenceVolume => "REFVOL",
    GlobalConsistencyError => "GCOERR",
    RandIndex => "RNDIND",
    AdjustedRandIndex => "ADJRIND",
    MutualInformation => "MUTINF",
    VariationOfInformation => "VARINFO",
    InterclassCorrelation => "ICCORR",
    ProbabilisticDistance => "PROBDST",
    Kappa => "KAPPA",
    Auc => "AUC",
    Hausdorff => "HDRFDST",
    AverageDistance => "AVGDIST",
    Mahalanobis => "MAHLNBS",
    SurfaceDice => "SURFDICE",
    SurfaceOverlap => "SURFOVLP",
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// One metric value with its validity flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub valid: bool,
    /// Set when the value needed numerical regularization (singular covariance).
    pub regularized: bool,
}

impl MetricValue {
    pub fn of(value: f64) -> Self {
        MetricValue {
            value,
            valid: value.is_finite(),
            regularized: false,
        }
    }

    pub fn invalid() -> Self {
        MetricValue {
            value: f64::NAN,
            valid: false,
            regularized: false,
        }
    }

    /// `num / den`, invalid when `den == 0`.
    pub fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Self::invalid()
        } else {
            Self::of(num / den)
        }
    }

    pub fn get(&self) -> Option<f64> {
        self.valid.then_some(self.value)
    }
}

/// Metric values keyed by metric, iterated in reporting order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    values: BTreeMap<Metric, MetricValue>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, metric: Metric, value: MetricValue) {
        self.values.insert(metric, value);
    }

    pub fn get(&self, metric: Metric) -> Option<&MetricValue> {
        self.values.get(&metric)
    }

    /// The value if present and valid.
    pub fn value(&self, metric: Metric) -> Option<f64> {
        self.get(metric).and_then(MetricValue::get)
    }

    pub fn extend(&mut self, other: MetricReport) {
        self.values.extend(other.values);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Metric, &MetricValue)> {
        self.values.iter().map(|(m, v)| (*m, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tunables for the parameterized metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    /// Percentile in (0, 100] of the pooled surface distances; 100 is the classical Hausdorff.
    pub hd_percentile: f64,
    /// Tolerance in mm for surface Dice and surface overlap.
    pub surface_tolerance: f64,
    /// Weight of recall in the F-measure.
    pub beta: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            hd_percentile: 100.0,
            surface_tolerance: 1.0,
            beta: 1.0,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.hd_percentile > 0.0 && self.hd_percentile <= 100.0) {
            return Err(MetricError::InvalidParameter {
                name: "hd_percentile",
                message: format!("{} not in (0, 100]", self.hd_percentile),
            });
        }
        if !(self.surface_tolerance >= 0.0 && self.surface_tolerance.is_finite()) {
            return Err(MetricError::InvalidParameter {
                name: "surface_tolerance",
                message: format!("{} must be a non-negative distance", self.surface_tolerance),
            });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MetricError::InvalidParameter {
                name: "beta",
                message: format!("{} must be positive", self.beta),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_shapes(pred: &BinaryMask, reference: &BinaryMask) -> Result<()> {
    if pred.dims() != reference.dims() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.dims(),
            reference: reference.dims(),
        });
    }
    Ok(())
}

/// The full battery for one mask pair. Distances use the reference spacing.
pub fn metric_report(pred: &BinaryMask, reference: &BinaryMask, params: &MetricParams) -> Result<MetricReport> {
    params.validate()?;
    let c = confusion_counts(pred, reference)?;
    let mut report = overlap_metrics(&c, params.beta);
    report.extend(volume_metrics(&c, reference.spacing()));
    report.insert(Metric::GlobalConsistencyError, MetricValue::of(gcoerr(&c)?));
    report.extend(pair_counting_metrics(&c)?);
    report.extend(information_metrics(&c)?);
    report.extend(probabilistic_from_counts(&c)?);
    report.extend(distance_metrics(pred, reference, params)?);
    Ok(report)
}
