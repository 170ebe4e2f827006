//! Segmentation losses evaluated as scalar functionals on one channel.
//!
//! Every formula accepts soft predictions in `[0, 1]`. Binary masks embed as
//! `{0, 1}` and give bit-identical results to [`evaluate_loss_binary`].

mod hausdorff;
mod spec;
mod table;

use thiserror::Error;

use crate::metrics::{confusion_counts, ConfusionCounts};
use crate::volume::BinaryMask;

pub use hausdorff::{hausdorff_dt, hausdorff_erosion};
pub use spec::{LossId, LossSpec, ALPHA, BETA, EPSILON, EXPONENT, ITERATIONS, LAMBDA};
pub use table::{loss_response_matrix, LossCase, LossTable};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("unknown loss '{0}'")]
    UnknownLoss(String),
    #[error("{loss}: invalid parameter {name}: {message}")]
    InvalidParameter { loss: LossId, name: String, message: String },
    #[error("prediction grid {pred:?} does not match reference grid {reference:?}")]
    ShapeMismatch { pred: [usize; 3], reference: [usize; 3] },
    #[error("prediction value {value} at voxel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("prediction has {got} values, grid needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("{0}")]
    Empty(&'static str),
    /// `cell` reads "exam, method, channel, loss".
    #[error("cell ({cell}): {source}")]
    Cell { cell: String, source: Box<LossError> },
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Per-voxel foreground probabilities on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl SoftPrediction {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(LossError::Length { expected, got: data.len() });
        }
        if let Some((index, value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(LossError::OutOfRange { index, value: *value });
        }
        Ok(SoftPrediction { dims, spacing, data })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        SoftPrediction {
            dims: mask.dims(),
            spacing: mask.spacing(),
            data: mask.data().iter().map(|v| f64::from(u8::from(*v))).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Voxels with probability above one half.
    pub fn binarize(&self) -> BinaryMask {
        BinaryMask::new(self.dims, self.spacing, self.data.iter().map(|v| *v > 0.5).collect())
            .expect("grid already validated")
    }
}

/// Sums every overlap-type loss is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sums {
    n: f64,
    p: f64,
    g: f64,
    pg: f64,
    /// Σ(p−g)²·g
    sq_fg: f64,
    /// Σ(p−g)²·(1−g)
    sq_bg: f64,
}

impl Sums {
    fn soft(pred: &SoftPrediction, reference: &BinaryMask) -> Self {
        let mut s = Sums { n: pred.len() as f64, p: 0.0, g: 0.0, pg: 0.0, sq_fg: 0.0, sq_bg: 0.0 };
        for (p, g) in pred.data.iter().zip(reference.data()) {
            s.p += p;
            if *g {
                s.g += 1.0;
                s.pg += p;
                s.sq_fg += (p - 1.0) * (p - 1.0);
            } else {
                s.sq_bg += p * p;
            }
        }
        s
    }

    fn counts(c: &ConfusionCounts) -> Self {
        let f = |v: u64| v as f64;
        Sums {
            n: f(c.tp + c.fp + c.fn_ + c.tn),
            p: f(c.tp + c.fp),
            g: f(c.tp + c.fn_),
            pg: f(c.tp),
            sq_fg: f(c.fn_),
            sq_bg: f(c.fp),
        }
    }

    fn fp(&self) -> f64 {
        self.p - self.pg
    }

    fn fn_(&self) -> f64 {
        self.g - self.pg
    }
}

/// `num / den`, with 0/0 read as perfect agreement.
fn agreement(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn check_grid(dims: [usize; 3], reference: &BinaryMask) -> Result<()> {
    if dims != reference.dims() {
        return Err(LossError::ShapeMismatch { pred: dims, reference: reference.dims() });
    }
    Ok(())
}

/// Evaluate one loss on a soft prediction against a binary reference.
pub fn evaluate_loss(spec: &LossSpec, pred: &SoftPrediction, reference: &BinaryMask) -> Result<f64> {
    check_grid(pred.dims, reference)?;
    spec.validate()?;
    match spec.id {
        LossId::Bce => Ok(bce(pred, reference, spec.param(EPSILON))),
        LossId::HausdorffDt => Ok(hausdorff_dt(pred, reference, spec.param(EXPONENT))),
        LossId::HausdorffEr => Ok(hausdorff_erosion(
            pred,
            reference,
            spec.param(EXPONENT),
            spec.param(ITERATIONS) as usize,
        )),
        _ => Ok(from_sums(spec, &Sums::soft(pred, reference))),
    }
}

/// Evaluate one loss on a binary prediction. Overlap-type losses go through
/// confusion counts; voxelwise losses use the embedded soft prediction.
pub fn evaluate_loss_binary(spec: &LossSpec, pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    check_grid(pred.dims(), reference)?;
    spec.validate()?;
    match spec.id {
        LossId::Bce | LossId::HausdorffDt | LossId::HausdorffEr => {
            evaluate_loss(spec, &SoftPrediction::from_mask(pred), reference)
        }
        _ => {
            let c = confusion_counts(pred, reference).map_err(|_| LossError::ShapeMismatch {
                pred: pred.dims(),
                reference: reference.dims(),
            })?;
            Ok(from_sums(spec, &Sums::counts(&c)))
        }
    }
}

fn from_sums(spec: &LossSpec, s: &Sums) -> f64 {
    match spec.id {
        LossId::Dice | LossId::SoftDice => {
            let eps = spec.param(EPSILON);
            1.0 - agreement(2.0 * s.pg + eps, s.p + s.g + eps)
        }
        LossId::Iou | LossId::Jaccard => {
            let eps = spec.param(EPSILON);
            1.0 - agreement(s.pg + eps, s.p + s.g - s.pg + eps)
        }
        LossId::Tversky => tversky(s, spec.param(ALPHA), spec.param(BETA), spec.param(EPSILON)),
        LossId::Asym => {
            let b2 = spec.param(BETA).powi(2);
            tversky(s, 1.0 / (1.0 + b2), b2 / (1.0 + b2), spec.param(EPSILON))
        }
        LossId::SensitivitySpecificity => {
            let eps = spec.param(EPSILON);
            let lambda = spec.param(LAMBDA);
            let part = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
            lambda * part(s.sq_fg, s.g + eps) + (1.0 - lambda) * part(s.sq_bg, s.n - s.g + eps)
        }
        LossId::GDiceL | LossId::GDiceW | LossId::GDiceM => {
            let fg = ChannelSums { inter: s.pg, pred: s.p, reference: s.g };
            let bg = ChannelSums {
                inter: s.n - s.p - s.g + s.pg,
                pred: s.n - s.p,
                reference: s.n - s.g,
            };
            generalized_dice_from(spec.id, spec.param(EPSILON), &[fg, bg])
        }
        LossId::Bce | LossId::HausdorffDt | LossId::HausdorffEr => unreachable!("voxelwise losses"),
    }
}

fn tversky(s: &Sums, alpha: f64, beta: f64, eps: f64) -> f64 {
    1.0 - agreement(s.pg + eps, s.pg + alpha * s.fp() + beta * s.fn_() + eps)
}

fn bce(pred: &SoftPrediction, reference: &BinaryMask, clamp: f64) -> f64 {
    let total: f64 = pred
        .data
        .iter()
        .zip(reference.data())
        .map(|(p, g)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            if *g {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / pred.len() as f64
}

#[derive(Debug, Clone, Copy)]
struct ChannelSums {
    inter: f64,
    pred: f64,
    reference: f64,
}

/// Generalized Dice over classes with inverse squared volume weights.
///
/// * `GDICE_L`: `w = 1/(Σg + ε)²`, ε also added to numerator and denominator.
/// * `GDICE_W`: `w = 1/max((Σg)², ε)`, ε added to numerator and denominator.
/// * `GDICE_M`: `w = 1/(Σg)²` with empty classes weighted 0, ε added to both.
fn generalized_dice_from(id: LossId, eps: f64, classes: &[ChannelSums]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in classes {
        let w = match id {
            LossId::GDiceL => 1.0 / (c.reference + eps).powi(2),
            LossId::GDiceW => 1.0 / (c.reference * c.reference).max(eps),
            LossId::GDiceM if c.reference == 0.0 => 0.0,
            LossId::GDiceM => 1.0 / (c.reference * c.reference),
            _ => unreachable!("not a generalized Dice id"),
        };
        if w.is_infinite() {
            // Only reachable with ε = 0 and an empty class.
            continue;
        }
        num += w * c.inter;
        den += w * (c.pred + c.reference);
    }
    1.0 - agreement(2.0 * num + eps, den + eps)
}

/// Generalized Dice treating each (prediction, reference) pair as one class.
pub fn generalized_dice_channels(spec: &LossSpec, channels: &[(&SoftPrediction, &BinaryMask)]) -> Result<f64> {
    spec.validate()?;
    if !matches!(spec.id, LossId::GDiceL | LossId::GDiceW | LossId::GDiceM) {
        return Err(LossError::UnknownLoss(format!("{} is not a generalized Dice loss", spec.id)));
    }
    if channels.is_empty() {
        return Err(LossError::Empty("no channels"));
    }
    let mut sums = Vec::with_capacity(channels.len());
    for (pred, reference) in channels {
        check_grid(pred.dims, reference)?;
        let s = Sums::soft(pred, reference);
        sums.push(ChannelSums { inter: s.pg, pred: s.p, reference: s.g });
    }
    Ok(generalized_dice_from(spec.id, spec.param(EPSILON), &sums))
}
