//! Distance-transform and erosion approximations of the Hausdorff distance.

use super::SoftPrediction;
use crate::distance_transform::{active_axes, two_sided_distance_field};
use crate::volume::BinaryMask;

/// Mean of `(p − g)² · (d_g^a + d_p^a)` where `d_g`, `d_p` are two-sided distance
/// fields of the reference and of the prediction thresholded at 0.5, both in the
/// reference spacing.
pub fn hausdorff_dt(pred: &SoftPrediction, reference: &BinaryMask, exponent: f64) -> f64 {
    let d_g = two_sided_distance_field(reference);
    let binary = pred.binarize().with_spacing(reference.spacing()).expect("reference spacing is valid");
    let d_p = two_sided_distance_field(&binary);
    let total: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .zip(d_g.iter().zip(&d_p))
        .map(|((p, g), (dg, dp))| {
            let err = p - f64::from(u8::from(*g));
            err * err * (dg.powf(exponent) + dp.powf(exponent))
        })
        .sum();
    total / pred.len() as f64
}

/// Convolution with the normalized cross kernel over the active axes, zero padded.
fn cross_convolve(values: &[f64], dims: [usize; 3], axes: &[usize]) -> Vec<f64> {
    let weight = 1.0 / (1 + 2 * axes.len()) as f64;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let coord = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
        let mut acc = *v;
        for &a in axes {
            if coord[a] > 0 {
                acc += values[i - strides[a]];
            }
            if coord[a] + 1 < dims[a] {
                acc += values[i + strides[a]];
            }
        }
        out.push(acc * weight);
    }
    out
}

/// Morphological-erosion Hausdorff loss. The squared error map is repeatedly
/// convolved, shifted by 0.5, clipped at zero and min-max normalized; iteration
/// `k` contributes with weight `(k + 1)^exponent`.
pub fn hausdorff_erosion(pred: &SoftPrediction, reference: &BinaryMask, exponent: f64, iterations: usize) -> f64 {
    let dims = pred.dims();
    let axes = active_axes(dims);
    let mut bound: Vec<f64> = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(p, g)| (p - f64::from(u8::from(*g))).powi(2))
        .collect();
    let mut eroded = vec![0.0; bound.len()];
    for k in 0..iterations {
        let mut erosion: Vec<f64> = cross_convolve(&bound, dims, &axes)
            .into_iter()
            .map(|v| (v - 0.5).max(0.0))
            .collect();
        let lo = erosion.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = erosion.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for v in &mut erosion {
                *v = (*v - lo) / (hi - lo);
            }
        }
        let w = ((k + 1) as f64).powf(exponent);
        for (e, v) in eroded.iter_mut().zip(&erosion) {
            *e += v * w;
        }
        bound = erosion;
    }
    eroded.iter().sum::<f64>() / eroded.len() as f64
}
