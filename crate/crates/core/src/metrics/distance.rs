//! Surface-distance metrics and the Mahalanobis distance between masks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{check_shapes, Metric, MetricParams, MetricReport, MetricValue, Result};
use crate::distance_transform::{active_axes, squared_edt, surface};
use crate::volume::BinaryMask;

/// Linear-interpolation percentile of `values` (sorted in place). `p = 100` is the maximum.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    values.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
    }
}

/// Distances (mm) from each surface voxel of `from` to the nearest surface voxel of `to`.
fn directed(from_surface: &BinaryMask, to_surface: &BinaryMask) -> Vec<f64> {
    let sq = squared_edt(to_surface.dims(), to_surface.spacing(), to_surface.data());
    from_surface
        .data()
        .iter()
        .zip(sq)
        .filter(|(on, _)| **on)
        .map(|(_, d)| d.sqrt())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// HDRFDST, AVGDIST, SURFDICE, SURFOVLP and MAHLNBS. Distances are measured with
/// the reference mask's spacing. All are invalid when either mask is empty.
pub fn distance_metrics(pred: &BinaryMask, reference: &BinaryMask, params: &MetricParams) -> Result<MetricReport> {
    check_shapes(pred, reference)?;
    params.validate()?;
    let mut r = MetricReport::new();
    if !pred.any() || !reference.any() {
        for m in [
            Metric::Hausdorff,
            Metric::AverageDistance,
            Metric::Mahalanobis,
            Metric::SurfaceDice,
            Metric::SurfaceOverlap,
        ] {
            r.insert(m, MetricValue::invalid());
        }
        return Ok(r);
    }
    let spacing = reference.spacing();
    let pred = pred.with_spacing(spacing).expect("reference spacing is valid");
    let sp = surface(&pred);
    let sr = surface(reference);
    let d_pr = directed(&sp, &sr);
    let d_rp = directed(&sr, &sp);

    let mut pooled: Vec<f64> = d_pr.iter().chain(&d_rp).copied().collect();
    r.insert(Metric::Hausdorff, MetricValue::of(percentile(&mut pooled, params.hd_percentile)));
    r.insert(Metric::AverageDistance, MetricValue::of((mean(&d_pr) + mean(&d_rp)) / 2.0));

    let tol = params.surface_tolerance;
    let near_pr = d_pr.iter().filter(|d| **d <= tol).count();
    let near_rp = d_rp.iter().filter(|d| **d <= tol).count();
    r.insert(
        Metric::SurfaceDice,
        MetricValue::of((near_pr + near_rp) as f64 / (d_pr.len() + d_rp.len()) as f64),
    );
    r.insert(Metric::SurfaceOverlap, MetricValue::of(near_pr as f64 / d_pr.len() as f64));
    r.insert(Metric::Mahalanobis, mahalanobis(&pred, reference));
    Ok(r)
}

/// Centroid (mm) and population covariance of the foreground coordinates on the given axes.
fn moments(mask: &BinaryMask, axes: &[usize]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let k = axes.len();
    let spacing = mask.spacing();
    let pts: Vec<DVector<f64>> = mask
        .points()
        .map(|p| DVector::from_iterator(k, axes.iter().map(|a| p[*a] as f64 * spacing[*a])))
        .collect();
    let n = pts.len() as f64;
    let mu = pts.iter().fold(DVector::zeros(k), |acc, p| acc + p) / n;
    let cov = pts.iter().fold(DMatrix::zeros(k, k), |acc, p| {
        let d = p - &mu;
        acc + &d * d.transpose()
    }) / n;
    (mu, cov, n)
}

/// Mahalanobis distance between foreground centroids under the size-weighted pooled
/// covariance. A singular covariance gets `1e-9 * trace / rank` on its diagonal.
fn mahalanobis(pred: &BinaryMask, reference: &BinaryMask) -> MetricValue {
    let axes = active_axes(reference.dims());
    if axes.is_empty() {
        return MetricValue::of(0.0);
    }
    let (mu_p, cov_p, n_p) = moments(pred, &axes);
    let (mu_r, cov_r, n_r) = moments(reference, &axes);
    let mut pooled = (cov_p * n_p + cov_r * n_r) / (n_p + n_r);
    let diff = mu_p - mu_r;

    let eig = SymmetricEigen::new(pooled.clone());
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|l| **l > 1e-12 * max_eig.max(f64::MIN_POSITIVE))
        .count();
    let mut regularized = false;
    let eig = if rank < axes.len() {
        let ridge = if rank == 0 {
            1e-9
        } else {
            1e-9 * pooled.trace() / rank as f64
        };
        for i in 0..axes.len() {
            pooled[(i, i)] += ridge;
        }
        regularized = true;
        SymmetricEigen::new(pooled)
    } else {
        eig
    };
    let proj = eig.eigenvectors.transpose() * &diff;
    let q: f64 = proj
        .iter()
        .zip(eig.eigenvalues.iter())
        .map(|(c, l)| c * c / l)
        .sum();
    MetricValue {
        value: q.max(0.0).sqrt(),
        valid: true,
        regularized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MetricParams {
        MetricParams::default()
    }

    #[test]
    fn two_points_three_apart() {
        let a = BinaryMask::from_points([4, 1, 1], [1.0; 3], &[[0, 0, 0]]).unwrap();
        let b = BinaryMask::from_points([4, 1, 1], [1.0; 3], &[[3, 0, 0]]).unwrap();
        let r = distance_metrics(&a, &b, &params()).unwrap();
        assert_eq!(r.value(Metric::Hausdorff), Some(3.0));
        assert_eq!(r.value(Metric::AverageDistance), Some(3.0));
        assert_eq!(r.value(Metric::SurfaceDice), Some(0.0));
        let m = r.get(Metric::Mahalanobis).unwrap();
        assert!(m.regularized && m.valid);
    }

    #[test]
    fn empty_mask_invalidates_distances() {
        let a = BinaryMask::from_points([3, 3, 3], [1.0; 3], &[[1, 1, 1]]).unwrap();
        let e = BinaryMask::empty([3, 3, 3], [1.0; 3]).unwrap();
        let r = distance_metrics(&a, &e, &params()).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|(_, v)| !v.valid));
    }

    #[test]
    fn directed_surface_overlap_is_asymmetric() {
        // Small blob inside a large one: every small-surface voxel is close to the
        // large surface, but not the other way around.
        let small: Vec<[usize; 3]> = vec![[1, 1, 0]];
        let big: Vec<[usize; 3]> = (0..7).flat_map(|x| (0..3).map(move |y| [x, y, 0])).collect();
        let s = BinaryMask::from_points([7, 3, 1], [1.0; 3], &small).unwrap();
        let b = BinaryMask::from_points([7, 3, 1], [1.0; 3], &big).unwrap();
        let sb = distance_metrics(&s, &b, &params()).unwrap();
        let bs = distance_metrics(&b, &s, &params()).unwrap();
        assert_eq!(sb.value(Metric::SurfaceOverlap), Some(1.0));
        assert!(bs.value(Metric::SurfaceOverlap).unwrap() < 0.5);
        assert_eq!(sb.value(Metric::Hausdorff), bs.value(Metric::Hausdorff));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&mut v, 100.0), 4.0);
        assert_eq!(percentile(&mut v, 50.0), 2.5);
        assert!((percentile(&mut v, 95.0) - 3.85).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_translation_invariant() {
        let a_pts = [[1, 1, 1], [2, 1, 1], [1, 2, 1], [1, 1, 2], [2, 2, 2]];
        let b_pts = [[2, 1, 1], [3, 2, 1], [2, 3, 2], [3, 3, 3]];
        let shift = |pts: &[[usize; 3]]| pts.iter().map(|p| [p[0] + 2, p[1] + 1, p[2]]).collect::<Vec<_>>();
        let mk = |pts: &[[usize; 3]]| BinaryMask::from_points([7, 6, 5], [1.0, 0.5, 2.0], pts).unwrap();
        let d1 = mahalanobis(&mk(&a_pts), &mk(&b_pts));
        let d2 = mahalanobis(&mk(&shift(&a_pts)), &mk(&shift(&b_pts)));
        assert!(!d1.regularized);
        assert!((d1.value - d2.value).abs() < 1e-12);
        assert!(d1.value > 0.0);
    }
}
