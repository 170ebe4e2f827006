//! Exact Euclidean distance transforms on anisotropic voxel grids.
//!
//! The squared transform is separable: one lower-envelope-of-parabolas pass
//! per axis (Felzenszwalb & Huttenlocher), each pass weighting index
//! differences by that axis' spacing. Distances are between voxel centers in mm.

use crate::volume::BinaryMask;

/// Axes along which the grid has more than one voxel. A 2D image stored as
/// `[w, h, 1]` therefore uses 4-connectivity and ignores z entirely.
pub fn active_axes(dims: [usize; 3]) -> Vec<usize> {
    (0..3).filter(|a| dims[*a] > 1).collect()
}

/// Border voxels: foreground with at least one face neighbor that is background.
/// Neighbors outside the grid count as background.
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let axes = active_axes(dims);
    let data = mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, fg)| {
            if !*fg {
                return false;
            }
            let p = mask.coords(i);
            axes.iter().any(|&a| {
                [-1i64, 1].iter().any(|step| {
                    let c = p[a] as i64 + step;
                    if c < 0 || c >= dims[a] as i64 {
                        return true;
                    }
                    let mut q = p;
                    q[a] = c as usize;
                    !mask.get(q)
                })
            })
        })
        .collect();
    BinaryMask::new(dims, mask.spacing(), data).expect("same geometry as input")
}

/// Squared distance (mm²) from every voxel to the nearest `features` voxel.
/// Every entry is `f64::INFINITY` when there are no features.
pub fn squared_edt(mask_dims: [usize; 3], spacing: [f64; 3], features: &[bool]) -> Vec<f64> {
    let n: usize = mask_dims.iter().product();
    assert_eq!(features.len(), n, "feature grid does not match dims");
    let mut f: Vec<f64> = features
        .iter()
        .map(|v| if *v { 0.0 } else { f64::INFINITY })
        .collect();
    if !features.iter().any(|v| *v) {
        return f;
    }
    let strides = [1, mask_dims[0], mask_dims[0] * mask_dims[1]];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut scratch = Envelope::default();
    for axis in 0..3 {
        let len = mask_dims[axis];
        if len == 1 {
            continue;
        }
        let stride = strides[axis];
        for start in 0..n {
            // Visit each line once, from its first element.
            if !(start / stride).is_multiple_of(len) {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|k| f[start + k * stride]));
            out.resize(len, 0.0);
            scratch.transform(&line, spacing[axis], &mut out);
            for (k, v) in out.iter().enumerate() {
                f[start + k * stride] = *v;
            }
        }
    }
    f
}

/// Euclidean distance (mm) from every voxel to the nearest set voxel of `features`.
pub fn edt(features: &BinaryMask) -> Vec<f64> {
    squared_edt(features.dims(), features.spacing(), features.data())
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Unsigned two-sided distance field: inside the mask, distance to the nearest
/// background voxel; outside, distance to the nearest foreground voxel. Zero
/// everywhere when the mask is empty or full.
pub fn two_sided_distance_field(mask: &BinaryMask) -> Vec<f64> {
    let fg = mask.count();
    if fg == 0 || fg == mask.len() {
        return vec![0.0; mask.len()];
    }
    let to_fg = edt(mask);
    let to_bg = edt(&mask.complement());
    mask.data()
        .iter()
        .enumerate()
        .map(|(i, inside)| if *inside { to_bg[i] } else { to_fg[i] })
        .collect()
}

#[derive(Default)]
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// 1D squared distance transform of sampled function `f` with sample spacing `s`.
    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        self.vertices.clear();
        self.bounds.clear();
        let pos = |q: usize| q as f64 * s;
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let (xq, xv) = (pos(q), pos(v));
                let z = ((f[q] + xq * xq) - (f[v] + xv * xv)) / (2.0 * (xq - xv));
                if z <= *self.bounds.last().expect("paired with vertices") {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.vertices.push(q);
                    self.bounds.push(z);
                    break;
                }
            }
        }
        if self.vertices.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let eval = |p: usize, v: usize| {
            let d = (p as f64 - v as f64) * s;
            d * d + f[v]
        };
        let mut k = 0;
        for (p, o) in out.iter_mut().enumerate() {
            let x = pos(p);
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            // Neighbors guard against a rounding-shifted breakpoint.
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(self.vertices.len() - 1);
            *o = (lo..=hi)
                .map(|j| eval(p, self.vertices[j]))
                .fold(f64::INFINITY, f64::min);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_squared(spacing: [f64; 3], features: &BinaryMask) -> Vec<f64> {
        let pts: Vec<[usize; 3]> = features.points().collect();
        (0..features.len())
            .map(|i| {
                let p = features.coords(i);
                pts.iter()
                    .map(|q| {
                        let d: [f64; 3] =
                            std::array::from_fn(|a| (p[a] as f64 - q[a] as f64) * spacing[a]);
                        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spacings = [[1.0, 1.0, 1.0], [0.5, 1.5, 2.0], [2.0, 0.25, 1.0]];
        for trial in 0..60 {
            let dims = [rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6)];
            let spacing = spacings[trial % spacings.len()];
            let n = dims.iter().product();
            let data: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
            let mask = BinaryMask::new(dims, spacing, data).unwrap();
            let fast = squared_edt(dims, spacing, mask.data());
            let slow = brute_squared(spacing, &mask);
            assert_eq!(fast, slow, "dims {dims:?} spacing {spacing:?}");
        }
    }

    #[test]
    fn no_features_is_infinite() {
        let d = squared_edt([3, 1, 1], [1.0; 3], &[false; 3]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn surface_of_solid_cube_excludes_interior() {
        let pts: Vec<[usize; 3]> = (0..3)
            .flat_map(|x| (0..3).flat_map(move |y| (0..3).map(move |z| [x + 1, y + 1, z + 1])))
            .collect();
        let m = BinaryMask::from_points([5, 5, 5], [1.0; 3], &pts).unwrap();
        let s = surface(&m);
        assert_eq!(s.count(), 26);
        assert!(!s.get([2, 2, 2]));
    }

    #[test]
    fn surface_2d_uses_four_neighbors() {
        let pts: Vec<[usize; 3]> = (0..3).flat_map(|x| (0..3).map(move |y| [x, y, 0])).collect();
        let m = BinaryMask::from_points([3, 3, 1], [1.0; 3], &pts).unwrap();
        let s = surface(&m);
        // Grid border counts as background; the center pixel is interior.
        assert_eq!(s.count(), 8);
        assert!(!s.get([1, 1, 0]));
    }

    #[test]
    fn distance_field_two_sided() {
        let m = BinaryMask::new([5, 1, 1], [1.0; 3], vec![false, true, true, true, false]).unwrap();
        let d = two_sided_distance_field(&m);
        assert_eq!(d, vec![1.0, 1.0, 2.0, 1.0, 1.0]);
    }
}
