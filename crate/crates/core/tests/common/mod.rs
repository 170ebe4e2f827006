//! Brute-force reference implementations used by the integration tests.
//! Nothing here calls into the metric or loss code it checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrate_core::volume::BinaryMask;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut impl Rng, dims: [usize; 3], spacing: [f64; 3], density: f64) -> BinaryMask {
    let n = dims.iter().product();
    BinaryMask::new(dims, spacing, (0..n).map(|_| rng.random_bool(density)).collect()).unwrap()
}

/// All 256 masks on a 2x2x2 grid, mask `i` has voxel `k` set iff bit `k` of `i` is set.
pub fn all_cube_masks() -> Vec<BinaryMask> {
    (0u32..256)
        .map(|bits| {
            BinaryMask::new([2, 2, 2], [1.0; 3], (0..8).map(|k| bits >> k & 1 == 1).collect()).unwrap()
        })
        .collect()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Oracle values of the count-based metrics, keyed by abbreviation.
pub fn enumerate_metrics(p: &[bool], g: &[bool], voxel_volume: f64) -> Vec<(&'static str, Option<f64>)> {
    let n = p.len();
    let nf = n as f64;
    let inter = p.iter().zip(g).filter(|(a, b)| **a && **b).count() as f64;
    let size_p = p.iter().filter(|v| **v).count() as f64;
    let size_g = g.iter().filter(|v| **v).count() as f64;
    let union = p.iter().zip(g).filter(|(a, b)| **a || **b).count() as f64;
    let both_bg = p.iter().zip(g).filter(|(a, b)| !**a && !**b).count() as f64;
    let bg_p = nf - size_p;
    let bg_g = nf - size_g;
    let only_p = size_p - inter;
    let only_g = size_g - inter;

    let mut out = vec![
        ("DICE", ratio(2.0 * inter, size_p + size_g)),
        ("JACRD", ratio(inter, union)),
        ("SNSVTY", ratio(inter, size_g)),
        ("SPCFTY", ratio(both_bg, bg_g)),
        ("FALLOUT", ratio(only_p, bg_g)),
        ("FNR", ratio(only_g, size_g)),
        ("ACURCY", ratio(inter + both_bg, nf)),
        ("PRCISON", ratio(inter, size_p)),
        ("TP", Some(inter)),
        ("FP", Some(only_p)),
        ("FN", Some(only_g)),
        ("TN", Some(both_bg)),
        ("PREDVOL", Some(size_p * voxel_volume)),
        ("REFVOL", Some(size_g * voxel_volume)),
        (
            "VOLSMTY",
            ratio((size_p - size_g).abs(), size_p + size_g).map(|x| 1.0 - x),
        ),
    ];

    // Pair counting over all unordered voxel pairs.
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let same_p = p[i] == p[j];
            let same_g = g[i] == g[j];
            match (same_p, same_g) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    out.push(("RNDIND", ratio(a + d, a + b + c + d)));
    out.push((
        "ADJRIND",
        ratio(2.0 * (a * d - b * c), (a + b) * (b + d) + (a + c) * (c + d)),
    ));

    // Information theory from the explicit joint distribution.
    let mut joint = [[0f64; 2]; 2];
    for (x, y) in p.iter().zip(g) {
        joint[usize::from(*x)][usize::from(*y)] += 1.0 / nf;
    }
    let px = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let py = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    let mut vi = 0.0;
    for x in 0..2 {
        for y in 0..2 {
            let pxy = joint[x][y];
            if pxy > 0.0 {
                mi += pxy * (pxy / (px[x] * py[y])).ln();
                vi -= pxy * ((pxy / py[y]).ln() + (pxy / px[x]).ln());
            }
        }
    }
    out.push(("MUTINF", Some(mi)));
    out.push(("VARINFO", Some(vi)));

    // Cohen's kappa from agreement and chance agreement.
    let p_o = (inter + both_bg) / nf;
    let p_e = (size_p / nf) * (size_g / nf) + (bg_p / nf) * (bg_g / nf);
    out.push(("KAPPA", ratio(p_o - p_e, 1.0 - p_e)));

    // One-way ANOVA ICC, voxels as subjects, the two masks as raters.
    let vals: Vec<[f64; 2]> = p
        .iter()
        .zip(g)
        .map(|(x, y)| [f64::from(u8::from(*x)), f64::from(u8::from(*y))])
        .collect();
    let grand = vals.iter().map(|v| v[0] + v[1]).sum::<f64>() / (2.0 * nf);
    let mut bss = 0.0;
    let mut wss = 0.0;
    for v in &vals {
        let m = (v[0] + v[1]) / 2.0;
        bss += 2.0 * (m - grand).powi(2);
        wss += (v[0] - m).powi(2) + (v[1] - m).powi(2);
    }
    let icc = if n < 2 {
        None
    } else {
        let bms = bss / (nf - 1.0);
        let wms = wss / nf;
        ratio(bms - wms, bms + wms)
    };
    out.push(("ICCORR", icc));

    let abs_diff = p.iter().zip(g).filter(|(a, b)| a != b).count() as f64;
    out.push(("PROBDST", ratio(abs_diff, 2.0 * inter)));
    let fpr = ratio(only_p, bg_g);
    let fnr = ratio(only_g, size_g);
    out.push(("AUC", fpr.zip(fnr).map(|(a, b)| 1.0 - (a + b) / 2.0)));
    out
}

/// Border voxels by explicit neighbor inspection; out-of-grid neighbors are background.
pub fn border_points(m: &BinaryMask) -> Vec<[usize; 3]> {
    let dims = m.dims();
    let axes: Vec<usize> = (0..3).filter(|a| dims[*a] > 1).collect();
    m.points()
        .filter(|p| {
            axes.iter().any(|&a| {
                let below = p[a] == 0 || {
                    let mut q = *p;
                    q[a] -= 1;
                    !m.get(q)
                };
                let above = p[a] + 1 == dims[a] || {
                    let mut q = *p;
                    q[a] += 1;
                    !m.get(q)
                };
                below || above
            })
        })
        .collect()
}

pub fn point_distance(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|k| (a[k] as f64 - b[k] as f64) * spacing[k]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub struct SurfaceOracle {
    pub hausdorff: f64,
    pub average: f64,
    pub surface_dice: f64,
    pub surface_overlap: f64,
}

/// Pairwise O(|S1| |S2|) surface distances.
pub fn surface_oracle(p: &BinaryMask, g: &BinaryMask, tolerance: f64) -> SurfaceOracle {
    let spacing = g.spacing();
    let sp = border_points(p);
    let sg = border_points(g);
    let nearest = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter()
            .map(|a| {
                to.iter()
                    .map(|b| point_distance(*a, *b, spacing))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let d_pg = nearest(&sp, &sg);
    let d_gp = nearest(&sg, &sp);
    let hausdorff = d_pg.iter().chain(&d_gp).copied().fold(0.0, f64::max);
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let within = |v: &[f64]| v.iter().filter(|d| **d <= tolerance).count() as f64;
    SurfaceOracle {
        hausdorff,
        average: (avg(&d_pg) + avg(&d_gp)) / 2.0,
        surface_dice: (within(&d_pg) + within(&d_gp)) / (d_pg.len() + d_gp.len()) as f64,
        surface_overlap: within(&d_pg) / d_pg.len() as f64,
    }
}

/// Closeness check that treats two invalid values as agreeing.
pub fn agree(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Loss formulas written voxel by voxel, parameters passed explicitly.
pub mod loss_oracle {
    pub fn sums(p: &[f64], g: &[bool]) -> (f64, f64, f64) {
        let mut sp = 0.0;
        let mut sg = 0.0;
        let mut spg = 0.0;
        for (x, y) in p.iter().zip(g) {
            let y = if *y { 1.0 } else { 0.0 };
            sp += x;
            sg += y;
            spg += x * y;
        }
        (sp, sg, spg)
    }

    pub fn dice(p: &[f64], g: &[bool], eps: f64) -> f64 {
        let (sp, sg, spg) = sums(p, g);
        1.0 - (2.0 * spg + eps) / (sp + sg + eps)
    }

    pub fn jaccard(p: &[f64], g: &[bool], eps: f64) -> f64 {
        let (sp, sg, spg) = sums(p, g);
        1.0 - (spg + eps) / (sp + sg - spg + eps)
    }

    pub fn tversky(p: &[f64], g: &[bool], alpha: f64, beta: f64, eps: f64) -> f64 {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (x, y) in p.iter().zip(g) {
            let y = if *y { 1.0 } else { 0.0 };
            tp += x * y;
            fp += x * (1.0 - y);
            fn_ += (1.0 - x) * y;
        }
        1.0 - (tp + eps) / (tp + alpha * fp + beta * fn_ + eps)
    }

    pub fn sensitivity_specificity(p: &[f64], g: &[bool], lambda: f64, eps: f64) -> f64 {
        let mut sens = 0.0;
        let mut spec = 0.0;
        let mut fg = 0.0;
        let mut bg = 0.0;
        for (x, y) in p.iter().zip(g) {
            let y = if *y { 1.0 } else { 0.0 };
            sens += (x - y).powi(2) * y;
            spec += (x - y).powi(2) * (1.0 - y);
            fg += y;
            bg += 1.0 - y;
        }
        lambda * sens / (fg + eps) + (1.0 - lambda) * spec / (bg + eps)
    }

    pub fn bce(p: &[f64], g: &[bool], clamp: f64) -> f64 {
        let mut total = 0.0;
        for (x, y) in p.iter().zip(g) {
            let x = x.max(clamp).min(1.0 - clamp);
            let y = if *y { 1.0 } else { 0.0 };
            total += -(y * x.ln() + (1.0 - y) * (1.0 - x).ln());
        }
        total / p.len() as f64
    }

    /// Generalized Dice over explicit classes `(p_c, g_c)` with per-class weights.
    pub fn generalized_dice(classes: &[(Vec<f64>, Vec<f64>)], weight: impl Fn(f64) -> f64, eps: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, g) in classes {
            let sg: f64 = g.iter().sum();
            let w = weight(sg);
            num += w * p.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            den += w * (p.iter().sum::<f64>() + sg);
        }
        1.0 - (2.0 * num + eps) / (den + eps)
    }

    pub fn two_classes(p: &[f64], g: &[bool]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let gf: Vec<f64> = g.iter().map(|y| if *y { 1.0 } else { 0.0 }).collect();
        vec![
            (p.to_vec(), gf.clone()),
            (p.iter().map(|x| 1.0 - x).collect(), gf.iter().map(|y| 1.0 - y).collect()),
        ]
    }
}

/// Two-sided distance field by brute force over all voxel pairs.
pub fn brute_two_sided_field(m: &BinaryMask) -> Vec<f64> {
    let fg = m.count();
    if fg == 0 || fg == m.len() {
        return vec![0.0; m.len()];
    }
    let spacing = m.spacing();
    (0..m.len())
        .map(|i| {
            let a = m.coords(i);
            let inside = m.data()[i];
            (0..m.len())
                .filter(|j| m.data()[*j] != inside)
                .map(|j| point_distance(a, m.coords(j), spacing))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Erosion loss with explicit neighbor offsets.
pub fn brute_erosion_loss(p: &[f64], g: &[bool], dims: [usize; 3], exponent: f64, iterations: usize) -> f64 {
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let axes: Vec<usize> = (0..3).filter(|a| dims[*a] > 1).collect();
    let mut bound: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(x, y)| (x - if *y { 1.0 } else { 0.0 }).powi(2))
        .collect();
    let mut total = vec![0.0; p.len()];
    for k in 0..iterations {
        let mut next = vec![0.0; p.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let c = [x as isize, y as isize, z as isize];
                    let mut s = bound[idx(x, y, z)];
                    let mut taps = 1;
                    for &a in &axes {
                        taps += 2;
                        for d in [-1isize, 1] {
                            let mut q = c;
                            q[a] += d;
                            if (0..3).all(|t| q[t] >= 0 && (q[t] as usize) < dims[t]) {
                                s += bound[idx(q[0] as usize, q[1] as usize, q[2] as usize)];
                            }
                        }
                    }
                    next[idx(x, y, z)] = (s / taps as f64 - 0.5).max(0.0);
                }
            }
        }
        let lo = next.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 0.0 {
            next.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
        for (t, v) in total.iter_mut().zip(&next) {
            *t += v * ((k + 1) as f64).powf(exponent);
        }
        bound = next;
    }
    total.iter().sum::<f64>() / total.len() as f64
}
