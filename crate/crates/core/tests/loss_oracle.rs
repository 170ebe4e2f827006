mod common;

use common::loss_oracle as oracle;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use segrate_core::losses::*;
use segrate_core::volume::BinaryMask;

fn soft(rng: &mut impl Rng, dims: [usize; 3]) -> SoftPrediction {
    let n = dims.iter().product();
    SoftPrediction::new(dims, [1.0; 3], (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn oracle_value(spec: &LossSpec, p: &[f64], g: &[bool]) -> Option<f64> {
    let eps = spec.params.get(EPSILON).copied().unwrap_or(0.0);
    Some(match spec.id {
        LossId::Dice | LossId::SoftDice => oracle::dice(p, g, eps),
        LossId::Iou | LossId::Jaccard => oracle::jaccard(p, g, eps),
        LossId::Tversky => oracle::tversky(p, g, spec.param(ALPHA), spec.param(BETA), eps),
        LossId::Asym => {
            let b2 = spec.param(BETA) * spec.param(BETA);
            oracle::tversky(p, g, 1.0 / (1.0 + b2), b2 / (1.0 + b2), eps)
        }
        LossId::SensitivitySpecificity => oracle::sensitivity_specificity(p, g, spec.param(LAMBDA), eps),
        LossId::Bce => oracle::bce(p, g, eps),
        LossId::GDiceL => oracle::generalized_dice(&oracle::two_classes(p, g), |s| 1.0 / ((s + eps) * (s + eps)), eps),
        LossId::GDiceW => oracle::generalized_dice(&oracle::two_classes(p, g), |s| 1.0 / (s * s).max(eps), eps),
        LossId::GDiceM => oracle::generalized_dice(
            &oracle::two_classes(p, g),
            |s| if s == 0.0 { 0.0 } else { 1.0 / (s * s) },
            eps,
        ),
        LossId::HausdorffDt | LossId::HausdorffEr => return None,
    })
}

#[test]
fn soft_losses_match_voxelwise_oracle() {
    let mut rng = rng(21);
    for trial in 0..200 {
        let dims = [4, 3, 1 + trial % 3];
        let p = soft(&mut rng, dims);
        let g = random_mask(&mut rng, dims, [1.0; 3], 0.4);
        for spec in LossSpec::default_battery() {
            if let Some(expected) = oracle_value(&spec, p.data(), g.data()) {
                let got = evaluate_loss(&spec, &p, &g).unwrap();
                assert!(close(got, expected, 1e-12), "{spec}: {got} vs {expected}");
            }
        }
    }
}

#[test]
fn hausdorff_losses_match_brute_force() {
    let mut rng = rng(22);
    for trial in 0..60 {
        let dims = [5, 4, 1 + trial % 4];
        let p = soft(&mut rng, dims);
        let g = random_mask(&mut rng, dims, [1.0; 3], 0.35);
        let dg = brute_two_sided_field(&g);
        let dp = brute_two_sided_field(&p.binarize());
        let expected: f64 = (0..p.len())
            .map(|i| {
                let y = if g.data()[i] { 1.0 } else { 0.0 };
                (p.data()[i] - y).powi(2) * (dg[i].powi(2) + dp[i].powi(2))
            })
            .sum::<f64>()
            / p.len() as f64;
        let got = evaluate_loss(&LossSpec::new(LossId::HausdorffDt), &p, &g).unwrap();
        assert!(close(got, expected, 1e-12), "HDDT {got} vs {expected}");

        let expected = brute_erosion_loss(p.data(), g.data(), dims, 2.0, 10);
        let got = evaluate_loss(&LossSpec::new(LossId::HausdorffEr), &p, &g).unwrap();
        assert!(close(got, expected, 1e-9), "HDER {got} vs {expected}");
    }
}

#[test]
fn binary_and_embedded_soft_agree_exactly() {
    let mut rng = rng(23);
    for _ in 0..200 {
        let p = random_mask(&mut rng, [4, 4, 2], [1.0; 3], 0.4);
        let g = random_mask(&mut rng, [4, 4, 2], [1.0; 3], 0.4);
        let embedded = SoftPrediction::from_mask(&p);
        for spec in LossSpec::default_battery() {
            let a = evaluate_loss(&spec, &embedded, &g).unwrap();
            let b = evaluate_loss_binary(&spec, &p, &g).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{spec}: {a} vs {b}");
        }
    }
}

#[test]
fn dice_loss_monotone_under_false_positive_flip_on_all_3x3_masks() {
    let spec = LossSpec::new(LossId::Dice);
    let masks: Vec<BinaryMask> = (0u32..512)
        .map(|bits| BinaryMask::new([3, 3, 1], [1.0; 3], (0..9).map(|k| bits >> k & 1 == 1).collect()).unwrap())
        .collect();
    for g in &masks {
        for p in &masks {
            let before = evaluate_loss_binary(&spec, p, g).unwrap();
            for k in 0..9 {
                if !p.data()[k] && !g.data()[k] {
                    let mut d = p.data().to_vec();
                    d[k] = true;
                    let flipped = BinaryMask::new([3, 3, 1], [1.0; 3], d).unwrap();
                    let after = evaluate_loss_binary(&spec, &flipped, g).unwrap();
                    assert!(after >= before, "{before} -> {after}");
                }
            }
        }
    }
}

#[test]
fn tversky_half_half_reduces_to_dice() {
    let mut rng = rng(24);
    let t0 = LossSpec::tversky(0.5, 0.5).unwrap().with(EPSILON, 0.0).unwrap();
    let d0 = LossSpec::new(LossId::Dice).with(EPSILON, 0.0).unwrap();
    let t = LossSpec::tversky(0.5, 0.5).unwrap();
    let d = LossSpec::new(LossId::Dice);
    for _ in 0..300 {
        let p = soft(&mut rng, [5, 5, 2]);
        let g = random_mask(&mut rng, [5, 5, 2], [1.0; 3], 0.3);
        let a = evaluate_loss(&t0, &p, &g).unwrap();
        let b = evaluate_loss(&d0, &p, &g).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        // With ε > 0 Tversky's ε enters the Dice ratio at half weight.
        let (sp, sg, _) = oracle::sums(p.data(), g.data());
        let gap = (evaluate_loss(&t, &p, &g).unwrap() - evaluate_loss(&d, &p, &g).unwrap()).abs();
        assert!(gap <= 1e-5 / (sp + sg) + 1e-15, "gap {gap}");
    }
}

#[test]
fn identity_bounds() {
    let mut rng = rng(25);
    for _ in 0..100 {
        let g = random_mask(&mut rng, [4, 4, 4], [1.0; 3], 0.3);
        if !g.any() {
            continue;
        }
        let p = SoftPrediction::from_mask(&g);
        let sg = g.count() as f64;
        for id in [LossId::Dice, LossId::SoftDice, LossId::Iou, LossId::Jaccard] {
            let spec = LossSpec::new(id);
            let eps = spec.param(EPSILON);
            let v = evaluate_loss(&spec, &p, &g).unwrap();
            assert!(v.abs() <= eps / (2.0 * sg + eps), "{id}: {v}");
        }
        let bce = evaluate_loss(&LossSpec::new(LossId::Bce), &p, &g).unwrap();
        assert!(bce <= -(1.0f64 - 1e-7).ln() + 1e-18);
    }
}

#[test]
fn bce_at_one_half_is_ln_two() {
    let mut rng = rng(26);
    for _ in 0..50 {
        let g = random_mask(&mut rng, [3, 4, 5], [1.0; 3], 0.5);
        let p = SoftPrediction::new([3, 4, 5], [1.0; 3], vec![0.5; 60]).unwrap();
        let v = evaluate_loss(&LossSpec::new(LossId::Bce), &p, &g).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn iou_and_jac_give_near_identical_signals() {
    let mut rng = rng(27);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let p = soft(&mut rng, [6, 6, 3]);
        let g = random_mask(&mut rng, [6, 6, 3], [1.0; 3], 0.3);
        if g.count() < 10 {
            continue;
        }
        let a = evaluate_loss(&LossSpec::new(LossId::Iou), &p, &g).unwrap();
        let b = evaluate_loss(&LossSpec::new(LossId::Jaccard), &p, &g).unwrap();
        worst = worst.max((a - b).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn gdice_variants_split_on_empty_channel() {
    // Three channels, the last has an empty reference but a nonempty prediction.
    let dims = [4, 4, 1];
    let g1 = BinaryMask::from_points(dims, [1.0; 3], &[[0, 0, 0], [1, 0, 0], [0, 1, 0]]).unwrap();
    let g2 = BinaryMask::from_points(dims, [1.0; 3], &[[3, 3, 0], [2, 3, 0]]).unwrap();
    let g3 = BinaryMask::empty(dims, [1.0; 3]).unwrap();
    let p1 = SoftPrediction::from_mask(&g1);
    let p2 = SoftPrediction::from_mask(&g2);
    let p3 = SoftPrediction::from_mask(&BinaryMask::from_points(dims, [1.0; 3], &[[1, 2, 0]]).unwrap());
    let channels = [(&p1, &g1), (&p2, &g2), (&p3, &g3)];
    let w = generalized_dice_channels(&LossSpec::new(LossId::GDiceW), &channels).unwrap();
    let m = generalized_dice_channels(&LossSpec::new(LossId::GDiceM), &channels).unwrap();
    let l = generalized_dice_channels(&LossSpec::new(LossId::GDiceL), &channels).unwrap();
    assert!((w - m).abs() > 0.1, "GDICE_W {w} vs GDICE_M {m}");
    assert!(m < 1e-4, "masked variant ignores the empty channel: {m}");
    assert!(w.is_finite() && l.is_finite());
}

#[test]
fn evaluation_is_deterministic() {
    let mut rng = rng(28);
    let p = soft(&mut rng, [8, 8, 4]);
    let g = random_mask(&mut rng, [8, 8, 4], [1.0; 3], 0.3);
    let cases: Vec<LossCase> = (0..6)
        .map(|i| LossCase {
            key: segrate_core::table::CaseKey::new(format!("e{i}"), "m", "WT"),
            pred: p.clone(),
            reference: g.clone(),
        })
        .collect();
    let a = loss_response_matrix(&cases, &LossSpec::default_battery()).unwrap();
    let b = loss_response_matrix(&cases, &LossSpec::default_battery()).unwrap();
    for i in 0..a.table.n_rows() {
        for j in 0..a.table.n_cols() {
            assert_eq!(a.table.get(i, j).to_bits(), b.table.get(i, j).to_bits());
            assert_eq!(a.table.get(i, j).to_bits(), a.table.get(0, j).to_bits());
        }
    }
}

proptest! {
    #[test]
    fn losses_are_finite_and_bounded(
        p in proptest::collection::vec(0.0f64..=1.0, 24),
        g in proptest::collection::vec(any::<bool>(), 24),
    ) {
        let p = SoftPrediction::new([4, 3, 2], [1.0; 3], p).unwrap();
        let g = BinaryMask::new([4, 3, 2], [1.0; 3], g).unwrap();
        for spec in LossSpec::default_battery() {
            let v = evaluate_loss(&spec, &p, &g).unwrap();
            prop_assert!(v.is_finite(), "{} = {}", spec, v);
            prop_assert!(v >= -1e-12, "{} = {}", spec, v);
            if matches!(spec.id, LossId::Dice | LossId::SoftDice | LossId::Iou | LossId::Jaccard
                | LossId::Tversky | LossId::Asym | LossId::GDiceL | LossId::GDiceW | LossId::GDiceM
                | LossId::SensitivitySpecificity) {
                prop_assert!(v <= 1.0 + 1e-12, "{} = {}", spec, v);
            }
        }
    }
}
