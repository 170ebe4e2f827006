use segrate_core::experiment::ingest_manifest;
use segrate_core::ratings::{bias_correct, condition_means, participant_bias};
use std::sync::OnceLock;

use segrate_core::replica::{generate_replica, write_replica, Replica, ReplicaConfig, EXP1_CONDITIONS};
use segrate_core::volume::{load_label_volume, VolumeFormat};

fn exp1() -> &'static Replica {
    static R: OnceLock<Replica> = OnceLock::new();
    R.get_or_init(|| generate_replica(&ReplicaConfig::default()))
}

#[test]
fn exp1_structure_has_300_trials() {
    let r = exp1();
    assert_eq!(r.exams.len(), 25);
    assert_eq!(r.manifest.trials.len(), 25 * 3 * 4);
    r.manifest.validate().unwrap();
    let attention = r.manifest.trials.iter().filter(|t| t.attention_check).count();
    assert_eq!(attention, 12);
    for p in &r.plan.participants {
        assert_eq!(p.responses.len(), 300);
        r.manifest.survey.check_answers(segrate_core::experiment::SurveyPhase::Pre, &p.pre_survey).unwrap();
        r.manifest.survey.check_answers(segrate_core::experiment::SurveyPhase::Post, &p.post_survey).unwrap();
    }
}

#[test]
fn planned_condition_means_hit_targets() {
    let r = exp1();
    let table = r.plan.to_table(&r.manifest);
    let raw = condition_means(&table);
    let corrected = condition_means(&bias_correct(&table).unwrap());
    for (cond, target, _) in EXP1_CONDITIONS {
        assert!((raw[cond] - target).abs() < 0.02, "{cond}: {} vs {target}", raw[cond]);
        assert!((corrected[cond] - target).abs() < 0.02, "{cond}: corrected {}", corrected[cond]);
    }
    let bias = participant_bias(&table).unwrap();
    assert!(bias.values().sum::<f64>().abs() < 1e-9);
    assert!(raw["simple"] > raw["zyx"] && raw["zyx"] > raw["reference"] && raw["reference"] > raw["rnd"]);
}

#[test]
fn attention_exam_is_rated_low() {
    let r = exp1();
    let table = r.plan.to_table(&r.manifest);
    let att: Vec<f64> =
        table.records().iter().filter(|x| x.attention_check).map(|x| f64::from(x.stars)).collect();
    let mean = att.iter().sum::<f64>() / att.len() as f64;
    assert!(mean < 2.5, "attention mean {mean}");
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let small = ReplicaConfig { exams: 3, raters: 4, dims: [24, 24, 16], ..Default::default() };
    let a = generate_replica(&small);
    let b = generate_replica(&small);
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.stimuli, b.stimuli);
    let c = generate_replica(&ReplicaConfig { seed: 7, ..small });
    assert_ne!(a.plan, c.plan);
}

#[test]
fn written_replica_ingests() {
    let config = ReplicaConfig { exams: 3, raters: 2, dims: [24, 24, 16], ..Default::default() };
    let r = generate_replica(&config);
    let dir = tempfile::tempdir().unwrap();
    write_replica(&r, dir.path()).unwrap();
    let loaded = ingest_manifest(&dir.path().join("experiment/manifest.json")).unwrap();
    assert_eq!(loaded.manifest, r.manifest);
    let cases = std::fs::read_to_string(dir.path().join("cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 1 + 4 * 4);
    assert!(cases.starts_with("exam,method,prediction,reference\n"));
    let row: Vec<&str> = cases.lines().nth(2).unwrap().split(',').collect();
    let vol = load_label_volume(&dir.path().join(row[2]), VolumeFormat::Nifti1).unwrap();
    let expected = &r.exams[0].predictions[1].1;
    assert_eq!(vol.data(), expected.data());
    assert_eq!(vol.dims(), expected.dims());
    assert_eq!(vol.spacing(), expected.spacing());
}
