//! Synthetic four-condition rating experiment: BraTS-like label
//! volumes with four segmentation conditions per exam, the rating manifest
//! with rendered stimuli, and a rating plan whose per-condition means hit
//! configured targets.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use image::{Rgba, RgbaImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::experiment::{
    blinding_tokens, StimulusRef, SurveyItem, SurveyKind, SurveySchema, Trial, TrialManifest,
};
use crate::ratings::{RatingRecord, RatingTable, View};
use crate::seed::{derive_seed, seeded_rng};
use crate::volume::{
    brats_channels, center_of_mass_slice, save_label_volume, Axis, BratsLegend, LabelVolume, VolumeFormat,
    TUMOR_CORE,
};

/// Condition name, target mean stars, perturbation severity.
pub const EXP1_CONDITIONS: [(&str, f64, f64); 4] = [
    ("reference", 4.47, 0.0),
    ("simple", 4.79, 0.25),
    ("zyx", 4.71, 0.3),
    ("rnd", 4.04, 0.9),
];

pub const MODALITIES: [&str; 4] = ["T1", "T1c", "T2", "FLAIR"];

const NECROSIS: i32 = 1;
const EDEMA: i32 = 2;
const ENHANCING: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaConfig {
    pub seed: u64,
    pub experiment_id: String,
    /// Regular exams; the attention-check exam comes on top.
    pub exams: usize,
    pub attention_exam: bool,
    pub raters: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// (condition, target mean stars, severity)
    pub conditions: Vec<(String, f64, f64)>,
    /// Pixels per mm in rendered stimuli.
    pub pixels_per_mm: f64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        ReplicaConfig {
            seed: 42,
            experiment_id: "exp1-replica".into(),
            exams: 24,
            attention_exam: true,
            raters: 15,
            dims: [40, 40, 28],
            spacing: [1.0, 1.0, 1.5],
            conditions: EXP1_CONDITIONS.iter().map(|(c, m, s)| (c.to_string(), *m, *s)).collect(),
            pixels_per_mm: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedResponse {
    pub trial_id: String,
    pub stars: u8,
    pub reaction_time_ms: f64,
    pub toggle_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedParticipant {
    pub id: String,
    pub pre_survey: BTreeMap<String, serde_json::Value>,
    pub post_survey: BTreeMap<String, serde_json::Value>,
    pub responses: Vec<PlannedResponse>,
}

/// What each simulated rater will answer, keyed by opaque trial id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPlan {
    pub experiment_id: String,
    pub participants: Vec<PlannedParticipant>,
}

#[derive(Debug, Clone)]
pub struct ReplicaExam {
    pub id: String,
    pub attention_check: bool,
    pub reference: LabelVolume,
    /// Condition → label volume. The reference condition is the reference itself.
    pub predictions: Vec<(String, LabelVolume)>,
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub config: ReplicaConfig,
    pub exams: Vec<ReplicaExam>,
    pub manifest: TrialManifest,
    pub stimuli: BTreeMap<String, RgbaImage>,
    pub plan: RatingPlan,
}

#[derive(Debug, Clone, Copy)]
struct Tumor {
    center: [f64; 3],
    radii: [f64; 3],
    core_offset: [f64; 3],
    core_scale: f64,
    necrosis_scale: f64,
    phase: [f64; 4],
    amplitude: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl Tumor {
    fn random(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let extent = [0, 1, 2].map(|a| dims[a] as f64 * spacing[a]);
        Tumor {
            center: [0, 1, 2].map(|a| extent[a] * rng.random_range(0.4..0.6)),
            radii: [rng.random_range(8.0..11.0), rng.random_range(8.0..11.0), rng.random_range(7.0..10.0)],
            core_offset: [0, 1, 2].map(|_| rng.random_range(-1.5..1.5)),
            core_scale: rng.random_range(0.45..0.65),
            necrosis_scale: rng.random_range(0.2..0.35),
            phase: [0, 1, 2, 3].map(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            amplitude: rng.random_range(0.08..0.2),
        }
    }

    fn perturbed(&self, rng: &mut ChaCha8Rng, s: f64) -> Self {
        let mut t = *self;
        for a in 0..3 {
            t.center[a] += s * 1.5 * normal(rng);
            t.radii[a] *= (1.0 + s * 0.15 * normal(rng)).max(0.3);
            t.core_offset[a] += s * normal(rng);
        }
        t.core_scale = (t.core_scale * (1.0 + s * 0.1 * normal(rng))).clamp(0.2, 0.9);
        t.necrosis_scale = (t.necrosis_scale * (1.0 + s * 0.15 * normal(rng))).clamp(0.05, t.core_scale * 0.9);
        for p in &mut t.phase {
            *p += s * 0.8 * normal(rng);
        }
        t
    }

    fn render(&self, dims: [usize; 3], spacing: [f64; 3]) -> Vec<i32> {
        let [nx, ny, nz] = dims;
        let mut out = vec![0; nx * ny * nz];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
                    let d = [0, 1, 2].map(|a| p[a] - self.center[a]);
                    let theta = d[1].atan2(d[0]);
                    let phi = d[2].atan2(d[0].hypot(d[1]));
                    let bump = 1.0
                        + self.amplitude
                            * ((2.0 * theta + self.phase[0]).sin() * (phi + self.phase[1]).cos()
                                + 0.5 * (3.0 * theta + self.phase[2]).sin());
                    let rho = |off: [f64; 3], scale: f64| {
                        (0..3)
                            .map(|a| ((d[a] - off[a]) / (self.radii[a] * scale)).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    };
                    let core_bump = 1.0 + 0.8 * self.amplitude * (2.0 * theta + self.phase[3]).sin();
                    let label = if rho(self.core_offset, self.necrosis_scale * core_bump) < 1.0 {
                        NECROSIS
                    } else if rho(self.core_offset, self.core_scale * core_bump) < 1.0 {
                        ENHANCING
                    } else if rho([0.0; 3], bump) < 1.0 {
                        EDEMA
                    } else {
                        0
                    };
                    out[x + nx * (y + ny * z)] = label;
                }
            }
        }
        out
    }
}

fn labelled(dims: [usize; 3], spacing: [f64; 3], data: Vec<i32>) -> LabelVolume {
    LabelVolume::new(dims, spacing, data, BratsLegend::default().legend_map()).expect("replica volume is valid")
}

/// Flip `count` voxels near the tumor to random tumor labels.
fn speckle(data: &mut [i32], dims: [usize; 3], rng: &mut ChaCha8Rng, count: usize) {
    let tumor: Vec<usize> = (0..data.len()).filter(|i| data[*i] != 0).collect();
    if tumor.is_empty() {
        return;
    }
    let [nx, ny, nz] = dims;
    for _ in 0..count {
        let i = tumor[rng.random_range(0..tumor.len())];
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let jitter = |v: usize, n: usize, r: &mut ChaCha8Rng| (v as i64 + r.random_range(-3..=3)).clamp(0, n as i64 - 1) as usize;
        let j = jitter(x, nx, rng) + nx * (jitter(y, ny, rng) + ny * jitter(z, nz, rng));
        data[j] = [NECROSIS, EDEMA, ENHANCING, 0][rng.random_range(0..4)];
    }
}

/// Mirror along x and roll along y by a quarter of the grid.
fn scramble(data: &[i32], dims: [usize; 3]) -> Vec<i32> {
    let [nx, ny, nz] = dims;
    let mut out = vec![0; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let src = (nx - 1 - x) + nx * (((y + ny / 4) % ny) + ny * z);
                out[x + nx * (y + ny * z)] = data[src];
            }
        }
    }
    out
}

fn whole_tumor_dice(a: &[i32], b: &[i32]) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (*x != 0, *y != 0);
        inter += (p && q) as usize;
        na += p as usize;
        nb += q as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

fn view_axis(view: View) -> Axis {
    match view {
        View::Axial | View::Single => Axis::Axial,
        View::Coronal => Axis::Coronal,
        View::Sagittal => Axis::Sagittal,
    }
}

/// In-plane axes (columns, rows) of a slice perpendicular to `axis`.
fn plane_axes(axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Axial => (0, 1),
        Axis::Coronal => (0, 2),
        Axis::Sagittal => (1, 2),
    }
}

struct SliceGeometry {
    axis: Axis,
    index: usize,
    dims: [usize; 3],
    spacing: [f64; 3],
    px_per_mm: f64,
}

impl SliceGeometry {
    fn size(&self) -> (u32, u32, usize, usize) {
        let (c, r) = plane_axes(self.axis);
        let sc = (self.px_per_mm * self.spacing[c]).round().max(1.0) as usize;
        let sr = (self.px_per_mm * self.spacing[r]).round().max(1.0) as usize;
        ((self.dims[c] * sc) as u32, (self.dims[r] * sr) as u32, sc, sr)
    }

    /// Voxel index behind pixel (px, py); rows run top to bottom, so the
    /// superior end of coronal and sagittal slices is at the top.
    fn voxel(&self, px: u32, py: u32) -> usize {
        let (c, r) = plane_axes(self.axis);
        let (_, h, sc, sr) = self.size();
        let mut p = [0usize; 3];
        p[self.axis.index()] = self.index;
        p[c] = px as usize / sc;
        let row = (h - 1 - py) as usize / sr;
        p[r] = if self.axis == Axis::Axial { self.dims[r] - 1 - row } else { row };
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    fn render(&self, f: impl Fn(usize) -> Rgba<u8>) -> RgbaImage {
        let (w, h, _, _) = self.size();
        RgbaImage::from_fn(w, h, |x, y| f(self.voxel(x, y)))
    }
}

/// Tissue intensities per modality for background brain, edema, necrosis, enhancing tumor.
fn intensity(modality: usize, label: i32) -> f64 {
    const TABLE: [[f64; 4]; 4] = [
        [0.55, 0.45, 0.30, 0.50],
        [0.55, 0.45, 0.30, 0.95],
        [0.45, 0.85, 0.95, 0.70],
        [0.40, 0.90, 0.50, 0.70],
    ];
    let k = match label {
        EDEMA => 1,
        NECROSIS => 2,
        ENHANCING => 3,
        _ => 0,
    };
    TABLE[modality][k]
}

/// Okabe-Ito colours with a semi-opaque alpha.
pub fn overlay_color(label: i32) -> Rgba<u8> {
    match label {
        NECROSIS => Rgba([0x00, 0x72, 0xB2, 150]),
        EDEMA => Rgba([0x00, 0x9E, 0x73, 150]),
        ENHANCING => Rgba([0xF0, 0xE4, 0x42, 150]),
        _ => Rgba([0, 0, 0, 0]),
    }
}

fn survey_schema() -> SurveySchema {
    let item = |id: &str, prompt: &str, kind: SurveyKind, options: &[&str]| SurveyItem {
        id: id.into(),
        prompt: prompt.into(),
        kind,
        options: options.iter().map(|s| s.to_string()).collect(),
    };
    SurveySchema {
        pre: vec![
            item("age", "Age in years", SurveyKind::Number, &[]),
            item("gender", "Gender", SurveyKind::Choice, &["female", "male", "diverse", "undisclosed"]),
            item("experience_years", "Years of experience as a radiologist", SurveyKind::Number, &[]),
            item("institution", "Institution", SurveyKind::Text, &[]),
        ],
        post: vec![
            item("difficulty", "How difficult was the rating task?", SurveyKind::Choice, &["easy", "medium", "hard"]),
            item("comments", "Comments", SurveyKind::Text, &[]),
        ],
    }
}

/// Target-hitting adjustment: move single ratings by one star, largest
/// rounding residual first, until the integer sum equals `target`.
fn adjust_sum(stars: &mut [u8], latent: &[f64], target: i64) {
    let mut sum: i64 = stars.iter().map(|s| i64::from(*s)).sum();
    while sum != target {
        let up = sum < target;
        let pick = (0..stars.len())
            .filter(|i| if up { stars[*i] < 6 } else { stars[*i] > 1 })
            .max_by(|a, b| {
                let ra = latent[*a] - f64::from(stars[*a]);
                let rb = latent[*b] - f64::from(stars[*b]);
                let (ra, rb) = if up { (ra, rb) } else { (-ra, -rb) };
                ra.total_cmp(&rb).then(b.cmp(a))
            });
        let Some(i) = pick else { break };
        if up {
            stars[i] += 1;
            sum += 1;
        } else {
            stars[i] -= 1;
            sum -= 1;
        }
    }
}

pub fn generate_replica(config: &ReplicaConfig) -> Replica {
    let (dims, spacing) = (config.dims, config.spacing);
    let n_exams = config.exams + usize::from(config.attention_exam);
    let mut exams = Vec::with_capacity(n_exams);
    // Whole-tumor Dice per (exam, condition) drives rating quality.
    let mut quality: Vec<Vec<f64>> = Vec::new();
    for e in 0..n_exams {
        let id = format!("exam{:02}", e + 1);
        let attention = e == config.exams;
        let mut rng = seeded_rng(derive_seed(config.seed, &format!("replica/exam/{id}")));
        let tumor = Tumor::random(&mut rng, dims, spacing);
        let reference = tumor.render(dims, spacing);
        let mut preds = Vec::new();
        let mut q = Vec::new();
        for (cond, _, severity) in &config.conditions {
            let mut prng = seeded_rng(derive_seed(config.seed, &format!("replica/pred/{id}/{cond}")));
            let mut data = if *severity == 0.0 && !attention {
                reference.clone()
            } else {
                let s = severity * (0.4 * normal(&mut prng)).exp();
                let mut d = tumor.perturbed(&mut prng, s).render(dims, spacing);
                speckle(&mut d, dims, &mut prng, (s * 30.0).round() as usize);
                d
            };
            if attention {
                data = scramble(&data, dims);
            }
            q.push(whole_tumor_dice(&data, &reference));
            preds.push((cond.clone(), labelled(dims, spacing, data)));
        }
        quality.push(q);
        exams.push(ReplicaExam {
            id,
            attention_check: attention,
            reference: labelled(dims, spacing, reference),
            predictions: preds,
        });
    }

    let conditions: Vec<&str> = config.conditions.iter().map(|(c, _, _)| c.as_str()).collect();
    let blinding = blinding_tokens(config.seed, &config.experiment_id, &conditions);
    let token_of: BTreeMap<&str, &str> = blinding.iter().map(|(t, c)| (c.as_str(), t.as_str())).collect();

    // Canonical trial list in a seeded order so ids carry no condition pattern.
    let views = [View::Axial, View::Coronal, View::Sagittal];
    let n_cond = conditions.len();
    let mut slots: Vec<(usize, View, usize)> = (0..n_exams)
        .flat_map(|e| views.iter().flat_map(move |v| (0..n_cond).map(move |c| (e, *v, c))))
        .collect();
    slots.shuffle(&mut seeded_rng(derive_seed(config.seed, "replica/trial-ids")));

    let legend = BratsLegend::default();
    let mut stimuli = BTreeMap::new();
    let mut trials = Vec::with_capacity(slots.len());
    for (k, (e, view, c)) in slots.iter().enumerate() {
        let exam = &exams[*e];
        let token = token_of[conditions[*c]];
        let axis = view_axis(*view);
        let tc = brats_channels(&exam.reference, &legend);
        let index = center_of_mass_slice(tc.get(TUMOR_CORE).expect("tumor core channel"), axis)
            .unwrap_or(dims[axis.index()] / 2);
        let geom = SliceGeometry { axis, index, dims, spacing, px_per_mm: config.pixels_per_mm };
        let base = format!("{}_{}", exam.id, view.as_str());
        let mut refs = Vec::new();
        for (m, modality) in MODALITIES.iter().enumerate() {
            let name = format!("{base}_{}.png", modality.to_lowercase());
            stimuli.entry(name.clone()).or_insert_with(|| {
                let mut nrng = seeded_rng(derive_seed(config.seed, &format!("replica/noise/{base}/{modality}")));
                let noise: Vec<f64> = (0..exam.reference.len()).map(|_| 0.03 * normal(&mut nrng)).collect();
                let data = exam.reference.data();
                geom.render(|i| {
                    let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
                    let inside = (0..3)
                        .map(|a| {
                            let half = dims[a] as f64 / 2.0;
                            ((p[a] as f64 + 0.5 - half) / (0.95 * half)).powi(2)
                        })
                        .sum::<f64>()
                        < 1.0;
                    let v = if inside { (intensity(m, data[i]) + noise[i]).clamp(0.0, 1.0) } else { 0.0 };
                    let g = (v * 255.0).round() as u8;
                    Rgba([g, g, g, 255])
                })
            });
            refs.push(StimulusRef { modality: modality.to_string(), reference: name });
        }
        let overlay = format!("{base}_{token}.png");
        stimuli.entry(overlay.clone()).or_insert_with(|| {
            let data = exam.predictions[*c].1.data();
            geom.render(|i| overlay_color(data[i]))
        });
        trials.push(Trial {
            trial_id: format!("t{:03}", k + 1),
            exam: exam.id.clone(),
            token: token.to_string(),
            view: *view,
            stimuli: refs,
            overlay,
            attention_check: exam.attention_check,
        });
    }

    let manifest = TrialManifest {
        experiment_id: config.experiment_id.clone(),
        consent_text: "I agree to take part in this segmentation rating study. My ratings are stored \
                       pseudonymously and used for research only."
            .into(),
        survey: survey_schema(),
        blinding,
        trials,
    };
    let plan = plan_ratings(config, &manifest, &quality);
    Replica { config: config.clone(), exams, manifest, stimuli, plan }
}

fn plan_ratings(config: &ReplicaConfig, manifest: &TrialManifest, quality: &[Vec<f64>]) -> RatingPlan {
    let mut rng = seeded_rng(derive_seed(config.seed, "replica/ratings"));
    let cond_index: BTreeMap<&str, usize> =
        config.conditions.iter().enumerate().map(|(i, (c, _, _))| (c.as_str(), i)).collect();
    let exam_index = |exam: &str| exam.trim_start_matches("exam").parse::<usize>().expect("replica exam id") - 1;
    let regular = config.exams;
    let mean_q: Vec<f64> = (0..config.conditions.len())
        .map(|c| (0..regular).map(|e| quality[e][c]).sum::<f64>() / regular.max(1) as f64)
        .collect();
    let exam_effect: Vec<f64> = (0..quality.len()).map(|_| 0.3 * normal(&mut rng)).collect();
    let bias: Vec<f64> = (0..config.raters).map(|_| 0.35 * normal(&mut rng)).collect();
    let view_effect = |v: View| match v {
        View::Coronal => -0.05,
        View::Sagittal => 0.05,
        _ => 0.0,
    };
    let noise = Normal::new(0.0, 0.6).expect("valid sd");
    let rt = LogNormal::new(3500f64.ln(), 0.4).expect("valid sd");

    let n_trials = manifest.trials.len();
    let mut latent = vec![vec![0.0; n_trials]; config.raters];
    let mut stars = vec![vec![0u8; n_trials]; config.raters];
    for p in 0..config.raters {
        for (t, trial) in manifest.trials.iter().enumerate() {
            let e = exam_index(&trial.exam);
            let c = cond_index[manifest.condition(trial)];
            let l = if trial.attention_check {
                1.5 + 0.5 * normal(&mut rng)
            } else {
                config.conditions[c].1
                    + 3.0 * (quality[e][c] - mean_q[c])
                    + exam_effect[e]
                    + view_effect(trial.view)
                    + bias[p]
                    + noise.sample(&mut rng)
            };
            latent[p][t] = l;
            stars[p][t] = l.round().clamp(1.0, 6.0) as u8;
        }
    }
    for (c, (_, target, _)) in config.conditions.iter().enumerate() {
        let cells: Vec<(usize, usize)> = (0..config.raters)
            .flat_map(|p| (0..n_trials).map(move |t| (p, t)))
            .filter(|(_, t)| {
                let trial = &manifest.trials[*t];
                !trial.attention_check && cond_index[manifest.condition(trial)] == c
            })
            .collect();
        let mut s: Vec<u8> = cells.iter().map(|(p, t)| stars[*p][*t]).collect();
        let l: Vec<f64> = cells.iter().map(|(p, t)| latent[*p][*t]).collect();
        adjust_sum(&mut s, &l, (target * cells.len() as f64).round() as i64);
        for ((p, t), v) in cells.iter().zip(s) {
            stars[*p][*t] = v;
        }
    }

    let n_female = ((config.raters as f64) * 2.0 / 15.0).round() as usize;
    let mut genders: Vec<&str> = (0..config.raters).map(|i| if i < n_female { "female" } else { "male" }).collect();
    genders.shuffle(&mut rng);
    let participants = (0..config.raters)
        .map(|p| {
            let age = (37.7 + 4.8 * normal(&mut rng)).round().max(25.0);
            let experience = (10.0 + 5.1 * normal(&mut rng)).round().clamp(1.0, age - 24.0);
            let pre_survey = BTreeMap::from([
                ("age".to_string(), serde_json::json!(age)),
                ("gender".to_string(), serde_json::json!(genders[p])),
                ("experience_years".to_string(), serde_json::json!(experience)),
                ("institution".to_string(), serde_json::json!(format!("site-{}", p % 6 + 1))),
            ]);
            let post_survey = BTreeMap::from([
                ("difficulty".to_string(), serde_json::json!(["easy", "medium", "hard"][rng.random_range(0..3)])),
                ("comments".to_string(), serde_json::json!("")),
            ]);
            let responses = manifest
                .trials
                .iter()
                .enumerate()
                .map(|(t, trial)| PlannedResponse {
                    trial_id: trial.trial_id.clone(),
                    stars: stars[p][t],
                    reaction_time_ms: rt.sample(&mut rng).round(),
                    toggle_count: (-(1.0 - rng.random::<f64>()).ln() / 1.2).floor().min(5.0) as u32,
                })
                .collect();
            PlannedParticipant { id: format!("rater{:02}", p + 1), pre_survey, post_survey, responses }
        })
        .collect();
    RatingPlan { experiment_id: config.experiment_id.clone(), participants }
}

impl RatingPlan {
    /// The ratings the plan describes, de-blinded through `manifest`.
    pub fn to_table(&self, manifest: &TrialManifest) -> RatingTable {
        let records = self
            .participants
            .iter()
            .flat_map(|p| {
                p.responses.iter().map(move |r| {
                    let trial = manifest.trial(&r.trial_id).expect("plan trial in manifest");
                    RatingRecord {
                        participant: p.id.clone(),
                        exam: trial.exam.clone(),
                        method: manifest.condition(trial).to_string(),
                        view: trial.view,
                        stars: r.stars,
                        reaction_time_ms: r.reaction_time_ms,
                        toggle_count: r.toggle_count,
                        timestamp: String::new(),
                        attention_check: trial.attention_check,
                        trial_id: Some(r.trial_id.clone()),
                        server_timestamp: None,
                        corrected: None,
                    }
                })
            })
            .collect();
        RatingTable::new(records).expect("plan has unique valid ratings")
    }

    pub fn participant(&self, id: &str) -> Option<&PlannedParticipant> {
        self.participants.iter().find(|p| p.id == id)
    }
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::other(e.to_string())
}

/// Write volumes, `cases.csv`, and `experiment/{manifest.json, plan.json, stimuli/}` under `dir`.
pub fn write_replica(replica: &Replica, dir: &Path) -> io::Result<()> {
    let vol_dir = dir.join("volumes");
    std::fs::create_dir_all(&vol_dir)?;
    let mut cases = csv::Writer::from_path(dir.join("cases.csv")).map_err(io_err)?;
    cases.write_record(["exam", "method", "prediction", "reference"]).map_err(io_err)?;
    for exam in &replica.exams {
        let reference = format!("volumes/{}_reference_labels.nii", exam.id);
        save_label_volume(&exam.reference, &dir.join(&reference), VolumeFormat::Nifti1).map_err(io_err)?;
        for (cond, vol) in &exam.predictions {
            let pred = format!("volumes/{}_{cond}.nii", exam.id);
            save_label_volume(vol, &dir.join(&pred), VolumeFormat::Nifti1).map_err(io_err)?;
            cases.write_record([exam.id.as_str(), cond, &pred, &reference]).map_err(io_err)?;
        }
    }
    cases.flush()?;

    let exp_dir = dir.join("experiment");
    let stim_dir = exp_dir.join("stimuli");
    std::fs::create_dir_all(&stim_dir)?;
    std::fs::write(exp_dir.join("manifest.json"), replica.manifest.to_json())?;
    let plan = serde_json::to_string_pretty(&replica.plan).map_err(io_err)? + "\n";
    std::fs::write(exp_dir.join("plan.json"), plan)?;
    for (name, img) in &replica.stimuli {
        img.save(stim_dir.join(name)).map_err(io_err)?;
    }
    Ok(())
}
