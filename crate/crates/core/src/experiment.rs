//! Rating-experiment manifests: the private on-disk form with the blinding
//! map, the blinded view served to participants, and per-participant order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratings::View;
use crate::seed::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest has no trials")]
    NoTrials,
    #[error("duplicate trial id '{0}'")]
    DuplicateTrial(String),
    #[error("trial '{trial}' uses token '{token}' which has no blinding entry")]
    UnknownToken { trial: String, token: String },
    #[error("token '{token}' reveals condition '{condition}'")]
    RevealingToken { token: String, condition: String },
    #[error("invalid stimulus reference '{0}'")]
    InvalidRef(String),
    #[error("missing stimulus files: {}", .0.join(", "))]
    MissingStimuli(Vec<String>),
    #[error("survey item '{0}' defined twice")]
    DuplicateSurveyItem(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveyKind {
    Text,
    Number,
    Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub id: String,
    pub prompt: String,
    pub kind: SurveyKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveyPhase {
    Pre,
    Post,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveySchema {
    #[serde(default)]
    pub pre: Vec<SurveyItem>,
    #[serde(default)]
    pub post: Vec<SurveyItem>,
}

impl SurveySchema {
    pub fn items(&self, phase: SurveyPhase) -> &[SurveyItem] {
        match phase {
            SurveyPhase::Pre => &self.pre,
            SurveyPhase::Post => &self.post,
        }
    }

    /// Every item answered, no unknown ids, values of the declared kind.
    pub fn check_answers(
        &self,
        phase: SurveyPhase,
        answers: &BTreeMap<String, serde_json::Value>,
    ) -> std::result::Result<(), String> {
        let items = self.items(phase);
        for id in answers.keys() {
            if !items.iter().any(|i| &i.id == id) {
                return Err(format!("unknown survey item '{id}'"));
            }
        }
        for item in items {
            let v = answers.get(&item.id).ok_or_else(|| format!("missing answer for '{}'", item.id))?;
            let ok = match item.kind {
                SurveyKind::Text => v.is_string(),
                SurveyKind::Number => v.as_f64().is_some_and(f64::is_finite),
                SurveyKind::Choice => v.as_str().is_some_and(|s| item.options.iter().any(|o| o == s)),
            };
            if !ok {
                return Err(format!("invalid answer for '{}'", item.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRef {
    pub modality: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

/// One trial as served: the condition appears only as its blinded token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub exam: String,
    pub token: String,
    pub view: View,
    pub stimuli: Vec<StimulusRef>,
    pub overlay: String,
    #[serde(default)]
    pub attention_check: bool,
}

/// The operator's manifest, including the token → condition mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub experiment_id: String,
    #[serde(default)]
    pub consent_text: String,
    #[serde(default)]
    pub survey: SurveySchema,
    pub blinding: BTreeMap<String, String>,
    pub trials: Vec<Trial>,
}

/// What participants see. Built only through [`TrialManifest::blinded`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedManifest {
    pub experiment_id: String,
    pub consent_text: String,
    pub survey: SurveySchema,
    pub trials: Vec<Trial>,
}

fn valid_ref(r: &str) -> bool {
    !r.is_empty()
        && r != "."
        && r != ".."
        && r.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

impl TrialManifest {
    pub fn validate(&self) -> Result<()> {
        if self.trials.is_empty() {
            return Err(ExperimentError::NoTrials);
        }
        for (token, condition) in &self.blinding {
            if token.to_lowercase().contains(&condition.to_lowercase()) {
                return Err(ExperimentError::RevealingToken {
                    token: token.clone(),
                    condition: condition.clone(),
                });
            }
        }
        let mut ids = BTreeSet::new();
        for t in &self.trials {
            if !ids.insert(t.trial_id.as_str()) {
                return Err(ExperimentError::DuplicateTrial(t.trial_id.clone()));
            }
            if !self.blinding.contains_key(&t.token) {
                return Err(ExperimentError::UnknownToken {
                    trial: t.trial_id.clone(),
                    token: t.token.clone(),
                });
            }
            for r in t.stimuli.iter().map(|s| &s.reference).chain(std::iter::once(&t.overlay)) {
                if !valid_ref(r) {
                    return Err(ExperimentError::InvalidRef(r.clone()));
                }
            }
        }
        for phase in [SurveyPhase::Pre, SurveyPhase::Post] {
            let mut seen = BTreeSet::new();
            for item in self.survey.items(phase) {
                if !seen.insert(&item.id) {
                    return Err(ExperimentError::DuplicateSurveyItem(item.id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Every stimulus and overlay reference, deduplicated and sorted.
    pub fn references(&self) -> BTreeSet<&str> {
        self.trials
            .iter()
            .flat_map(|t| t.stimuli.iter().map(|s| s.reference.as_str()).chain(std::iter::once(t.overlay.as_str())))
            .collect()
    }

    pub fn trial(&self, id: &str) -> Option<&Trial> {
        self.trials.iter().find(|t| t.trial_id == id)
    }

    /// Condition name behind a trial's token.
    pub fn condition(&self, trial: &Trial) -> &str {
        &self.blinding[&trial.token]
    }

    pub fn blinded(&self) -> BlindedManifest {
        BlindedManifest {
            experiment_id: self.experiment_id.clone(),
            consent_text: self.consent_text.clone(),
            survey: self.survey.clone(),
            trials: self.trials.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// A validated manifest with its stimulus directory.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: TrialManifest,
    pub stimulus_dir: PathBuf,
}

impl LoadedManifest {
    pub fn stimulus_path(&self, reference: &str) -> Option<PathBuf> {
        self.manifest
            .references()
            .contains(reference)
            .then(|| self.stimulus_dir.join(reference))
    }
}

/// Directory holding the stimuli of a manifest at `path`.
pub fn stimulus_dir_for(path: &Path) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join("stimuli")
}

/// Parse and validate a manifest; stimuli are resolved in `stimuli/` next to it.
pub fn ingest_manifest(path: &Path) -> Result<LoadedManifest> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: TrialManifest = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    manifest.validate()?;
    let stimulus_dir = stimulus_dir_for(path);
    let missing: Vec<String> = manifest
        .references()
        .into_iter()
        .filter(|r| !stimulus_dir.join(r).is_file())
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingStimuli(missing));
    }
    Ok(LoadedManifest { manifest, stimulus_dir })
}

/// Seeded permutation of trial indices for one participant.
pub fn trial_order(seed: u64, experiment_id: &str, participant: &str, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, &format!("trial-order/{experiment_id}/{participant}")));
    order.shuffle(&mut rng);
    order
}

/// Tokens `cond-A`, `cond-B`, … assigned to the sorted conditions by a seeded shuffle.
pub fn blinding_tokens(seed: u64, experiment_id: &str, conditions: &[&str]) -> BTreeMap<String, String> {
    let mut sorted: Vec<&str> = conditions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = seeded_rng(derive_seed(seed, &format!("blinding/{experiment_id}")));
    sorted.shuffle(&mut rng);
    sorted
        .iter()
        .enumerate()
        .map(|(i, c)| (token_name(i), c.to_string()))
        .collect()
}

fn token_name(i: usize) -> String {
    let mut s = String::new();
    let mut k = i;
    loop {
        s.insert(0, (b'A' + (k % 26) as u8) as char);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    format!("cond-{s}")
}
