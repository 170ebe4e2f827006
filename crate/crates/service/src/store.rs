//! Per-experiment append-only event log.
//!
//! Every accepted session, response and survey is one JSON line, fsynced
//! before the caller is acknowledged. The in-memory index is rebuilt by
//! replaying the log and published as an immutable snapshot after each
//! append, so readers never take a lock.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use segrate_core::experiment::{trial_order, LoadedManifest, SurveyPhase, Trial};
use segrate_core::ratings::RatingRecord;

use crate::clock::{format_timestamp, Clock};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt log entry: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("no session for participant '{0}'")]
    NoSession(String),
    #[error("unknown trial '{0}'")]
    UnknownTrial(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// A stored rating as submitted by the client plus the server receipt time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub participant: String,
    pub trial_id: String,
    pub stars: u8,
    pub reaction_time_ms: f64,
    pub toggle_count: u32,
    pub client_timestamp: String,
    pub server_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseInput {
    pub trial_id: String,
    pub stars: u8,
    pub reaction_time_ms: f64,
    #[serde(default)]
    pub toggle_count: u32,
    #[serde(default)]
    pub client_timestamp: String,
}

impl ResponseEnvelope {
    fn same_submission(&self, input: &ResponseInput) -> bool {
        self.stars == input.stars
            && self.reaction_time_ms == input.reaction_time_ms
            && self.toggle_count == input.toggle_count
            && self.client_timestamp == input.client_timestamp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub participant: String,
    pub phase: SurveyPhase,
    pub answers: BTreeMap<String, Value>,
    pub server_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Session { participant: String, token: String, server_timestamp: String },
    Response(ResponseEnvelope),
    Survey(SurveyRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantState {
    pub token: String,
    pub responses: BTreeMap<String, ResponseEnvelope>,
    pub surveys: BTreeMap<SurveyPhase, SurveyRecord>,
}

/// Immutable view of everything recorded so far.
#[derive(Debug, Clone, Default)]
pub struct Index {
    participants: BTreeMap<String, Arc<ParticipantState>>,
    tokens: HashMap<String, String>,
}

impl Index {
    pub fn participant(&self, id: &str) -> Option<&ParticipantState> {
        self.participants.get(id).map(Arc::as_ref)
    }

    pub fn participant_for_token(&self, token: &str) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    pub fn participants(&self) -> impl Iterator<Item = (&str, &ParticipantState)> {
        self.participants.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn response_count(&self) -> usize {
        self.participants.values().map(|p| p.responses.len()).sum()
    }

    fn apply(&mut self, event: Event) -> std::result::Result<(), String> {
        match event {
            Event::Session { participant, token, .. } => {
                if self.participants.contains_key(&participant) {
                    return Err(format!("second session for '{participant}'"));
                }
                self.tokens.insert(token.clone(), participant.clone());
                let state = ParticipantState { token, responses: BTreeMap::new(), surveys: BTreeMap::new() };
                self.participants.insert(participant, Arc::new(state));
            }
            Event::Response(r) => {
                let state = self.state_mut(&r.participant)?;
                if state.responses.contains_key(&r.trial_id) {
                    return Err(format!("second response to '{}' by '{}'", r.trial_id, r.participant));
                }
                state.responses.insert(r.trial_id.clone(), r);
            }
            Event::Survey(s) => {
                let state = self.state_mut(&s.participant)?;
                if state.surveys.contains_key(&s.phase) {
                    return Err(format!("second survey by '{}'", s.participant));
                }
                state.surveys.insert(s.phase, s);
            }
        }
        Ok(())
    }

    fn state_mut(&mut self, participant: &str) -> std::result::Result<&mut ParticipantState, String> {
        self.participants
            .get_mut(participant)
            .map(Arc::make_mut)
            .ok_or_else(|| format!("event for participant '{participant}' without session"))
    }
}

/// Outcome of a write that may repeat an earlier one.
#[derive(Debug, Clone, PartialEq)]
pub enum Recorded<T> {
    New(T),
    /// Identical resubmission; carries the original record.
    Duplicate(T),
    /// Different content for an already answered slot; carries the original.
    Conflict(T),
}

impl<T> Recorded<T> {
    pub fn record(&self) -> &T {
        match self {
            Recorded::New(t) | Recorded::Duplicate(t) | Recorded::Conflict(t) => t,
        }
    }
}

pub struct ExperimentStore {
    loaded: LoadedManifest,
    positions: HashMap<String, usize>,
    seed: u64,
    clock: Arc<dyn Clock>,
    snapshot: ArcSwap<Index>,
    log: Mutex<File>,
    path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl ExperimentStore {
    /// Open (or create) the log at `path` and replay it. A torn final line
    /// left by a crash mid-append is cut off; any other bad line is an error.
    pub fn open(loaded: LoadedManifest, path: &Path, seed: u64, clock: Arc<dyn Clock>) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(path)(e)),
        };
        let positions: HashMap<String, usize> = loaded
            .manifest
            .trials
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trial_id.clone(), i))
            .collect();
        let (index, keep) = replay(&bytes, &positions, path)?;
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        if keep < bytes.len() {
            log::warn!("{}: dropping torn final entry ({} bytes)", path.display(), bytes.len() - keep);
            file.set_len(keep as u64).map_err(io_err(path))?;
        } else if keep > 0 && bytes[keep - 1] != b'\n' {
            file.write_all(b"\n").map_err(io_err(path))?;
        }
        file.sync_data().map_err(io_err(path))?;
        Ok(ExperimentStore {
            loaded,
            positions,
            seed,
            clock,
            snapshot: ArcSwap::from_pointee(index),
            log: Mutex::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn manifest(&self) -> &LoadedManifest {
        &self.loaded
    }

    pub fn experiment_id(&self) -> &str {
        &self.loaded.manifest.experiment_id
    }

    pub fn log_path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Index> {
        self.snapshot.load_full()
    }

    /// Runs `f` on the current index while holding the append lock. An
    /// event it returns is written and fsynced before the new index is
    /// published and before this returns.
    fn exclusive<T>(&self, f: impl FnOnce(&Index) -> Result<(T, Option<Event>)>) -> Result<T> {
        let mut file = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let index = self.snapshot.load_full();
        let (out, event) = f(&index)?;
        if let Some(event) = event {
            let mut line = serde_json::to_vec(&event).expect("events serialize");
            line.push(b'\n');
            let mut next = Index::clone(&index);
            next.apply(event).map_err(StoreError::Invalid)?;
            file.write_all(&line).map_err(io_err(&self.path))?;
            file.sync_data().map_err(io_err(&self.path))?;
            self.snapshot.store(Arc::new(next));
        }
        Ok(out)
    }

    /// Token for `participant`, creating the session on first call.
    pub fn open_session(&self, participant: &str) -> Result<(String, bool)> {
        if participant.trim().is_empty() || participant.len() > 128 {
            return Err(StoreError::Invalid("participant id must be 1..128 characters".into()));
        }
        self.exclusive(|index| {
            if let Some(p) = index.participant(participant) {
                return Ok(((p.token.clone(), false), None));
            }
            let token = uuid::Uuid::new_v4().simple().to_string();
            let event = Event::Session {
                participant: participant.to_string(),
                token: token.clone(),
                server_timestamp: format_timestamp(self.clock.now()),
            };
            Ok(((token, true), Some(event)))
        })
    }

    pub fn record_response(&self, participant: &str, input: ResponseInput) -> Result<Recorded<ResponseEnvelope>> {
        if !(1..=6).contains(&input.stars) {
            return Err(StoreError::Invalid(format!("stars must be 1..6, got {}", input.stars)));
        }
        if !(input.reaction_time_ms.is_finite() && input.reaction_time_ms >= 0.0) {
            return Err(StoreError::Invalid("reaction_time_ms must be a finite non-negative number".into()));
        }
        if !self.positions.contains_key(&input.trial_id) {
            return Err(StoreError::UnknownTrial(input.trial_id));
        }
        self.exclusive(|index| {
            let state = index.participant(participant).ok_or_else(|| StoreError::NoSession(participant.into()))?;
            if let Some(prev) = state.responses.get(&input.trial_id) {
                let out = if prev.same_submission(&input) {
                    Recorded::Duplicate(prev.clone())
                } else {
                    Recorded::Conflict(prev.clone())
                };
                return Ok((out, None));
            }
            let envelope = ResponseEnvelope {
                participant: participant.to_string(),
                trial_id: input.trial_id,
                stars: input.stars,
                reaction_time_ms: input.reaction_time_ms,
                toggle_count: input.toggle_count,
                client_timestamp: input.client_timestamp,
                server_timestamp: format_timestamp(self.clock.now()),
            };
            Ok((Recorded::New(envelope.clone()), Some(Event::Response(envelope))))
        })
    }

    pub fn record_survey(
        &self,
        participant: &str,
        phase: SurveyPhase,
        answers: BTreeMap<String, Value>,
    ) -> Result<Recorded<SurveyRecord>> {
        self.loaded.manifest.survey.check_answers(phase, &answers).map_err(StoreError::Invalid)?;
        self.exclusive(|index| {
            let state = index.participant(participant).ok_or_else(|| StoreError::NoSession(participant.into()))?;
            if let Some(prev) = state.surveys.get(&phase) {
                let out = if prev.answers == answers {
                    Recorded::Duplicate(prev.clone())
                } else {
                    Recorded::Conflict(prev.clone())
                };
                return Ok((out, None));
            }
            let record = SurveyRecord {
                participant: participant.to_string(),
                phase,
                answers,
                server_timestamp: format_timestamp(self.clock.now()),
            };
            Ok((Recorded::New(record.clone()), Some(Event::Survey(record))))
        })
    }

    /// This participant's trials in their seeded presentation order.
    pub fn trials_for(&self, participant: &str) -> Vec<&Trial> {
        let trials = &self.loaded.manifest.trials;
        trial_order(self.seed, self.experiment_id(), participant, trials.len())
            .into_iter()
            .map(|i| &trials[i])
            .collect()
    }

    /// First trial in presentation order without a stored response.
    pub fn next_trial(&self, index: &Index, participant: &str) -> Option<String> {
        let answered = index.participant(participant).map(|p| &p.responses);
        self.trials_for(participant)
            .into_iter()
            .find(|t| answered.is_none_or(|a| !a.contains_key(&t.trial_id)))
            .map(|t| t.trial_id.clone())
    }

    /// All responses de-blinded, ordered by participant then manifest order.
    pub fn export_ratings(&self) -> Vec<RatingRecord> {
        let index = self.snapshot();
        let manifest = &self.loaded.manifest;
        let mut out = Vec::with_capacity(index.response_count());
        for (participant, state) in index.participants() {
            let mut rows: Vec<&ResponseEnvelope> = state.responses.values().collect();
            rows.sort_by_key(|r| self.positions[&r.trial_id]);
            for r in rows {
                let trial = &manifest.trials[self.positions[&r.trial_id]];
                out.push(RatingRecord {
                    participant: participant.to_string(),
                    exam: trial.exam.clone(),
                    method: manifest.condition(trial).to_string(),
                    view: trial.view,
                    stars: r.stars,
                    reaction_time_ms: r.reaction_time_ms,
                    toggle_count: r.toggle_count,
                    timestamp: r.client_timestamp.clone(),
                    attention_check: trial.attention_check,
                    trial_id: Some(r.trial_id.clone()),
                    server_timestamp: Some(r.server_timestamp.clone()),
                    corrected: None,
                });
            }
        }
        out
    }

    pub fn export_surveys(&self) -> Vec<SurveyRecord> {
        let index = self.snapshot();
        index.participants().flat_map(|(_, s)| s.surveys.values().cloned()).collect()
    }
}

/// Index after replay plus the byte length of the valid prefix.
fn replay(bytes: &[u8], positions: &HashMap<String, usize>, path: &Path) -> Result<(Index, usize)> {
    let corrupt = |line: usize, message: String| StoreError::Corrupt { path: path.to_path_buf(), line, message };
    let mut index = Index::default();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..].iter().position(|b| *b == b'\n').map(|p| offset + p);
        let line = &bytes[offset..end.unwrap_or(bytes.len())];
        let next = end.map_or(bytes.len(), |e| e + 1);
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            continue;
        }
        match serde_json::from_slice::<Event>(line) {
            Ok(event) => {
                if let Event::Response(r) = &event {
                    if !positions.contains_key(&r.trial_id) {
                        return Err(corrupt(line_no, format!("unknown trial '{}'", r.trial_id)));
                    }
                }
                index.apply(event).map_err(|m| corrupt(line_no, m))?;
            }
            Err(_) if end.is_none() => return Ok((index, offset)),
            Err(e) => return Err(corrupt(line_no, e.to_string())),
        }
        offset = next;
    }
    Ok((index, bytes.len()))
}

/// Render records as JSON lines.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialize");
        out.push(b'\n');
    }
    out
}
