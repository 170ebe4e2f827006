//! Expert star ratings: storage, bias correction, view aggregation and
//! correlation against score tables.

mod aggregate;
mod bias;
mod correlation;
mod svg;

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate_over_views, condition_means, consensus, AggregatedRating, Consensus};
pub use bias::{bias_correct, participant_bias};
pub use correlation::{
    pearson, pearson_correlation_matrix, CellFlag, CorrelationCell, CorrelationMatrix, DEFAULT_AGGREGATES,
};
pub use svg::correlation_svg;

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("duplicate rating by {participant} for ({exam}, {method}, {view})")]
    Duplicate {
        participant: String,
        exam: String,
        method: String,
        view: View,
    },
    #[error("trial ({exam}, {method}, {view}) has {raters} rater(s), bias needs at least 2")]
    TooFewRaters {
        exam: String,
        method: String,
        view: View,
        raters: usize,
    },
}

pub type Result<T> = std::result::Result<T, RatingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
    Single,
}

impl View {
    pub const ALL: [View; 4] = [View::Axial, View::Coronal, View::Sagittal, View::Single];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
            View::Single => "single",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = RatingError;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| RatingError::Invalid(format!("unknown view '{s}'")))
    }
}

/// One star rating of one trial by one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant: String,
    pub exam: String,
    pub method: String,
    pub view: View,
    pub stars: u8,
    pub reaction_time_ms: f64,
    pub toggle_count: u32,
    pub timestamp: String,
    #[serde(default)]
    pub attention_check: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_timestamp: Option<String>,
    /// Bias-corrected rating, set by [`bias_correct`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<f64>,
}

impl RatingRecord {
    /// The corrected rating when present, else the raw stars.
    pub fn value(&self) -> f64 {
        self.corrected.unwrap_or(f64::from(self.stars))
    }

    pub fn trial_key(&self) -> (&str, &str, View) {
        (&self.exam, &self.method, self.view)
    }

    fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.stars) {
            return Err(RatingError::Invalid(format!("stars must be 1..6, got {}", self.stars)));
        }
        if !(self.reaction_time_ms.is_finite() && self.reaction_time_ms >= 0.0) {
            return Err(RatingError::Invalid(format!(
                "reaction time must be >= 0 ms, got {}",
                self.reaction_time_ms
            )));
        }
        if let Some(c) = self.corrected {
            if !c.is_finite() {
                return Err(RatingError::Invalid("corrected rating is not finite".into()));
            }
        }
        Ok(())
    }
}

/// Ratings with at most one record per (participant, exam, method, view).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatingTable {
    records: Vec<RatingRecord>,
}

impl RatingTable {
    pub fn new(records: Vec<RatingRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert((r.participant.as_str(), r.exam.as_str(), r.method.as_str(), r.view)) {
                return Err(RatingError::Duplicate {
                    participant: r.participant.clone(),
                    exam: r.exam.clone(),
                    method: r.method.clone(),
                    view: r.view,
                });
            }
        }
        Ok(RatingTable { records })
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn participants(&self) -> Vec<&str> {
        let mut p: Vec<&str> = self.records.iter().map(|r| r.participant.as_str()).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Parse JSON lines. Blank lines are skipped.
    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RatingRecord = serde_json::from_str(&line).map_err(|e| RatingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            rec.validate().map_err(|e| RatingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        RatingTable::new(records)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| RatingError::Invalid(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::rec;
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut a = rec("p1", "e1", "simple", View::Axial, 5);
        a.trial_id = Some("t7".into());
        let b = rec("p2", "e1", "simple", View::Axial, 3);
        let t = RatingTable::new(vec![a, b]).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        assert_eq!(RatingTable::read_jsonl(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_duplicates_and_bad_stars() {
        let a = rec("p1", "e1", "simple", View::Axial, 5);
        assert!(matches!(
            RatingTable::new(vec![a.clone(), a.clone()]),
            Err(RatingError::Duplicate { .. })
        ));
        let mut bad = a;
        bad.stars = 7;
        assert!(RatingTable::new(vec![bad]).is_err());
    }

    #[test]
    fn parse_error_names_line() {
        let text = "\n{\"participant\":\"p\"}\n";
        let err = RatingTable::read_jsonl(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }
}
