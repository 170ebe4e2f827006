use std::collections::BTreeMap;
use std::io::Write;

use super::Consensus;
use crate::table::ScoreTable;
use crate::volume::{EDEMA, ENHANCING_TUMOR, NECROSIS, TUMOR_CORE, WHOLE_TUMOR};

/// Aggregate rows appended below the channel rows: name and member channels.
pub const DEFAULT_AGGREGATES: &[(&str, &[&str])] = &[
    ("mean_brats", &[ENHANCING_TUMOR, TUMOR_CORE, WHOLE_TUMOR]),
    ("mean_single", &[ENHANCING_TUMOR, NECROSIS, EDEMA]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    TooFewPairs,
    DegenerateVariance,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::TooFewPairs => "too_few_pairs",
            CellFlag::DegenerateVariance => "degenerate_variance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationCell {
    pub r: Option<f64>,
    pub n: usize,
    pub flag: Option<CellFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<CorrelationCell>>,
}

/// Pearson r by a single-pass co-moment update. Fewer than 3 pairs or a
/// constant variable gives a flagged cell.
pub fn pearson(x: &[f64], y: &[f64]) -> CorrelationCell {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 3 {
        return CorrelationCell {
            r: None,
            n,
            flag: Some(CellFlag::TooFewPairs),
        };
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (a, b)) in x.iter().zip(y).enumerate() {
        let k1 = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / k1;
        my += dy / k1;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return CorrelationCell {
            r: None,
            n,
            flag: Some(CellFlag::DegenerateVariance),
        };
    }
    CorrelationCell {
        r: Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)),
        n,
        flag: None,
    }
}

/// Correlate consensus ratings with every score column, one row per channel
/// found in `scores` followed by the aggregate rows whose members are all
/// present. Aggregate scores are the mean over member channels. Attention-check
/// ratings and non-finite scores are left out pairwise.
pub fn pearson_correlation_matrix(
    ratings: &BTreeMap<(String, String), Consensus>,
    scores: &ScoreTable,
    aggregates: &[(&str, &[&str])],
) -> CorrelationMatrix {
    let mut channels: Vec<String> = Vec::new();
    for k in scores.rows() {
        if !channels.contains(&k.channel) {
            channels.push(k.channel.clone());
        }
    }
    // (exam, method) -> channel -> row index
    let mut index: BTreeMap<(&str, &str), BTreeMap<&str, usize>> = BTreeMap::new();
    for (i, k) in scores.rows().iter().enumerate() {
        index
            .entry((k.exam.as_str(), k.method.as_str()))
            .or_default()
            .insert(k.channel.as_str(), i);
    }

    let mut row_defs: Vec<(String, Vec<&str>)> = channels.iter().map(|c| (c.clone(), vec![c.as_str()])).collect();
    for (name, members) in aggregates {
        if members.iter().all(|m| channels.iter().any(|c| c == m)) {
            row_defs.push((name.to_string(), members.to_vec()));
        }
    }

    let cells = row_defs
        .iter()
        .map(|(_, members)| {
            (0..scores.n_cols())
                .map(|j| {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for ((exam, method), by_channel) in &index {
                        let Some(c) = ratings.get(&(exam.to_string(), method.to_string())) else {
                            continue;
                        };
                        if c.attention_check {
                            continue;
                        }
                        let vals: Option<Vec<f64>> = members
                            .iter()
                            .map(|m| by_channel.get(m).map(|i| scores.get(*i, j)))
                            .collect();
                        let Some(vals) = vals else { continue };
                        let s = vals.iter().sum::<f64>() / vals.len() as f64;
                        if s.is_finite() {
                            xs.push(c.mean);
                            ys.push(s);
                        }
                    }
                    pearson(&xs, &ys)
                })
                .collect()
        })
        .collect();
    CorrelationMatrix {
        rows: row_defs.into_iter().map(|(n, _)| n).collect(),
        columns: scores.columns().to_vec(),
        cells,
    }
}

impl CorrelationMatrix {
    pub fn get(&self, row: &str, column: &str) -> Option<&CorrelationCell> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.columns.iter().position(|c| c == column)?;
        Some(&self.cells[i][j])
    }

    /// Long-format CSV: row, column, r, n, flag.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "column", "r", "n", "flag"])?;
        for (i, row) in self.rows.iter().enumerate() {
            for (j, col) in self.columns.iter().enumerate() {
                let c = &self.cells[i][j];
                w.write_record([
                    row.as_str(),
                    col,
                    &c.r.map(|r| format!("{r:.12}")).unwrap_or_default(),
                    &c.n.to_string(),
                    c.flag.map_or("", CellFlag::as_str),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
