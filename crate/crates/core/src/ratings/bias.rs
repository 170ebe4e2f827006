use std::collections::BTreeMap;

use super::{RatingError, RatingTable, Result, View};

/// Mean deviation of each participant's stars from the per-trial mean over all
/// raters of that trial. Every trial needs at least two raters.
pub fn participant_bias(table: &RatingTable) -> Result<BTreeMap<String, f64>> {
    let mut trials: BTreeMap<(&str, &str, View), (f64, usize)> = BTreeMap::new();
    for r in table.records() {
        let e = trials.entry(r.trial_key()).or_insert((0.0, 0));
        e.0 += f64::from(r.stars);
        e.1 += 1;
    }
    if let Some(((exam, method, view), (_, n))) = trials.iter().find(|(_, (_, n))| *n < 2) {
        return Err(RatingError::TooFewRaters {
            exam: exam.to_string(),
            method: method.to_string(),
            view: *view,
            raters: *n,
        });
    }
    let mut dev: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in table.records() {
        let (sum, n) = trials[&r.trial_key()];
        let e = dev.entry(r.participant.clone()).or_insert((0.0, 0));
        e.0 += f64::from(r.stars) - sum / n as f64;
        e.1 += 1;
    }
    Ok(dev.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect())
}

/// Set `corrected = stars − bias` on every record.
pub fn bias_correct(table: &RatingTable) -> Result<RatingTable> {
    let bias = participant_bias(table)?;
    let records = table
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.corrected = Some(f64::from(r.stars) - bias[&r.participant]);
            r
        })
        .collect();
    RatingTable::new(records)
}
