use std::collections::BTreeMap;

use super::RatingTable;

/// Mean rating of one participant for one (exam, method) across views.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedRating {
    pub participant: String,
    pub exam: String,
    pub method: String,
    pub mean: f64,
    pub views: usize,
    pub attention_check: bool,
}

/// Average each participant's ratings over the available views. Uses corrected
/// values when present. Output is sorted by (participant, exam, method).
pub fn aggregate_over_views(table: &RatingTable) -> Vec<AggregatedRating> {
    let mut groups: BTreeMap<(&str, &str, &str), (f64, usize, bool)> = BTreeMap::new();
    for r in table.records() {
        let e = groups
            .entry((&r.participant, &r.exam, &r.method))
            .or_insert((0.0, 0, false));
        e.0 += r.value();
        e.1 += 1;
        e.2 |= r.attention_check;
    }
    groups
        .into_iter()
        .map(|((p, e, m), (sum, n, att))| AggregatedRating {
            participant: p.to_string(),
            exam: e.to_string(),
            method: m.to_string(),
            mean: sum / n as f64,
            views: n,
            attention_check: att,
        })
        .collect()
}

/// Mean over participants of the view-aggregated rating, per (exam, method).
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub mean: f64,
    pub participants: usize,
    pub attention_check: bool,
}

pub fn consensus(aggregated: &[AggregatedRating]) -> BTreeMap<(String, String), Consensus> {
    let mut out: BTreeMap<(String, String), (f64, usize, bool)> = BTreeMap::new();
    for a in aggregated {
        let e = out.entry((a.exam.clone(), a.method.clone())).or_insert((0.0, 0, false));
        e.0 += a.mean;
        e.1 += 1;
        e.2 |= a.attention_check;
    }
    out.into_iter()
        .map(|(k, (s, n, att))| {
            (
                k,
                Consensus {
                    mean: s / n as f64,
                    participants: n,
                    attention_check: att,
                },
            )
        })
        .collect()
}

/// Mean rating per method over all non-attention-check records.
pub fn condition_means(table: &RatingTable) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in table.records().iter().filter(|r| !r.attention_check) {
        let e = acc.entry(r.method.clone()).or_insert((0.0, 0));
        e.0 += r.value();
        e.1 += 1;
    }
    acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::test_support::rec;
    use crate::ratings::View;

    #[test]
    fn averages_views() {
        let t = RatingTable::new(vec![
            rec("a", "e1", "m", View::Axial, 4),
            rec("a", "e1", "m", View::Coronal, 5),
            rec("a", "e1", "m", View::Sagittal, 6),
            rec("a", "e2", "m", View::Single, 2),
        ])
        .unwrap();
        let agg = aggregate_over_views(&t);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].mean, agg[0].views), (5.0, 3));
        assert_eq!((agg[1].mean, agg[1].views), (2.0, 1));
    }

    #[test]
    fn condition_means_skip_attention_checks() {
        let mut att = rec("a", "x", "m", View::Axial, 1);
        att.attention_check = true;
        let t = RatingTable::new(vec![rec("a", "e1", "m", View::Axial, 4), att]).unwrap();
        assert_eq!(condition_means(&t)["m"], 4.0);
    }
}
