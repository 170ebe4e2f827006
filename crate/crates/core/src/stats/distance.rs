use nalgebra::DMatrix;

use super::{center_columns, table_matrix, Result, StatsError};
use crate::table::ScoreTable;

/// Symmetric pairwise distances between labelled items.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub d: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, d: DMatrix<f64>) -> Result<Self> {
        let n = labels.len();
        if d.nrows() != n || d.ncols() != n {
            return Err(StatsError::Invalid(format!("{n} labels for a {}x{} matrix", d.nrows(), d.ncols())));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(StatsError::Invalid(format!("nonzero diagonal at {}", labels[i])));
            }
            for j in 0..i {
                if d[(i, j)] != d[(j, i)] || d[(i, j)].is_nan() || d[(i, j)] < 0.0 {
                    return Err(StatsError::Invalid(format!(
                        "distance between {} and {} is not symmetric and non-negative",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(DistanceMatrix { labels, d })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }
}

/// Euclidean distances between the columns of `table`, optionally after
/// z-scoring each column with its sample SD.
pub fn euclidean_distance_matrix(table: &ScoreTable, standardize: bool) -> Result<DistanceMatrix> {
    if table.n_cols() < 2 {
        return Err(StatsError::TooSmall { what: "columns", needed: 2, got: table.n_cols() });
    }
    if table.n_rows() < 2 {
        return Err(StatsError::TooSmall { what: "rows", needed: 2, got: table.n_rows() });
    }
    let mut m = table_matrix(table)?;
    if standardize {
        m = center_columns(&m, table.columns(), true)?;
    }
    let k = m.ncols();
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..i {
            let dist = (m.column(i) - m.column(j)).norm();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    DistanceMatrix::new(table.columns().to_vec(), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::CaseKey;

    fn table(cols: &[(&str, &[f64])]) -> ScoreTable {
        let mut t = ScoreTable::new(cols.iter().map(|c| c.0.to_string()).collect());
        for i in 0..cols[0].1.len() {
            t.push_row(CaseKey::new(format!("e{i}"), "m", "WT"), cols.iter().map(|c| c.1[i]).collect())
                .unwrap();
        }
        t
    }

    #[test]
    fn duplicate_columns_at_zero() {
        let t = table(&[("a", &[1.0, 2.0, 4.0]), ("b", &[1.0, 2.0, 4.0]), ("c", &[3.0, 1.0, 0.0])]);
        let d = euclidean_distance_matrix(&t, true).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
        assert!(d.get(0, 2) > 0.0);
    }

    #[test]
    fn uncorrelated_standardized_columns() {
        // Centered, orthogonal columns with unit sample SD: |a-b|² = 2(n−1).
        let t = table(&[("a", &[1.0, -1.0, 1.0, -1.0]), ("b", &[1.0, 1.0, -1.0, -1.0])]);
        let d = euclidean_distance_matrix(&t, true).unwrap();
        let sd = (4.0f64 / 3.0).sqrt();
        let expected = (2.0 * 4.0 / (sd * sd)).sqrt();
        assert!((d.get(0, 1) - expected).abs() < 1e-12);
        assert!((d.get(0, 1) - (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_column_named() {
        let t = table(&[("a", &[1.0, 2.0]), ("flat", &[3.0, 3.0])]);
        assert_eq!(
            euclidean_distance_matrix(&t, true).unwrap_err(),
            StatsError::ZeroVariance("flat".into())
        );
        assert!(euclidean_distance_matrix(&t, false).is_ok());
    }
}
