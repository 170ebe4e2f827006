use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{center_columns, table_matrix, Result, StatsError};
use crate::seed::{derive_seed, seeded_rng};
use crate::table::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    /// Correlation matrix when true, covariance matrix otherwise.
    pub standardize: bool,
    pub parallel_replicates: usize,
    pub seed: u64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            standardize: true,
            parallel_replicates: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub variables: Vec<String>,
    /// Variables × components; column `k` is the unit eigenvector of component `k`.
    pub loadings: DMatrix<f64>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    /// Components with eigenvalue above the mean eigenvalue (1 for a correlation matrix).
    pub kaiser_components: usize,
    /// Leading components whose eigenvalue exceeds the mean of the permuted replicates.
    pub parallel_components: usize,
    pub parallel_thresholds: Vec<f64>,
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let values = order
        .iter()
        .map(|&k| {
            let v = eig.eigenvalues[k];
            if v < 0.0 && v > -1e-12 * top.max(1.0) {
                0.0
            } else {
                v
            }
        })
        .collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<DVector<f64>>>());
    (values, vectors)
}

fn scatter(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = m.transpose() * m / (m.nrows() - 1) as f64;
    (&c + c.transpose()) * 0.5
}

/// Principal components of the columns of `table`.
pub fn pca(table: &ScoreTable, options: &PcaOptions) -> Result<PcaResult> {
    if table.n_rows() < 2 {
        return Err(StatsError::TooSmall { what: "rows", needed: 2, got: table.n_rows() });
    }
    if table.n_cols() < 1 {
        return Err(StatsError::TooSmall { what: "columns", needed: 1, got: 0 });
    }
    let raw = table_matrix(table)?;
    let centered = center_columns(&raw, table.columns(), options.standardize)?;
    let (eigenvalues, mut loadings) = sorted_eigen(scatter(&centered));
    for k in 0..loadings.ncols() {
        let mut col = loadings.column_mut(k);
        let pivot = (0..col.len())
            .max_by(|a, b| col[*a].abs().total_cmp(&col[*b].abs()).then(b.cmp(a)))
            .unwrap();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let total: f64 = eigenvalues.iter().sum();
    let explained_ratio = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let mean_eig = total / eigenvalues.len() as f64;
    let kaiser_components = eigenvalues.iter().filter(|v| **v > mean_eig).count();

    let p = table.n_cols();
    let replicates: Vec<Vec<f64>> = (0..options.parallel_replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_rng(derive_seed(options.seed, &format!("parallel-analysis/{r}")));
            let mut permuted = raw.clone();
            for j in 0..p {
                let mut col: Vec<f64> = raw.column(j).iter().copied().collect();
                col.shuffle(&mut rng);
                permuted.set_column(j, &DVector::from_vec(col));
            }
            let c = center_columns(&permuted, table.columns(), options.standardize).expect("same column variances");
            sorted_eigen(scatter(&c)).0
        })
        .collect();
    let parallel_thresholds: Vec<f64> = (0..p)
        .map(|k| replicates.iter().map(|r| r[k]).sum::<f64>() / replicates.len().max(1) as f64)
        .collect();
    let parallel_components = if replicates.is_empty() {
        0
    } else {
        eigenvalues
            .iter()
            .zip(&parallel_thresholds)
            .take_while(|(v, t)| v > t)
            .count()
    };

    Ok(PcaResult {
        variables: table.columns().to_vec(),
        loadings,
        eigenvalues,
        explained_ratio,
        kaiser_components,
        parallel_components,
        parallel_thresholds,
    })
}

impl PcaResult {
    /// `loadings · diag(eigenvalues) · loadingsᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = &self.loadings;
        l * DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone())) * l.transpose()
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["component".to_string(), "eigenvalue".into(), "explained_ratio".into()];
        header.extend(self.variables.iter().cloned());
        w.write_record(&header)?;
        for k in 0..self.eigenvalues.len() {
            let mut rec = vec![
                format!("PC{}", k + 1),
                format!("{:.10}", self.eigenvalues[k]),
                format!("{:.10}", self.explained_ratio[k]),
            ];
            rec.extend(self.loadings.column(k).iter().map(|v| format!("{v:.10}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
