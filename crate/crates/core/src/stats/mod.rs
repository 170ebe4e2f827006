//! Clustering, PCA, random-intercept mixed models and collinearity diagnostics.

mod cluster;
mod distance;
mod lmm;
mod pca;
mod vif;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::table::ScoreTable;

pub use cluster::{hierarchical_cluster, ClusterTree, Linkage, Merge};
pub use distance::{euclidean_distance_matrix, DistanceMatrix};
pub use lmm::{fit_lmm, pseudo_r2, reml_criterion, LmmData, LmmFit, LmmOptions, PseudoR2, INTERCEPT};
pub use pca::{pca, PcaOptions, PcaResult};
pub use vif::vif;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("column '{0}' has non-finite values")]
    NonFinite(String),
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("invalid cluster count {k} for {n} leaves")]
    InvalidK { k: usize, n: usize },
    #[error("singular fixed-effects design, collinear columns: {}", .0.join(", "))]
    Singular(Vec<String>),
    #[error("grouping factor '{0}' needs at least 2 levels")]
    DegenerateGroups(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the n − 1 denominator.
pub(crate) fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Columns of a score table as a matrix (rows × columns), checking finiteness.
pub(crate) fn table_matrix(table: &ScoreTable) -> Result<DMatrix<f64>> {
    for (j, name) in table.columns().iter().enumerate() {
        if table.column(j).iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(name.clone()));
        }
    }
    Ok(DMatrix::from_fn(table.n_rows(), table.n_cols(), |i, j| table.get(i, j)))
}

/// Center each column, and scale to unit sample SD when `scale` is set.
pub(crate) fn center_columns(m: &DMatrix<f64>, names: &[String], scale: bool) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        let mu = mean(&col);
        let sd = sample_var(&col).sqrt();
        if scale && (sd.is_nan() || sd <= 0.0) {
            return Err(StatsError::ZeroVariance(names[j].clone()));
        }
        for i in 0..m.nrows() {
            out[(i, j)] = if scale { (m[(i, j)] - mu) / sd } else { m[(i, j)] - mu };
        }
    }
    Ok(out)
}
