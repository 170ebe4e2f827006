use nalgebra::{DMatrix, SymmetricEigen};

use super::{center_columns, Result, StatsError};

/// Variance inflation factor per column of a design without its intercept.
/// Columns that are exactly collinear with others (or constant) get `+inf`.
pub fn vif(names: &[String], x: &DMatrix<f64>) -> Result<Vec<(String, f64)>> {
    let k = x.ncols();
    if k < 2 {
        return Err(StatsError::TooSmall { what: "non-intercept columns", needed: 2, got: k });
    }
    if x.nrows() < 3 {
        return Err(StatsError::TooSmall { what: "rows", needed: 3, got: x.nrows() });
    }
    let centered = center_columns(x, names, false)?;
    let norms: Vec<f64> = (0..k).map(|j| centered.column(j).norm()).collect();
    let scale = norms.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut infinite = vec![false; k];
    let live: Vec<usize> = (0..k)
        .filter(|j| {
            let constant = norms[*j] <= 1e-12 * scale;
            infinite[*j] = constant;
            !constant
        })
        .collect();

    let z = DMatrix::from_fn(x.nrows(), live.len(), |i, c| centered[(i, live[c])] / norms[live[c]]);
    let r = z.transpose() * &z;
    let eig = SymmetricEigen::new(r.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    for (e, v) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()) {
        if *e <= 1e-10 * top {
            for (c, w) in v.iter().enumerate() {
                if w.abs() > 1e-6 {
                    infinite[live[c]] = true;
                }
            }
        }
    }
    let finite: Vec<usize> = (0..live.len()).filter(|c| !infinite[live[*c]]).collect();
    let mut values = vec![f64::INFINITY; k];
    if finite.len() == live.len() {
        let inv = r.try_inverse().ok_or_else(|| StatsError::Singular(names.to_vec()))?;
        for (c, &j) in live.iter().enumerate() {
            values[j] = inv[(c, c)];
        }
    } else {
        // Regress each remaining column on all others by least squares.
        for &c in &finite {
            let others: Vec<usize> = (0..live.len()).filter(|o| *o != c).collect();
            let a = DMatrix::from_fn(z.nrows(), others.len(), |i, o| z[(i, others[o])]);
            let y = z.column(c).into_owned();
            let beta = a
                .clone()
                .svd(true, true)
                .solve(&y, 1e-12)
                .map_err(|e| StatsError::Invalid(e.to_string()))?;
            let resid = &y - &a * beta;
            values[live[c]] = 1.0 / resid.norm_squared();
        }
    }
    Ok(names.iter().cloned().zip(values).collect())
}
