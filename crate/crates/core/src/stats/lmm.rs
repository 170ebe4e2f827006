//! Linear mixed model with crossed random intercepts for exam and method,
//! fitted by profiled REML.
//!
//! With variance ratios θ = (σ²_exam/σ², σ²_method/σ²) the marginal covariance
//! is σ²H, H = I + Z D Zᵀ. Writing W = Z D^½ and M = I + WᵀW,
//! H⁻¹ = I − W M⁻¹ Wᵀ and log|H| = log|M|, so every evaluation only factors
//! matrices of size (levels × levels) and (fixed × fixed).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{mean, sample_var, vif, Result, StatsError};

pub const INTERCEPT: &str = "(Intercept)";

const LOG_LO: f64 = -15.0;
const LOG_HI: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LmmData {
    pub response: Vec<f64>,
    /// Named fixed-effect predictors, intercept excluded.
    pub fixed: Vec<(String, Vec<f64>)>,
    pub intercept: bool,
    pub exam: Vec<String>,
    pub method: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LmmOptions {
    fn default() -> Self {
        LmmOptions {
            max_iterations: 500,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma2_exam: f64,
    pub sigma2_method: f64,
    pub sigma2_resid: f64,
    pub reml_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    pub exam_effects: Vec<(String, f64)>,
    pub method_effects: Vec<(String, f64)>,
    /// Xβ per observation.
    pub fitted_fixed: Vec<f64>,
    /// y − Xβ − Zû per observation.
    pub residuals: Vec<f64>,
    pub residual_skewness: f64,
    pub residual_excess_kurtosis: f64,
    /// VIF per non-intercept column.
    pub vif: Vec<(String, f64)>,
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == name).map(|j| self.beta[j])
    }
}

/// Sufficient cross-products of one dataset.
struct Design {
    names: Vec<String>,
    n: usize,
    p: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    n_exam: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
    exam_idx: Vec<usize>,
    method_idx: Vec<usize>,
    exam_levels: Vec<String>,
    method_levels: Vec<String>,
}

fn levels(values: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut lv: Vec<String> = values.to_vec();
    lv.sort();
    lv.dedup();
    let idx = values.iter().map(|v| lv.binary_search(v).expect("level present")).collect();
    (lv, idx)
}

impl Design {
    fn new(data: &LmmData) -> Result<Self> {
        let n = data.response.len();
        if data.exam.len() != n || data.method.len() != n || data.fixed.iter().any(|(_, c)| c.len() != n) {
            return Err(StatsError::Invalid("response, predictors and groups differ in length".into()));
        }
        if data.response.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite("response".into()));
        }
        for (name, col) in &data.fixed {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite(name.clone()));
            }
        }
        let (exam_levels, exam_idx) = levels(&data.exam);
        let (method_levels, method_idx) = levels(&data.method);
        if exam_levels.len() < 2 {
            return Err(StatsError::DegenerateGroups("exam"));
        }
        if method_levels.len() < 2 {
            return Err(StatsError::DegenerateGroups("method"));
        }
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if data.intercept {
            names.push(INTERCEPT.to_string());
            cols.push(vec![1.0; n]);
        }
        for (name, col) in &data.fixed {
            names.push(name.clone());
            cols.push(col.clone());
        }
        let p = cols.len();
        if n <= p {
            return Err(StatsError::TooSmall { what: "observations", needed: p + 1, got: n });
        }
        let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        check_rank(&x, &names)?;
        let y = DVector::from_vec(data.response.clone());

        let ne = exam_levels.len();
        let q = ne + method_levels.len();
        let z = DMatrix::from_fn(n, q, |i, k| {
            if k == exam_idx[i] || k == ne + method_idx[i] {
                1.0
            } else {
                0.0
            }
        });
        Ok(Design {
            names,
            n,
            p,
            xtx: x.transpose() * &x,
            xty: x.transpose() * &y,
            yty: y.dot(&y),
            ztz: z.transpose() * &z,
            ztx: z.transpose() * &x,
            zty: z.transpose() * &y,
            n_exam: ne,
            x,
            y,
            exam_idx,
            method_idx,
            exam_levels,
            method_levels,
        })
    }

    fn sqrt_d(&self, theta: [f64; 2]) -> DVector<f64> {
        let q = self.ztz.nrows();
        DVector::from_fn(q, |k, _| if k < self.n_exam { theta[0].sqrt() } else { theta[1].sqrt() })
    }

    fn eval(&self, theta: [f64; 2]) -> Eval {
        let d = self.sqrt_d(theta);
        let q = d.len();
        let mut m = DMatrix::from_fn(q, q, |a, b| d[a] * self.ztz[(a, b)] * d[b]);
        for k in 0..q {
            m[(k, k)] += 1.0;
        }
        let wtx = DMatrix::from_fn(q, self.p, |a, j| d[a] * self.ztx[(a, j)]);
        let wty = d.component_mul(&self.zty);
        let chol_m = Cholesky::new(m).expect("I + WᵀW is positive definite");
        let log_det_h = 2.0 * chol_m.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let minv_wtx = chol_m.solve(&wtx);
        let minv_wty = chol_m.solve(&wty);
        let a = &self.xtx - wtx.transpose() * &minv_wtx;
        let a = (&a + a.transpose()) * 0.5;
        let b = &self.xty - wtx.transpose() * &minv_wty;
        let yhy = self.yty - wty.dot(&minv_wty);
        let chol_a = Cholesky::new(a).expect("design has full column rank");
        let beta = chol_a.solve(&b);
        let log_det_a = 2.0 * chol_a.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dof = (self.n - self.p) as f64;
        let rss = (yhy - b.dot(&beta)).max(f64::MIN_POSITIVE);
        let sigma2 = rss / dof;
        let loglik = -0.5 * (dof * (2.0 * std::f64::consts::PI * sigma2).ln() + log_det_h + log_det_a + dof);
        Eval {
            loglik,
            beta,
            sigma2,
            chol_a,
            chol_m,
            d,
            wtx,
            wty,
        }
    }
}

struct Eval {
    loglik: f64,
    beta: DVector<f64>,
    sigma2: f64,
    chol_a: Cholesky<f64, Dyn>,
    chol_m: Cholesky<f64, Dyn>,
    d: DVector<f64>,
    wtx: DMatrix<f64>,
    wty: DVector<f64>,
}

fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = x.ncols();
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|v| *v == 0.0) {
        return Err(StatsError::Singular(vec![names[j].clone()]));
    }
    let scaled = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] / norms[j]);
    let eig = SymmetricEigen::new(scaled.transpose() * scaled);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut involved = vec![false; p];
    for (e, v) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()) {
        if *e <= 1e-10 * top {
            for (j, w) in v.iter().enumerate() {
                if w.abs() > 1e-6 {
                    involved[j] = true;
                }
            }
        }
    }
    if involved.iter().any(|b| *b) {
        return Err(StatsError::Singular(
            names.iter().zip(&involved).filter(|(_, b)| **b).map(|(n, _)| n.clone()).collect(),
        ));
    }
    Ok(())
}

fn theta_of(phi: [f64; 2], zero: [bool; 2]) -> [f64; 2] {
    [0, 1].map(|k| if zero[k] { 0.0 } else { phi[k].exp() })
}

/// Profiled REML log-likelihood at the given variance ratios.
pub fn reml_criterion(data: &LmmData, theta: [f64; 2]) -> Result<f64> {
    if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(StatsError::Invalid("variance ratios must be finite and >= 0".into()));
    }
    Ok(Design::new(data)?.eval(theta).loglik)
}

/// Maximize `f` on `[a, b]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, width: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > width {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fit the model. Non-convergence within the iteration cap is reported through
/// `converged = false`, not as an error.
pub fn fit_lmm(data: &LmmData, options: &LmmOptions) -> Result<LmmFit> {
    let design = Design::new(data)?;
    let ll = |phi: [f64; 2], zero: [bool; 2]| design.eval(theta_of(phi, zero)).loglik;

    // Coarse grid, including the boundary θ = 0 for each component.
    let grid: Vec<Option<f64>> = std::iter::once(None)
        .chain((0..12).map(|k| Some(-9.0 + 1.5 * k as f64)))
        .collect();
    let mut best = (f64::NEG_INFINITY, [0.0; 2], [true; 2]);
    for ge in &grid {
        for gm in &grid {
            let phi = [ge.unwrap_or(LOG_LO), gm.unwrap_or(LOG_LO)];
            let zero = [ge.is_none(), gm.is_none()];
            let v = ll(phi, zero);
            if v > best.0 {
                best = (v, phi, zero);
            }
        }
    }
    let (mut current, mut phi, mut zero) = best;

    let mut iterations = 0;
    let mut converged = false;
    let mut width = 2.0;
    while iterations < options.max_iterations {
        iterations += 1;
        let before = current;
        let phi_before = phi;
        for k in 0..2 {
            let lo = (phi[k] - width).max(LOG_LO);
            let hi = (phi[k] + width).min(LOG_HI);
            let (x, v) = golden_max(
                |t| {
                    let mut p = phi;
                    p[k] = t;
                    let mut z = zero;
                    z[k] = false;
                    ll(p, z)
                },
                lo,
                hi,
                1e-9,
            );
            if v > current {
                phi[k] = x;
                zero[k] = false;
                current = v;
            }
            // Boundary snap: θ_k = 0 whenever it is at least as good.
            let mut z = zero;
            z[k] = true;
            let v0 = ll(phi, z);
            if v0 >= current || phi[k] <= LOG_LO + 1e-6 {
                zero[k] = true;
                current = v0.max(current);
            }
        }
        let moved = (0..2).map(|k| (phi[k] - phi_before[k]).abs()).fold(0.0, f64::max);
        if (current - before).abs() <= options.tolerance && moved < 1e-6 {
            converged = true;
            break;
        }
        width = (moved * 4.0).clamp(0.05, 2.0);
    }

    let theta = theta_of(phi, zero);
    let e = design.eval(theta);
    Ok(finish(data, &design, theta, e, converged, iterations))
}

fn finish(data: &LmmData, design: &Design, theta: [f64; 2], e: Eval, converged: bool, iterations: usize) -> LmmFit {
    let p = design.p;
    let a_inv = e.chol_a.inverse();
    let se: Vec<f64> = (0..p).map(|j| (e.sigma2 * a_inv[(j, j)]).sqrt()).collect();

    // û = D^½ M⁻¹ Wᵀ (y − Xβ)
    let wtr = &e.wty - &e.wtx * &e.beta;
    let u = e.d.component_mul(&e.chol_m.solve(&wtr));
    let fitted_fixed = &design.x * &e.beta;
    let residuals: Vec<f64> = (0..design.n)
        .map(|i| {
            design.y[i] - fitted_fixed[i] - u[design.exam_idx[i]] - u[design.n_exam + design.method_idx[i]]
        })
        .collect();
    let m = mean(&residuals);
    let m2 = residuals.iter().map(|r| (r - m).powi(2)).sum::<f64>() / residuals.len() as f64;
    let m3 = residuals.iter().map(|r| (r - m).powi(3)).sum::<f64>() / residuals.len() as f64;
    let m4 = residuals.iter().map(|r| (r - m).powi(4)).sum::<f64>() / residuals.len() as f64;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let predictors: Vec<String> = data.fixed.iter().map(|(n, _)| n.clone()).collect();
    let vif_values = if predictors.len() >= 2 {
        let x = DMatrix::from_fn(design.n, predictors.len(), |i, j| data.fixed[j].1[i]);
        vif(&predictors, &x).unwrap_or_else(|_| predictors.iter().map(|n| (n.clone(), f64::NAN)).collect())
    } else {
        predictors.iter().map(|n| (n.clone(), 1.0)).collect()
    };

    LmmFit {
        columns: design.names.clone(),
        beta: e.beta.iter().copied().collect(),
        se,
        sigma2_exam: e.sigma2 * theta[0],
        sigma2_method: e.sigma2 * theta[1],
        sigma2_resid: e.sigma2,
        reml_loglik: e.loglik,
        converged,
        iterations,
        n_obs: design.n,
        exam_effects: design.exam_levels.iter().cloned().zip(u.iter().copied()).collect(),
        method_effects: design
            .method_levels
            .iter()
            .cloned()
            .zip(u.iter().skip(design.n_exam).copied())
            .collect(),
        fitted_fixed: fitted_fixed.iter().copied().collect(),
        residuals,
        residual_skewness: skew,
        residual_excess_kurtosis: kurt,
        vif: vif_values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoR2 {
    pub marginal: f64,
    pub conditional: f64,
}

/// Variance explained by the fixed effects alone and together with the random
/// intercepts. The fixed-effect variance is the sample variance of Xβ.
pub fn pseudo_r2(fit: &LmmFit) -> PseudoR2 {
    let var_f = if fit.fitted_fixed.len() > 1 {
        sample_var(&fit.fitted_fixed)
    } else {
        0.0
    };
    let random = fit.sigma2_exam + fit.sigma2_method;
    let total = var_f + random + fit.sigma2_resid;
    if total <= 0.0 {
        return PseudoR2 {
            marginal: 0.0,
            conditional: 0.0,
        };
    }
    PseudoR2 {
        marginal: var_f / total,
        conditional: (var_f + random) / total,
    }
}

impl LmmFit {
    /// Plain-text summary: coefficients, variance components, fit statistics.
    pub fn report(&self, title: &str) -> String {
        let r2 = pseudo_r2(self);
        let mut s = String::new();
        let _ = writeln!(s, "Linear mixed model fit by REML: {title}");
        let _ = writeln!(s, "Observations: {}", self.n_obs);
        let _ = writeln!(s, "REML log-likelihood: {:.6}", self.reml_loglik);
        let _ = writeln!(s, "Converged: {} ({} iterations)", self.converged, self.iterations);
        let _ = writeln!(s);
        let _ = writeln!(s, "Random effects:");
        let _ = writeln!(s, "  {:<12} {:>14} {:>14}", "group", "variance", "std.dev");
        for (name, v) in [
            ("exam", self.sigma2_exam),
            ("method", self.sigma2_method),
            ("residual", self.sigma2_resid),
        ] {
            let _ = writeln!(s, "  {:<12} {:>14.6} {:>14.6}", name, v, v.sqrt());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Fixed effects:");
        let _ = writeln!(s, "  {:<20} {:>14} {:>14} {:>10}", "term", "estimate", "std.error", "t");
        for j in 0..self.beta.len() {
            let _ = writeln!(
                s,
                "  {:<20} {:>14.6} {:>14.6} {:>10.3}",
                self.columns[j],
                self.beta[j],
                self.se[j],
                self.beta[j] / self.se[j]
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Pseudo R2: marginal {:.6}, conditional {:.6}", r2.marginal, r2.conditional);
        let _ = writeln!(
            s,
            "Residuals: skewness {:.6}, excess kurtosis {:.6}",
            self.residual_skewness, self.residual_excess_kurtosis
        );
        if !self.vif.is_empty() {
            let vifs: Vec<String> = self.vif.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
            let _ = writeln!(s, "VIF: {}", vifs.join(", "));
        }
        s
    }

    /// Coefficient table as CSV: term, estimate, std_error.
    pub fn write_csv(&self, out: impl std::io::Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "estimate", "std_error"])?;
        for j in 0..self.beta.len() {
            w.write_record([
                self.columns[j].as_str(),
                &format!("{:.10}", self.beta[j]),
                &format!("{:.10}", self.se[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn variance_components(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("exam", self.sigma2_exam),
            ("method", self.sigma2_method),
            ("residual", self.sigma2_resid),
        ])
    }
}
