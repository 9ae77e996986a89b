//! Penalized logistic regression for propensity scores.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::linalg::solve_psd;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    /// Penalty `l2/2 * ||w||^2` added to the mean log-loss; intercept unpenalized.
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1e-3, max_iter: 100, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + exp(z)) without overflow
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PropensityModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let coef = ArrayView1::from(&self.coef);
        (x.dot(&coef) + self.intercept).mapv(sigmoid)
    }
}

/// Penalized mean log-loss at `(w, b)`.
fn objective(x: &DMatrix<f64>, t: &DVector<f64>, w: &DVector<f64>, l2: f64) -> f64 {
    let d = w.len() - 1;
    let z = x * w;
    let n = t.len() as f64;
    let ll: f64 = z.iter().zip(t.iter()).map(|(&z, &t)| softplus(z) - t * z).sum();
    let pen: f64 = w.rows(0, d).norm_squared();
    ll / n + 0.5 * l2 * pen
}

/// Fits `P(T=1|x) = sigmoid(x w + b)` by damped Newton iterations on the
/// penalized mean log-loss.
pub fn fit_logistic(x: ArrayView2<f64>, t: &[u8], cfg: &LogisticConfig) -> Result<PropensityModel> {
    let n = x.nrows();
    if t.len() != n {
        return Err(Error::Dimension { expected: n, actual: t.len(), context: "treatment length" });
    }
    let treated = t.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::Positivity("propensity model needs both treated and control units".into()));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::Config(format!("logistic penalty must be >= 0, got {}", cfg.l2)));
    }
    let d = x.ncols();
    // Design with a trailing intercept column.
    let xm = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[[i, j]] } else { 1.0 });
    let tv = DVector::from_iterator(n, t.iter().map(|&v| f64::from(v)));
    let nf = n as f64;
    let mut w = DVector::<f64>::zeros(d + 1);
    let mut f = objective(&xm, &tv, &w, cfg.l2);

    for _ in 0..cfg.max_iter {
        let p = (&xm * &w).map(sigmoid);
        let mut grad = xm.tr_mul(&(&p - &tv)) / nf;
        for j in 0..d {
            grad[j] += cfg.l2 * w[j];
        }
        if grad.amax() < cfg.tol {
            break;
        }
        let weights = p.map(|p| (p * (1.0 - p)).max(1e-12));
        let mut xw = xm.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hess = xm.tr_mul(&xw) / nf;
        for j in 0..d {
            hess[(j, j)] += cfg.l2;
        }
        let step = solve_psd(hess, &grad).x;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &w - &step * scale;
            let fc = objective(&xm, &tv, &cand, cfg.l2);
            if fc <= f {
                w = cand;
                f = fc;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(PropensityModel { coef: w.rows(0, d).iter().copied().collect(), intercept: w[d] })
}
