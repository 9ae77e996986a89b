use nalgebra::{DMatrix, DVector};

/// Result of a symmetric positive semi-definite solve.
pub(crate) struct Solution {
    pub x: DVector<f64>,
    /// True when the system was singular and a minimum-norm least-squares
    /// solution was returned instead.
    pub pseudo: bool,
}

/// Solves `a x = b` for symmetric PSD `a`. Cholesky first; when the
/// factorization fails or is numerically singular, falls back to an SVD
/// pseudo-solution.
pub(crate) fn solve_psd(a: DMatrix<f64>, b: &DVector<f64>) -> Solution {
    if let Some(chol) = a.clone().cholesky() {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min * min > 1e-13 * max * max {
            return Solution { x: chol.solve(b), pseudo: false };
        }
    }
    Solution { x: solve_min_norm(a, b), pseudo: true }
}

pub(crate) fn solve_min_norm(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("svd computed with both factors")
}
