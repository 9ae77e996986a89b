//! Closed-form ridge regression.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::solve_psd;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeConfig {
    /// Penalty on the squared coefficient norm. The intercept is never penalized.
    pub l2: f64,
    #[serde(default = "yes")]
    pub fit_intercept: bool,
}

fn yes() -> bool {
    true
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { l2: 1.0, fit_intercept: true }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::Config(format!("ridge penalty must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Set when the normal equations were singular and a least-squares
    /// pseudo-solution was used.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let coef = ArrayView1::from(&self.coef);
        x.dot(&coef) + self.intercept
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        row.dot(&ArrayView1::from(&self.coef)) + self.intercept
    }
}

pub(crate) fn to_dmatrix(x: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

/// Minimizes `||y - X b - c||^2 + l2 ||b||^2`. With an intercept, the design
/// is centered so that `c` stays unpenalized.
pub fn fit_ridge(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &RidgeConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Dimension { expected: n.max(1), actual: y.len(), context: "ridge targets" });
    }
    let d = x.ncols();
    let (xc, yc, x_mean, y_mean) = if cfg.fit_intercept {
        let xm = x.mean_axis(Axis(0)).expect("n > 0");
        let ym = y.mean().expect("n > 0");
        (&x - &xm, &y - ym, xm, ym)
    } else {
        (x.to_owned(), y.to_owned(), Array1::zeros(d), 0.0)
    };
    let xm = to_dmatrix(xc.view());
    let yv = DVector::from_iterator(n, yc.iter().copied());
    let mut gram = xm.tr_mul(&xm);
    for j in 0..d {
        gram[(j, j)] += cfg.l2;
    }
    let rhs = xm.tr_mul(&yv);
    let sol = solve_psd(gram, &rhs);
    let coef: Vec<f64> = sol.x.iter().copied().collect();
    let intercept = y_mean - x_mean.dot(&ArrayView1::from(&coef));
    Ok(LinearModel { coef, intercept, rank_deficient: sol.pseudo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn exact_linear_data() {
        let m = fit_ridge(
            array![[1.0], [2.0], [3.0]].view(),
            array![2.0, 4.0, 6.0].view(),
            &RidgeConfig { l2: 0.0, fit_intercept: false },
        )
        .unwrap();
        assert_abs_diff_eq!(m.coef[0], 2.0, epsilon = 1e-10);
        assert!(!m.rank_deficient);
    }

    #[test]
    fn hand_evaluated_normal_equation() {
        // (1 + 4 + 1) b = 1 + 4
        let m = fit_ridge(
            array![[1.0], [2.0]].view(),
            array![1.0, 2.0].view(),
            &RidgeConfig { l2: 1.0, fit_intercept: false },
        )
        .unwrap();
        assert_abs_diff_eq!(m.coef[0], 5.0 / 6.0, epsilon = 1e-10);
    }

    #[test]
    fn huge_penalty_predicts_mean() {
        let x = array![[1.0, 0.5], [2.0, -1.0], [3.0, 2.0], [4.0, 0.0]];
        let y = array![1.0, 3.0, 2.0, 6.0];
        let m = fit_ridge(x.view(), y.view(), &RidgeConfig { l2: 1e12, fit_intercept: true }).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() < 1e-9));
        for p in m.predict(x.view()) {
            assert_abs_diff_eq!(p, 3.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn singular_design_uses_pseudo_solution() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let y = array![2.0, 4.0, 6.0];
        let m = fit_ridge(x.view(), y.view(), &RidgeConfig { l2: 0.0, fit_intercept: false }).unwrap();
        assert!(m.rank_deficient);
        assert_abs_diff_eq!(m.coef[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.coef[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn negative_penalty_rejected() {
        let r = fit_ridge(array![[1.0]].view(), array![1.0].view(), &RidgeConfig { l2: -1.0, fit_intercept: false });
        assert!(matches!(r, Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn normal_equation_residual(
            vals in proptest::collection::vec(-3.0f64..3.0, 24),
            ys in proptest::collection::vec(-5.0f64..5.0, 8),
            l2 in 0.0f64..10.0,
            intercept in any::<bool>(),
        ) {
            let x = Array2::from_shape_vec((8, 3), vals).unwrap();
            let y = Array1::from(ys);
            let m = fit_ridge(x.view(), y.view(), &RidgeConfig { l2, fit_intercept: intercept }).unwrap();
            prop_assume!(!m.rank_deficient);
            // Augmented design [X 1] with the intercept column unpenalized.
            let d = if intercept { 4 } else { 3 };
            let mut design = Array2::<f64>::ones((8, d));
            design.slice_mut(ndarray::s![.., 0..3]).assign(&x);
            let mut beta = Array1::from(m.coef.clone());
            if intercept {
                beta = ndarray::concatenate![Axis(0), beta, array![m.intercept]];
            }
            let mut lhs = design.t().dot(&design).dot(&beta);
            for j in 0..3 {
                lhs[j] += l2 * beta[j];
            }
            let rhs = design.t().dot(&y);
            let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let resid = (&lhs - &rhs).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(resid < 1e-8 * scale, "residual {resid}");
        }
    }
}
