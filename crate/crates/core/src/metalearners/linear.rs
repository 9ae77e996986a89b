//! Ridge-based learners and the closed-form linear H-learner.

use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, ArrayView1, ArrayView2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::linalg::solve_psd;
use crate::optim::{fit_ridge, LinearModel, RidgeConfig};

pub(crate) fn t_learner(data: &Dataset, cfg: &RidgeConfig) -> Result<(LinearModel, LinearModel)> {
    let d0 = data.arm_subset(0);
    let d1 = data.arm_subset(1);
    Ok((fit_ridge(d0.x.view(), d0.y.view(), cfg)?, fit_ridge(d1.x.view(), d1.y.view(), cfg)?))
}

/// Ridge on `[x, t]`; the treatment enters as one un-interacted column.
pub(crate) fn s_learner(data: &Dataset, cfg: &RidgeConfig) -> Result<LinearModel> {
    let t = data.t_f64().insert_axis(Axis(1));
    let design = concatenate![Axis(1), data.x.view(), t.view()];
    fit_ridge(design.view(), data.y.view(), cfg)
}

/// Joint minimizer of
/// `sum (1 - lambda)(y - f_T)^2 + lambda (f1 - f0 - pseudo)^2 + l2 (|w0|^2 + |w1|^2)`
/// over two linear functions `f_t(x) = x w_t + b_t`.
///
/// The stationarity conditions form one block system in `(theta0, theta1)`:
///
/// ```text
/// [ (1-l) G0 + l G + P      -l G            ] [theta0]   [ (1-l) r0 - l s ]
/// [ -l G                    (1-l) G1 + l G + P ] [theta1] = [ (1-l) r1 + l s ]
/// ```
///
/// with `G_t = sum_{T=t} z z'`, `G = sum z z'`, `r_t = sum_{T=t} z y`,
/// `s = sum z pseudo` and `z = [x, 1]`. At `lambda = 1` with intercepts only
/// `b1 - b0` is identified and the minimum-norm solution is returned.
pub fn fit_linear_h(
    x: ArrayView2<f64>,
    t: &[u8],
    y: ArrayView1<f64>,
    pseudo: ArrayView1<f64>,
    lambda: f64,
    cfg: &RidgeConfig,
) -> Result<(LinearModel, LinearModel)> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let n = x.nrows();
    if t.len() != n || y.len() != n || pseudo.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: t.len().min(y.len()).min(pseudo.len()),
            context: "linear H-learner inputs",
        });
    }
    let d = x.ncols();
    let p = d + usize::from(cfg.fit_intercept);
    let z = |i: usize, j: usize| if j < d { x[[i, j]] } else { 1.0 };

    let mut g = [DMatrix::<f64>::zeros(p, p), DMatrix::<f64>::zeros(p, p)];
    let mut r = [DVector::<f64>::zeros(p), DVector::<f64>::zeros(p)];
    let mut s = DVector::<f64>::zeros(p);
    let mut zi = DVector::<f64>::zeros(p);
    for i in 0..n {
        for j in 0..p {
            zi[j] = z(i, j);
        }
        let arm = usize::from(t[i]);
        g[arm].ger(1.0, &zi, &zi, 1.0);
        r[arm].axpy(y[i], &zi, 1.0);
        s.axpy(pseudo[i], &zi, 1.0);
    }
    let full = &g[0] + &g[1];

    let mut a = DMatrix::<f64>::zeros(2 * p, 2 * p);
    let mut b = DVector::<f64>::zeros(2 * p);
    for arm in 0..2 {
        let block = &g[arm] * (1.0 - lambda) + &full * lambda;
        a.view_mut((arm * p, arm * p), (p, p)).copy_from(&block);
        let sign = if arm == 0 { -1.0 } else { 1.0 };
        let rhs = &r[arm] * (1.0 - lambda) + &s * (sign * lambda);
        b.rows_mut(arm * p, p).copy_from(&rhs);
        for j in 0..d {
            a[(arm * p + j, arm * p + j)] += cfg.l2;
        }
    }
    let cross = &full * (-lambda);
    a.view_mut((0, p), (p, p)).copy_from(&cross);
    a.view_mut((p, 0), (p, p)).copy_from(&cross);

    let sol = solve_psd(a, &b);
    let unpack = |arm: usize| LinearModel {
        coef: (0..d).map(|j| sol.x[arm * p + j]).collect(),
        intercept: if cfg.fit_intercept { sol.x[arm * p + d] } else { 0.0 },
        rank_deficient: sol.pseudo,
    };
    Ok((unpack(0), unpack(1)))
}
