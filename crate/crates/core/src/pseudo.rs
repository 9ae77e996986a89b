//! Nuisance estimation and the IPW, X and DR pseudo-outcomes.
//!
//! | kind | pseudo-outcome                                              |
//! |------|-------------------------------------------------------------|
//! | IPW  | `(T - pi) / (pi (1 - pi)) * Y`                              |
//! | X    | `T (Y - mu0) + (1 - T)(mu1 - Y)`                            |
//! | DR   | `(T - pi) / (pi (1 - pi)) * (Y - mu_T) + mu1 - mu0`         |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metalearners::{self, BaseLearner, CateEstimator, Checkpoint, FittedEstimator, NetConfig};
use crate::optim::{fit_logistic, LinearModel, LogisticConfig, PropensityModel};

pub const DEFAULT_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoKind {
    Ipw,
    X,
    Dr,
}

impl PseudoKind {
    pub const ALL: [PseudoKind; 3] = [PseudoKind::Ipw, PseudoKind::X, PseudoKind::Dr];

    pub fn needs_propensity(self) -> bool {
        matches!(self, PseudoKind::Ipw | PseudoKind::Dr)
    }
}

impl fmt::Display for PseudoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoKind::Ipw => "ipw",
            PseudoKind::X => "x",
            PseudoKind::Dr => "dr",
        })
    }
}

impl FromStr for PseudoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(PseudoKind::Ipw),
            "x" => Ok(PseudoKind::X),
            "dr" => Ok(PseudoKind::Dr),
            other => Err(Error::Config(format!("unknown pseudo-outcome kind `{other}`"))),
        }
    }
}

/// Anything that maps a covariate matrix to one value per row.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl Predictor for LinearModel {
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_cols(self.coef.len(), x)?;
        Ok(LinearModel::predict(self, x))
    }
}

impl Predictor for PropensityModel {
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_cols(self.coef.len(), x)?;
        Ok(self.predict_proba(x))
    }
}

fn check_cols(expected: usize, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Dimension { expected, actual: x.ncols(), context: "predictor input columns" });
    }
    Ok(())
}

/// Wraps a row function, e.g. a known propensity or outcome surface.
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(ArrayView1<f64>) -> f64 + Send + Sync,
{
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(x.outer_iter().map(|row| (self.0)(row)).collect())
    }
}

/// One potential-outcome head of a fitted estimator.
pub struct ArmPredictor {
    pub estimator: Arc<FittedEstimator>,
    pub arm: u8,
}

impl Predictor for ArmPredictor {
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let out = if self.arm == 0 { self.estimator.predict_mu0(x)? } else { self.estimator.predict_mu1(x)? };
        out.ok_or_else(|| Error::Config("stage-1 learner has no potential-outcome heads".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fitted,
    Oracle,
}

/// Fitted (or known) propensity and outcome regressions.
#[derive(Clone)]
pub struct NuisanceSet {
    propensity: Option<Arc<dyn Predictor>>,
    mu0: Arc<dyn Predictor>,
    mu1: Arc<dyn Predictor>,
    pub provenance: Provenance,
    pub clip: f64,
}

impl fmt::Debug for NuisanceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceSet")
            .field("has_propensity", &self.propensity.is_some())
            .field("provenance", &self.provenance)
            .field("clip", &self.clip)
            .finish()
    }
}

/// Nuisance predictions evaluated on a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub propensity: Option<Array1<f64>>,
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
}

impl NuisanceSet {
    pub fn new(
        propensity: Option<Arc<dyn Predictor>>,
        mu0: Arc<dyn Predictor>,
        mu1: Arc<dyn Predictor>,
        provenance: Provenance,
        clip: f64,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&clip) {
            return Err(Error::Config(format!("propensity clip must be in [0, 0.5), got {clip}")));
        }
        Ok(Self { propensity, mu0, mu1, provenance, clip })
    }

    /// Known nuisance functions, used verbatim (no clipping).
    pub fn oracle<P, M0, M1>(propensity: P, mu0: M0, mu1: M1) -> Self
    where
        P: Fn(ArrayView1<f64>) -> f64 + Send + Sync + 'static,
        M0: Fn(ArrayView1<f64>) -> f64 + Send + Sync + 'static,
        M1: Fn(ArrayView1<f64>) -> f64 + Send + Sync + 'static,
    {
        Self {
            propensity: Some(Arc::new(FnPredictor(propensity))),
            mu0: Arc::new(FnPredictor(mu0)),
            mu1: Arc::new(FnPredictor(mu1)),
            provenance: Provenance::Oracle,
            clip: 0.0,
        }
    }

    pub fn has_propensity(&self) -> bool {
        self.propensity.is_some()
    }

    /// Propensity predictions clipped to `[clip, 1 - clip]`.
    pub fn propensity(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let p = self
            .propensity
            .as_ref()
            .ok_or_else(|| Error::Config("nuisance set has no propensity model".into()))?
            .predict(x)?;
        let (lo, hi) = (self.clip, 1.0 - self.clip);
        Ok(p.mapv(|v| v.clamp(lo, hi)))
    }

    pub fn mu0(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.mu0.predict(x)
    }

    pub fn mu1(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.mu1.predict(x)
    }

    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<NuisanceValues> {
        let propensity = match self.propensity {
            Some(_) => Some(self.propensity(x)?),
            None => None,
        };
        Ok(NuisanceValues { propensity, mu0: self.mu0(x)?, mu1: self.mu1(x)? })
    }
}

/// How Stage-1 outcome regressions are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeModel {
    /// Shared-trunk two-head network.
    Tarnet(NetConfig),
    /// Two independent regressions, one per arm.
    TLearner { base: BaseLearner },
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel::Tarnet(NetConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceConfig {
    pub outcome: OutcomeModel,
    pub propensity: LogisticConfig,
    pub clip: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self { outcome: OutcomeModel::default(), propensity: LogisticConfig::default(), clip: DEFAULT_CLIP }
    }
}

/// Fits the outcome regressions (a two-head network by default) and a
/// clipped logistic propensity model on `data`.
pub fn fit_nuisances(data: &Dataset, cfg: &NuisanceConfig, checkpoint: &Checkpoint) -> Result<NuisanceSet> {
    if data.n_treated() == 0 || data.n_control() == 0 {
        return Err(Error::Positivity("nuisance fitting needs both arms".into()));
    }
    let outcome = fit_outcome_model(data, &cfg.outcome, checkpoint)?;
    let propensity = fit_logistic(data.x.view(), &data.t, &cfg.propensity)?;
    NuisanceSet::new(
        Some(Arc::new(propensity)),
        Arc::new(ArmPredictor { estimator: outcome.clone(), arm: 0 }),
        Arc::new(ArmPredictor { estimator: outcome, arm: 1 }),
        Provenance::Fitted,
        cfg.clip,
    )
}

/// Outcome-only nuisances (no propensity), enough for X pseudo-outcomes and
/// proxy validation targets.
pub fn fit_outcome_nuisances(data: &Dataset, model: &OutcomeModel, checkpoint: &Checkpoint) -> Result<NuisanceSet> {
    let outcome = fit_outcome_model(data, model, checkpoint)?;
    NuisanceSet::new(
        None,
        Arc::new(ArmPredictor { estimator: outcome.clone(), arm: 0 }),
        Arc::new(ArmPredictor { estimator: outcome, arm: 1 }),
        Provenance::Fitted,
        DEFAULT_CLIP,
    )
}

fn fit_outcome_model(data: &Dataset, model: &OutcomeModel, checkpoint: &Checkpoint) -> Result<Arc<FittedEstimator>> {
    let est = match model {
        OutcomeModel::Tarnet(net) => metalearners::fit_tarnet(data, net, checkpoint)?,
        OutcomeModel::TLearner { base } => metalearners::fit_t_learner(data, base, checkpoint)?,
    };
    Ok(Arc::new(est))
}

/// Pseudo-outcomes `Y_phi` for every row of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    pub values: Array1<f64>,
    pub kind: PseudoKind,
}

/// Row-wise pseudo-outcome formula on already-evaluated nuisances.
pub fn pseudo_values(kind: PseudoKind, t: &[u8], y: ArrayView1<f64>, nuis: &NuisanceValues) -> Result<Array1<f64>> {
    let n = t.len();
    let pi = if kind.needs_propensity() {
        let pi = nuis
            .propensity
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{kind} pseudo-outcome needs a propensity model")))?;
        if let Some(bad) = pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Invariant(format!("propensity {bad} outside (0, 1)")));
        }
        Some(pi)
    } else {
        None
    };
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let ti = f64::from(t[i]);
        let (m0, m1) = (nuis.mu0[i], nuis.mu1[i]);
        out[i] = match kind {
            PseudoKind::Ipw => {
                let p = pi.expect("checked")[i];
                (ti - p) / (p * (1.0 - p)) * y[i]
            }
            PseudoKind::X => ti * (y[i] - m0) + (1.0 - ti) * (m1 - y[i]),
            PseudoKind::Dr => {
                let p = pi.expect("checked")[i];
                let mu_t = if t[i] == 1 { m1 } else { m0 };
                (ti - p) / (p * (1.0 - p)) * (y[i] - mu_t) + m1 - m0
            }
        };
    }
    Ok(out)
}

pub fn construct_pseudo(kind: PseudoKind, data: &Dataset, nuis: &NuisanceSet) -> Result<PseudoOutcomes> {
    let values = nuis.evaluate(data.x.view())?;
    let values = pseudo_values(kind, &data.t, data.y.view(), &values)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("non-finite pseudo-outcome".into()));
    }
    Ok(PseudoOutcomes { values, kind })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn values(pi: f64, mu0: f64, mu1: f64) -> NuisanceValues {
        NuisanceValues { propensity: Some(array![pi]), mu0: array![mu0], mu1: array![mu1] }
    }

    #[test]
    fn ipw_hand_values() {
        let v = values(0.5, 0.0, 0.0);
        assert_abs_diff_eq!(pseudo_values(PseudoKind::Ipw, &[1], array![3.0].view(), &v).unwrap()[0], 6.0);
        assert_abs_diff_eq!(pseudo_values(PseudoKind::Ipw, &[0], array![3.0].view(), &v).unwrap()[0], -6.0);
    }

    #[test]
    fn x_hand_values() {
        let v = values(0.5, 0.5, 2.0);
        assert_abs_diff_eq!(pseudo_values(PseudoKind::X, &[1], array![2.0].view(), &v).unwrap()[0], 1.5);
        assert_abs_diff_eq!(pseudo_values(PseudoKind::X, &[0], array![1.0].view(), &v).unwrap()[0], 1.0);
    }

    #[test]
    fn dr_correction_vanishes_on_exact_fit() {
        for (t, y) in [(1u8, 2.5), (0u8, -0.7)] {
            let (m0, m1) = if t == 1 { (1.0, y) } else { (y, 4.0) };
            let v = values(0.3, m0, m1);
            let out = pseudo_values(PseudoKind::Dr, &[t], array![y].view(), &v).unwrap();
            assert_abs_diff_eq!(out[0], m1 - m0, epsilon = 1e-15);
        }
    }

    #[test]
    fn x_with_oracle_noiseless_equals_tau() {
        let x = array![[0.1], [0.5], [-1.2], [2.0]];
        let mu0 = |r: ArrayView1<f64>| r[0].sin();
        let mu1 = |r: ArrayView1<f64>| r[0].sin() + r[0] * r[0];
        let t = vec![0, 1, 1, 0];
        let y: Array1<f64> = x.outer_iter().zip(&t).map(|(r, &ti)| if ti == 1 { mu1(r) } else { mu0(r) }).collect();
        let data = Dataset::new(x.clone(), t, y).unwrap();
        let nuis = NuisanceSet::oracle(|_| 0.5, mu0, mu1);
        let p = construct_pseudo(PseudoKind::X, &data, &nuis).unwrap();
        for (v, r) in p.values.iter().zip(x.outer_iter()) {
            assert_eq!(*v, mu1(r) - mu0(r));
        }
    }

    #[test]
    fn oracle_functions_are_echoed() {
        let nuis = NuisanceSet::oracle(|r| 0.2 + 0.1 * r[0], |r| 3.0 * r[0], |r| -r[0]);
        let x = array![[1.0], [2.0]];
        assert_eq!(nuis.propensity(x.view()).unwrap(), array![0.2 + 0.1, 0.2 + 0.2]);
        assert_eq!(nuis.mu0(x.view()).unwrap(), array![3.0, 6.0]);
        assert_eq!(nuis.mu1(x.view()).unwrap(), array![-1.0, -2.0]);
        assert_eq!(nuis.provenance, Provenance::Oracle);
    }

    #[test]
    fn fitted_propensity_is_clipped() {
        let always = |_: ArrayView1<f64>| 1.0;
        let nuis = NuisanceSet::new(
            Some(Arc::new(FnPredictor(always))),
            Arc::new(FnPredictor(|_: ArrayView1<f64>| 0.0)),
            Arc::new(FnPredictor(|_: ArrayView1<f64>| 0.0)),
            Provenance::Fitted,
            0.01,
        )
        .unwrap();
        assert_eq!(nuis.propensity(array![[0.0]].view()).unwrap()[0], 0.99);
    }

    #[test]
    fn unclipped_degenerate_propensity_is_invariant_failure() {
        let v = values(1.0, 0.0, 0.0);
        assert!(matches!(pseudo_values(PseudoKind::Ipw, &[1], array![1.0].view(), &v), Err(Error::Invariant(_))));
    }

    #[test]
    fn missing_propensity_for_dr_is_config_error() {
        let v = NuisanceValues { propensity: None, mu0: array![0.0], mu1: array![0.0] };
        assert!(matches!(pseudo_values(PseudoKind::Dr, &[1], array![1.0].view(), &v), Err(Error::Config(_))));
        assert!(pseudo_values(PseudoKind::X, &[1], array![1.0].view(), &v).is_ok());
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in PseudoKind::ALL {
            assert_eq!(k.to_string().parse::<PseudoKind>().unwrap(), k);
        }
        assert!("r".parse::<PseudoKind>().is_err());
    }

    proptest! {
        #[test]
        fn clipped_pseudo_outcomes_are_finite(
            raw_pi in 0.0f64..=1.0,
            y in -1e3f64..1e3,
            m0 in -1e3f64..1e3,
            m1 in -1e3f64..1e3,
            t in 0u8..=1,
        ) {
            let pi = raw_pi.clamp(DEFAULT_CLIP, 1.0 - DEFAULT_CLIP);
            let v = values(pi, m0, m1);
            for kind in PseudoKind::ALL {
                let out = pseudo_values(kind, &[t], array![y].view(), &v).unwrap();
                prop_assert!(out[0].is_finite());
            }
        }
    }
}
