//! CATE estimators behind one prediction contract.
//!
//! Indirect learners fit potential-outcome models and difference them
//! (T-, S-learner, TARNet, TARNet-WR, OffsetNet). Direct learners regress a
//! pseudo-outcome on covariates. The H-learner trains two heads on
//!
//! ```text
//! (1 - lambda) * mean (Y - f_T(X))^2 + lambda * mean ((f1 - f0)(X) - Y_phi)^2
//! ```
//!
//! which interpolates between the two families.

pub mod linear;
pub mod net;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::optim::{LinearModel, RidgeConfig, TrainConfig};
use crate::pseudo::{self, NuisanceConfig, NuisanceSet, PseudoKind};

pub use linear::fit_linear_h;
pub use net::{HeadMode, SingleNet, TwoHeadLayout, TwoHeadLossParts, TwoHeadModel, TwoHeadObjective};

/// Format version written into saved estimators.
pub const SPEC_VERSION: u32 = 1;

/// Prediction contract shared by every learner.
pub trait CateEstimator: Send + Sync {
    fn predict_tau(&self, x: ArrayView2<f64>) -> Result<Array1<f64>>;

    /// Control-arm outcome, when the learner has potential-outcome heads.
    fn predict_mu0(&self, _x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        Ok(None)
    }

    fn predict_mu1(&self, _x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        Ok(None)
    }
}

/// Architecture and optimizer settings for neural learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Shared representation widths.
    pub trunk: Vec<usize>,
    /// Hidden widths of each outcome head.
    pub head: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { trunk: vec![32, 32], head: vec![32], train: TrainConfig::default() }
    }
}

impl NetConfig {
    /// Seed for weight initialization, derived from the training seed.
    pub fn init_seed(&self) -> u64 {
        self.train.seed ^ 0x9E37_79B9_7F4A_7C15
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.train.seed = seed;
        out
    }
}

/// Base regression family for T-, S- and direct learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLearner {
    Ridge(RidgeConfig),
    Mlp(NetConfig),
}

impl Default for BaseLearner {
    fn default() -> Self {
        BaseLearner::Mlp(NetConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightRegConfig {
    /// Coefficient on the squared distance between the two heads' parameters.
    pub rho: f64,
}

impl WeightRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Stage-2 model of the H-learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HBase {
    /// Shared trunk with two heads.
    Net(NetConfig),
    /// Two trunk-free linear functions, solved in closed form.
    Linear(RidgeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HLearnerConfig {
    pub lambda: f64,
    pub pseudo_kind: PseudoKind,
    /// Targets the output difference at zero instead of a pseudo-outcome.
    pub zero_pseudo: bool,
    pub base: HBase,
    pub stage1: NuisanceConfig,
    /// Fit nuisances on one half of the data and stage 2 on the other.
    pub sample_split: bool,
}

impl Default for HLearnerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            pseudo_kind: PseudoKind::X,
            zero_pseudo: false,
            base: HBase::Net(NetConfig::default()),
            stage1: NuisanceConfig::default(),
            sample_split: false,
        }
    }
}

impl HLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// What the training loop scores after each epoch to pick the checkpoint.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    /// Keep the epoch with the lowest training loss.
    TrainLoss,
    /// Factual squared error on held-out rows.
    Factual(Dataset),
    /// `mean ((f1 - f0)(x) - imputed)^2` against imputed effects.
    Proxy { x: Array2<f64>, imputed: Array1<f64> },
}

impl Checkpoint {
    /// Proxy checkpoint whose targets are X pseudo-outcomes built from
    /// `nuis` on the validation rows.
    pub fn proxy(val: &Dataset, nuis: &NuisanceSet) -> Result<Self> {
        let values = nuis.evaluate(val.x.view())?;
        let imputed = pseudo::pseudo_values(PseudoKind::X, &val.t, val.y.view(), &values)?;
        Ok(Checkpoint::Proxy { x: val.x.clone(), imputed })
    }
}

/// Both terms of the H-learner loss on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HLoss {
    pub total: f64,
    /// Mean factual squared error.
    pub indirect: f64,
    /// Mean squared gap between `f1 - f0` and the pseudo-outcome.
    pub direct: f64,
}

pub fn h_loss(
    y: ArrayView1<f64>,
    t: &[u8],
    f0: ArrayView1<f64>,
    f1: ArrayView1<f64>,
    pseudo: ArrayView1<f64>,
    lambda: f64,
) -> HLoss {
    let m = y.len() as f64;
    let mut indirect = 0.0;
    let mut direct = 0.0;
    for i in 0..y.len() {
        let f = if t[i] == 1 { f1[i] } else { f0[i] };
        indirect += (y[i] - f).powi(2);
        direct += (f1[i] - f0[i] - pseudo[i]).powi(2);
    }
    let (indirect, direct) = (indirect / m, direct / m);
    let total = if lambda == 0.0 {
        indirect
    } else if lambda == 1.0 {
        direct
    } else {
        (1.0 - lambda) * indirect + lambda * direct
    };
    HLoss { total, indirect, direct }
}

/// A trained estimator in the (possibly standardized) space it was fit in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FittedEstimator {
    LinearT {
        mu0: LinearModel,
        mu1: LinearModel,
    },
    /// Ridge on `[x, t]`.
    LinearS {
        model: LinearModel,
    },
    LinearDirect {
        tau: LinearModel,
    },
    LinearH {
        f0: LinearModel,
        f1: LinearModel,
    },
    TwoHead(TwoHeadModel),
    /// Network on `[x, t]`.
    NetS(SingleNet),
    NetDirect(SingleNet),
}

fn check_linear(m: &LinearModel, x: ArrayView2<f64>) -> Result<()> {
    if m.coef.len() != x.ncols() {
        return Err(Error::Dimension { expected: m.coef.len(), actual: x.ncols(), context: "estimator input columns" });
    }
    Ok(())
}

fn linear_with_t(m: &LinearModel, x: ArrayView2<f64>, t: f64) -> Result<Array1<f64>> {
    let design = net::with_treatment(x, t);
    check_linear(m, design.view())?;
    Ok(m.predict(design.view()))
}

impl FittedEstimator {
    fn outcomes(&self, x: ArrayView2<f64>) -> Result<Option<(Array1<f64>, Array1<f64>)>> {
        Ok(match self {
            FittedEstimator::LinearT { mu0, mu1 } | FittedEstimator::LinearH { f0: mu0, f1: mu1 } => {
                check_linear(mu0, x)?;
                Some((mu0.predict(x), mu1.predict(x)))
            }
            FittedEstimator::LinearS { model } => Some((linear_with_t(model, x, 0.0)?, linear_with_t(model, x, 1.0)?)),
            FittedEstimator::TwoHead(m) => Some(m.outcomes(x)?),
            FittedEstimator::NetS(m) => {
                Some((m.predict(net::with_treatment(x, 0.0).view())?, m.predict(net::with_treatment(x, 1.0).view())?))
            }
            FittedEstimator::LinearDirect { .. } | FittedEstimator::NetDirect(_) => None,
        })
    }

    pub fn has_outcome_heads(&self) -> bool {
        !matches!(self, FittedEstimator::LinearDirect { .. } | FittedEstimator::NetDirect(_))
    }
}

impl CateEstimator for FittedEstimator {
    fn predict_tau(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            FittedEstimator::LinearDirect { tau } => {
                check_linear(tau, x)?;
                Ok(tau.predict(x))
            }
            FittedEstimator::NetDirect(m) => m.predict(x),
            FittedEstimator::TwoHead(m) if m.layout.mode == HeadMode::Offset => {
                // mu1 is defined as mu0 + tau, so read tau from its head.
                m.tau(x)
            }
            _ => {
                let (f0, f1) = self.outcomes(x)?.expect("has heads");
                Ok(f1 - f0)
            }
        }
    }

    fn predict_mu0(&self, x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        Ok(self.outcomes(x)?.map(|(f0, _)| f0))
    }

    fn predict_mu1(&self, x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        Ok(self.outcomes(x)?.map(|(_, f1)| f1))
    }
}

/// A fitted estimator together with the standardization it was trained
/// under, so predictions take and return raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec_version: u32,
    pub learner: String,
    pub estimator: FittedEstimator,
    pub standardization: Option<StandardizationStats>,
}

impl TrainedModel {
    pub fn new(
        learner: impl Into<String>,
        estimator: FittedEstimator,
        standardization: Option<StandardizationStats>,
    ) -> Self {
        Self { spec_version: SPEC_VERSION, learner: learner.into(), estimator, standardization }
    }

    fn input(&self, x: ArrayView2<f64>) -> Result<Option<Array2<f64>>> {
        match &self.standardization {
            Some(s) => {
                if s.mean.len() != x.ncols() {
                    return Err(Error::Dimension {
                        expected: s.mean.len(),
                        actual: x.ncols(),
                        context: "estimator input columns",
                    });
                }
                Ok(Some(s.transform_x(x)))
            }
            None => Ok(None),
        }
    }

    fn outcome_scale(&self) -> (f64, f64) {
        self.standardization.as_ref().and_then(|s| s.outcome).unwrap_or((0.0, 1.0))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.spec_version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "unsupported estimator format version {} (expected {SPEC_VERSION})",
                model.spec_version
            )));
        }
        Ok(model)
    }
}

impl CateEstimator for TrainedModel {
    fn predict_tau(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let z = self.input(x)?;
        let tau = self.estimator.predict_tau(z.as_ref().map_or(x, |z| z.view()))?;
        let (_, s) = self.outcome_scale();
        Ok(if s == 1.0 { tau } else { tau * s })
    }

    fn predict_mu0(&self, x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        let z = self.input(x)?;
        let (m, s) = self.outcome_scale();
        Ok(self.estimator.predict_mu0(z.as_ref().map_or(x, |z| z.view()))?.map(|f| {
            if s == 1.0 && m == 0.0 {
                f
            } else {
                f * s + m
            }
        }))
    }

    fn predict_mu1(&self, x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        let z = self.input(x)?;
        let (m, s) = self.outcome_scale();
        Ok(self.estimator.predict_mu1(z.as_ref().map_or(x, |z| z.view()))?.map(|f| {
            if s == 1.0 && m == 0.0 {
                f
            } else {
                f * s + m
            }
        }))
    }
}

fn require_both_arms(data: &Dataset, who: &str) -> Result<()> {
    if data.n_treated() == 0 || data.n_control() == 0 {
        return Err(Error::Positivity(format!("{who} needs treated and control units")));
    }
    Ok(())
}

/// Two independent outcome regressions, one per arm.
pub fn fit_t_learner(data: &Dataset, base: &BaseLearner, checkpoint: &Checkpoint) -> Result<FittedEstimator> {
    require_both_arms(data, "T-learner")?;
    match base {
        BaseLearner::Ridge(cfg) => {
            let (mu0, mu1) = linear::t_learner(data, cfg)?;
            Ok(FittedEstimator::LinearT { mu0, mu1 })
        }
        BaseLearner::Mlp(net) => two_head(data, net, false, HeadMode::Potential, 0.0, checkpoint),
    }
}

/// One regression on `[x, t]`.
pub fn fit_s_learner(data: &Dataset, base: &BaseLearner, checkpoint: &Checkpoint) -> Result<FittedEstimator> {
    match base {
        BaseLearner::Ridge(cfg) => Ok(FittedEstimator::LinearS { model: linear::s_learner(data, cfg)? }),
        BaseLearner::Mlp(cfg) => {
            let design = net::with_treatment(data.x.view(), 0.0);
            let mut design = design;
            for (i, &t) in data.t.iter().enumerate() {
                design[[i, data.d()]] = f64::from(t);
            }
            let scorer: Option<Box<dyn Fn(&SingleNet) -> f64 + '_>> = match checkpoint {
                Checkpoint::TrainLoss => None,
                Checkpoint::Factual(val) => {
                    let mut vx = net::with_treatment(val.x.view(), 0.0);
                    for (i, &t) in val.t.iter().enumerate() {
                        vx[[i, val.d()]] = f64::from(t);
                    }
                    Some(Box::new(move |m: &SingleNet| {
                        let pred = m.predict(vx.view()).expect("validated");
                        net::mean_sq_diff(pred.view(), val.y.view())
                    }))
                }
                Checkpoint::Proxy { x, imputed } => {
                    let x0 = net::with_treatment(x.view(), 0.0);
                    let x1 = net::with_treatment(x.view(), 1.0);
                    Some(Box::new(move |m: &SingleNet| {
                        let tau = m.predict(x1.view()).expect("validated") - m.predict(x0.view()).expect("validated");
                        net::mean_sq_diff(tau.view(), imputed.view())
                    }))
                }
            };
            let model = net::fit_regression_net(&design, &data.y, cfg, scorer.as_deref())?;
            Ok(FittedEstimator::NetS(model))
        }
    }
}

fn two_head(
    data: &Dataset,
    cfg: &NetConfig,
    shared_trunk: bool,
    mode: HeadMode,
    rho: f64,
    checkpoint: &Checkpoint,
) -> Result<FittedEstimator> {
    let (model, _) = net::fit_two_head(
        net::TwoHeadFit { data, net: cfg, shared_trunk, mode, pseudo: None, lambda: 0.0, rho },
        checkpoint,
    )?;
    Ok(FittedEstimator::TwoHead(model))
}

/// Shared trunk, two heads, factual squared error.
pub fn fit_tarnet(data: &Dataset, cfg: &NetConfig, checkpoint: &Checkpoint) -> Result<FittedEstimator> {
    require_both_arms(data, "TARNet")?;
    two_head(data, cfg, true, HeadMode::Potential, 0.0, checkpoint)
}

/// TARNet plus `rho * ||head0 - head1||^2` over all head parameters.
pub fn fit_tarnet_wr(
    data: &Dataset,
    cfg: &NetConfig,
    wr: &WeightRegConfig,
    checkpoint: &Checkpoint,
) -> Result<FittedEstimator> {
    wr.validate()?;
    require_both_arms(data, "TARNet-WR")?;
    two_head(data, cfg, true, HeadMode::Potential, wr.rho, checkpoint)
}

/// Heads output `mu0` and the offset `tau`, with the offset head starting at zero.
pub fn fit_offsetnet(data: &Dataset, cfg: &NetConfig, checkpoint: &Checkpoint) -> Result<FittedEstimator> {
    require_both_arms(data, "OffsetNet")?;
    two_head(data, cfg, true, HeadMode::Offset, 0.0, checkpoint)
}

/// Regresses pseudo-outcomes built from `nuis` on covariates.
pub fn fit_direct(
    data: &Dataset,
    kind: PseudoKind,
    nuis: &NuisanceSet,
    base: &BaseLearner,
    checkpoint: &Checkpoint,
) -> Result<FittedEstimator> {
    let target = pseudo::construct_pseudo(kind, data, nuis)?.values;
    fit_direct_on(data.x.view(), &target, base, checkpoint)
}

/// Regresses precomputed targets on covariates.
pub fn fit_direct_on(
    x: ArrayView2<f64>,
    target: &Array1<f64>,
    base: &BaseLearner,
    checkpoint: &Checkpoint,
) -> Result<FittedEstimator> {
    match base {
        BaseLearner::Ridge(cfg) => {
            Ok(FittedEstimator::LinearDirect { tau: crate::optim::fit_ridge(x, target.view(), cfg)? })
        }
        BaseLearner::Mlp(cfg) => {
            let scorer: Option<Box<dyn Fn(&SingleNet) -> f64 + '_>> = match checkpoint {
                Checkpoint::TrainLoss => None,
                Checkpoint::Factual(_) => {
                    return Err(Error::Config("direct learners have no outcome heads to score on factual data".into()))
                }
                Checkpoint::Proxy { x, imputed } => Some(Box::new(move |m: &SingleNet| {
                    let tau = m.predict(x.view()).expect("validated");
                    net::mean_sq_diff(tau.view(), imputed.view())
                })),
            };
            let x = x.to_owned();
            Ok(FittedEstimator::NetDirect(net::fit_regression_net(&x, target, cfg, scorer.as_deref())?))
        }
    }
}

/// Fits the H-learner. When `nuis` is `None` and pseudo-outcomes are needed,
/// Stage 1 is fit from `cfg.stage1` (on a random half when
/// `cfg.sample_split` is set, with Stage 2 on the other half).
pub fn fit_h_learner(
    data: &Dataset,
    cfg: &HLearnerConfig,
    nuis: Option<&NuisanceSet>,
    checkpoint: &Checkpoint,
) -> Result<FittedEstimator> {
    cfg.validate()?;
    let (stage2, pseudo) = if cfg.zero_pseudo {
        (None, None)
    } else if let Some(n) = nuis {
        (None, Some(pseudo::construct_pseudo(cfg.pseudo_kind, data, n)?.values))
    } else if cfg.sample_split {
        let mut idx: Vec<usize> = (0..data.n()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(h_seed(cfg)));
        let (a, b) = idx.split_at(data.n() / 2);
        let d1 = data.select(a);
        let d2 = data.select(b);
        let fitted = pseudo::fit_nuisances(&d1, &cfg.stage1, &Checkpoint::TrainLoss)?;
        let values = pseudo::construct_pseudo(cfg.pseudo_kind, &d2, &fitted)?.values;
        (Some(d2), Some(values))
    } else {
        let fitted = pseudo::fit_nuisances(data, &cfg.stage1, &Checkpoint::TrainLoss)?;
        (None, Some(pseudo::construct_pseudo(cfg.pseudo_kind, data, &fitted)?.values))
    };
    let data = stage2.as_ref().unwrap_or(data);
    require_both_arms(data, "H-learner")?;
    match &cfg.base {
        HBase::Linear(ridge) => {
            let zeros;
            let target = match &pseudo {
                Some(p) => p.view(),
                None => {
                    zeros = Array1::zeros(data.n());
                    zeros.view()
                }
            };
            let (f0, f1) = fit_linear_h(data.x.view(), &data.t, data.y.view(), target, cfg.lambda, ridge)?;
            Ok(FittedEstimator::LinearH { f0, f1 })
        }
        HBase::Net(net_cfg) => {
            let (model, _) = net::fit_two_head(
                net::TwoHeadFit {
                    data,
                    net: net_cfg,
                    shared_trunk: true,
                    mode: HeadMode::Potential,
                    pseudo: pseudo.as_ref(),
                    lambda: cfg.lambda,
                    rho: 0.0,
                },
                checkpoint,
            )?;
            Ok(FittedEstimator::TwoHead(model))
        }
    }
}

fn h_seed(cfg: &HLearnerConfig) -> u64 {
    match &cfg.base {
        HBase::Net(n) => n.train.seed,
        HBase::Linear(_) => 0,
    }
}
