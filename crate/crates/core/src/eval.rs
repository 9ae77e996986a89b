//! PEHE, proxy validation losses, lambda selection and run aggregation.

use log::warn;
use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metalearners::{fit_h_learner, CateEstimator, Checkpoint, FittedEstimator, HLearnerConfig};
use crate::pseudo::{fit_outcome_nuisances, pseudo_values, NuisanceSet, NuisanceValues, OutcomeModel, PseudoKind};

/// Smallest per-arm validation count for fitting validation outcome models.
pub const MIN_VALIDATION_ARM: usize = 5;

/// Mean squared CATE error and its square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pehe {
    pub eps: f64,
    pub root: f64,
}

pub fn pehe_values(tau_hat: ArrayView1<f64>, tau: ArrayView1<f64>) -> Result<Pehe> {
    if tau_hat.len() != tau.len() {
        return Err(Error::Dimension { expected: tau.len(), actual: tau_hat.len(), context: "PEHE predictions" });
    }
    if tau.is_empty() {
        return Err(Error::Validation("PEHE over zero rows".into()));
    }
    let eps = tau_hat.iter().zip(tau).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / tau.len() as f64;
    Ok(Pehe { eps, root: eps.sqrt() })
}

pub fn pehe(est: &dyn CateEstimator, x: ArrayView2<f64>, tau: ArrayView1<f64>) -> Result<Pehe> {
    let tau_hat = est.predict_tau(x)?;
    pehe_values(tau_hat.view(), tau)
}

/// `mean (tau_hat - [t (y - mu0) + (1 - t)(mu1 - y)])^2` over validation rows.
pub fn proxy_pehe(tau_hat: ArrayView1<f64>, val: &Dataset, mu0: ArrayView1<f64>, mu1: ArrayView1<f64>) -> Result<f64> {
    let values = NuisanceValues { propensity: None, mu0: mu0.to_owned(), mu1: mu1.to_owned() };
    let imputed = pseudo_values(PseudoKind::X, &val.t, val.y.view(), &values)?;
    Ok(pehe_values(tau_hat, imputed.view())?.eps)
}

/// Outcome models used only to score lambda candidates.
#[derive(Debug, Clone)]
pub struct ValidationNuisance {
    pub nuisances: NuisanceSet,
    /// Set when the validation arms were too small and Stage-1 models were
    /// used instead.
    pub fell_back: bool,
}

impl ValidationNuisance {
    /// Fits `model` on the validation rows only; `checkpoint` picks the
    /// epoch to keep and must not look at validation outcomes for networks
    /// that would otherwise overfit. With fewer than [`MIN_VALIDATION_ARM`]
    /// units in an arm the Stage-1 models are reused.
    pub fn fit(val: &Dataset, model: &OutcomeModel, stage1: &NuisanceSet, checkpoint: &Checkpoint) -> Result<Self> {
        let (n0, n1) = (val.n_control(), val.n_treated());
        if n0 == 0 || n1 == 0 {
            return Err(Error::Positivity("validation split lacks treated or control units".into()));
        }
        if n0.min(n1) < MIN_VALIDATION_ARM {
            warn!("validation arms have {n0} control / {n1} treated units; reusing Stage-1 outcome models");
            return Ok(Self { nuisances: stage1.clone(), fell_back: true });
        }
        let nuisances = fit_outcome_nuisances(val, model, checkpoint)?;
        Ok(Self { nuisances, fell_back: false })
    }

    /// Imputed effects on `val` built from these models.
    pub fn imputed(&self, val: &Dataset) -> Result<Array1<f64>> {
        let values = self.nuisances.evaluate(val.x.view())?;
        pseudo_values(PseudoKind::X, &val.t, val.y.view(), &values)
    }
}

/// One lambda candidate.
#[derive(Debug, Clone)]
pub struct LambdaCandidate {
    pub lambda: f64,
    pub criterion: f64,
    pub estimator: FittedEstimator,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub candidates: Vec<LambdaCandidate>,
    pub chosen: usize,
}

impl LambdaSelection {
    pub fn chosen_lambda(&self) -> f64 {
        self.candidates[self.chosen].lambda
    }

    pub fn chosen_estimator(&self) -> &FittedEstimator {
        &self.candidates[self.chosen].estimator
    }

    pub fn grid(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.lambda).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.criterion).collect()
    }
}

/// Index of the smallest score; ties go to the smaller lambda.
pub fn argmin_lambda(grid: &[f64], scores: &[f64]) -> Result<usize> {
    if grid.is_empty() || grid.len() != scores.len() {
        return Err(Error::Config("lambda grid must be nonempty and match its scores".into()));
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let better = scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]);
        if better || scores[best].is_nan() {
            best = i;
        }
    }
    Ok(best)
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Config(format!("lambda {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Scores pre-fitted candidates against the validation outcome models.
pub fn select_among(
    candidates: Vec<(f64, FittedEstimator)>,
    val: &Dataset,
    check: &ValidationNuisance,
) -> Result<LambdaSelection> {
    let imputed = check.imputed(val)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (lambda, estimator) in candidates {
        let tau = estimator.predict_tau(val.x.view())?;
        let criterion = pehe_values(tau.view(), imputed.view())?.eps;
        scored.push(LambdaCandidate { lambda, criterion, estimator });
    }
    let grid: Vec<f64> = scored.iter().map(|c| c.lambda).collect();
    let scores: Vec<f64> = scored.iter().map(|c| c.criterion).collect();
    let chosen = argmin_lambda(&grid, &scores)?;
    Ok(LambdaSelection { candidates: scored, chosen })
}

/// Trains one H-learner per grid value on `train` (checkpointed by
/// `checkpoint`) and keeps the one closest to the validation-fitted imputed
/// effects.
pub fn select_lambda(
    train: &Dataset,
    val: &Dataset,
    grid: &[f64],
    cfg: &HLearnerConfig,
    stage1: Option<&NuisanceSet>,
    checkpoint: &Checkpoint,
    check: &ValidationNuisance,
) -> Result<LambdaSelection> {
    validate_grid(grid)?;
    let fits: Vec<Result<(f64, FittedEstimator)>> = grid
        .par_iter()
        .map(|&lambda| {
            let cfg = HLearnerConfig { lambda, ..cfg.clone() };
            fit_h_learner(train, &cfg, stage1, checkpoint).map(|e| (lambda, e))
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    select_among(fits, val, check)
}

/// Mean and standard error (sample std over `sqrt(runs)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub runs: usize,
}

/// Order-independent: values are sorted before summation.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Validation("cannot aggregate zero runs".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() < 2 {
        0.0
    } else {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(Summary { mean, se, runs: v.len() })
}

/// In-sample and out-of-sample root-PEHE of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPehe {
    pub pehe_in: f64,
    pub pehe_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pehe_in: Summary,
    pub pehe_out: Summary,
    pub runs_in: Vec<f64>,
    pub runs_out: Vec<f64>,
}

pub fn aggregate(runs: &[RunPehe]) -> Result<EvaluationReport> {
    let runs_in: Vec<f64> = runs.iter().map(|r| r.pehe_in).collect();
    let runs_out: Vec<f64> = runs.iter().map(|r| r.pehe_out).collect();
    if let Some(bad) = runs_in.iter().chain(&runs_out).find(|v| !(**v >= 0.0)) {
        return Err(Error::Invariant(format!("root-PEHE {bad} is not a nonnegative number")));
    }
    Ok(EvaluationReport { pehe_in: summarize(&runs_in)?, pehe_out: summarize(&runs_out)?, runs_in, runs_out })
}
