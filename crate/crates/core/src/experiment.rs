//! Seeded experiment runs: generate or load data, split, standardize, fit
//! every configured learner, evaluate, and write results.
//!
//! Runs are independent and may execute on a thread pool. Every random draw
//! in a run descends from `run_seed(master, run)`, so results do not depend on
//! scheduling and adding runs leaves earlier runs untouched.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BaseKind, DatasetSpec, ExperimentConfig, LearnerSpec, ModelSettings};
use crate::data::{load_csv, split, Dataset, GroundTruth, StandardizationStats};
use crate::dgp::{generate_semi_synthetic, generate_toy, SemiSyntheticSurface};
use crate::error::{Error, Result};
use crate::eval::{pehe, select_lambda, summarize, Summary, ValidationNuisance};
use crate::metalearners::{
    fit_direct, fit_h_learner, fit_offsetnet, fit_s_learner, fit_t_learner, fit_tarnet, fit_tarnet_wr, CateEstimator,
    Checkpoint, FittedEstimator, HBase, HLearnerConfig, NetConfig, TrainedModel, WeightRegConfig,
};
use crate::pseudo::{fit_nuisances, NuisanceSet};

/// Stream ids for the seeds drawn inside one run.
const STREAM_DATA: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_STAGE1: u64 = 2;
const STREAM_LEARNERS: u64 = 3;
const STREAM_CHECK: u64 = 4;

/// Seed of run `index`: the first word of ChaCha stream `index` keyed by the
/// master seed.
pub fn run_seed(master: u64, index: u64) -> u64 {
    sub_seed(master, index)
}

fn sub_seed(key: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed handed to the data generator in run `index`.
pub fn data_seed(master: u64, index: u64) -> u64 {
    sub_seed(run_seed(master, index), STREAM_DATA)
}

/// One point on an H-learner's lambda path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    /// Validation criterion against the validation-fitted outcome models.
    pub criterion: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pehe_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pehe_out: Option<f64>,
}

/// One learner in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub learner: String,
    /// Chosen or fixed lambda for H-learners.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Root-PEHE on training and validation rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pehe_in: Option<f64>,
    /// Root-PEHE on test rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pehe_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_path: Option<Vec<LambdaPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fallback: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Per-run facts about the generated data, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// `|S0 ∩ S1|` for semi-synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<usize>,
}

/// Everything a single run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub info: Option<RunInfo>,
    pub records: Vec<ResultRecord>,
    /// Fitted models in learner order, when requested.
    pub models: Vec<Option<TrainedModel>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub keep_models: bool,
    /// Treat every H-learner as unfixed so the whole grid is fitted.
    pub sweep_all_lambdas: bool,
}

/// A dataset with optional truth and, for semi-synthetic draws, its surface.
pub struct Draw {
    pub data: Dataset,
    pub truth: Option<GroundTruth>,
    pub surface: Option<SemiSyntheticSurface>,
}

/// Generates (or loads) the dataset for one run.
pub fn draw_dataset(spec: &DatasetSpec, seed: u64) -> Result<Draw> {
    match spec {
        DatasetSpec::Toy(cfg) => {
            let (data, truth) = generate_toy(cfg, seed)?;
            Ok(Draw { data, truth: Some(truth), surface: None })
        }
        DatasetSpec::SemiSynthetic(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let s = generate_semi_synthetic(&cfg)?;
            Ok(Draw { data: s.data, truth: Some(s.truth), surface: Some(s.surface) })
        }
        DatasetSpec::Csv { path, schema } => {
            let (data, truth) = load_csv(path, schema)?;
            Ok(Draw { data, truth, surface: None })
        }
    }
}

/// Standardized training and validation data plus the statistics used.
struct Fitting {
    train: Dataset,
    val: Dataset,
    stats: StandardizationStats,
}

/// Raw-unit covariates and true effects for evaluation.
struct EvalSets {
    x_in: Array2<f64>,
    x_out: Array2<f64>,
    tau_in: Option<Array1<f64>>,
    tau_out: Option<Array1<f64>>,
}

fn standardize_pair(settings: &ModelSettings, train_raw: &Dataset, val_raw: &Dataset) -> Result<Fitting> {
    let mut stats = StandardizationStats::fit(train_raw, settings.standardize_outcome)?;
    if !settings.standardize_features {
        stats.mean.iter_mut().for_each(|m| *m = 0.0);
        stats.std.iter_mut().for_each(|s| *s = 1.0);
    }
    Ok(Fitting { train: stats.apply(train_raw), val: stats.apply(val_raw), stats })
}

fn prepare(cfg: &ExperimentConfig, draw: &Draw, seed: u64) -> Result<(Fitting, EvalSets, [usize; 3])> {
    let sp = split(draw.data.n(), cfg.split, sub_seed(seed, STREAM_SPLIT))?;
    let fitting = standardize_pair(&cfg.model_settings(), &draw.data.select(&sp.train), &draw.data.select(&sp.val))?;
    let in_idx: Vec<usize> = sp.train.iter().chain(&sp.val).copied().collect();
    let (tau_in, tau_out) = match &draw.truth {
        Some(g) => (Some(g.select(&in_idx).tau), Some(g.select(&sp.test).tau)),
        None => (None, None),
    };
    let eval = EvalSets { x_in: draw.data.select(&in_idx).x, x_out: draw.data.select(&sp.test).x, tau_in, tau_out };
    Ok((fitting, eval, [sp.train.len(), sp.val.len(), sp.test.len()]))
}

fn uses_network(l: &LearnerSpec) -> bool {
    match l {
        LearnerSpec::TLearner { base }
        | LearnerSpec::SLearner { base }
        | LearnerSpec::Direct { base, .. }
        | LearnerSpec::HLearner { base, .. } => *base == BaseKind::Mlp,
        _ => true,
    }
}

fn needs_stage1(l: &LearnerSpec) -> bool {
    match l {
        LearnerSpec::Direct { .. } => true,
        LearnerSpec::HLearner { zero_pseudo, lambda, .. } => !zero_pseudo || lambda.is_none() || uses_network(l),
        other => uses_network(other),
    }
}

/// Shared per-run state handed to each learner fit.
struct RunContext<'a> {
    settings: &'a ModelSettings,
    opts: RunOptions,
    fitting: &'a Fitting,
    net: NetConfig,
    check_net: NetConfig,
    stage1: Option<NuisanceSet>,
    checkpoint: Checkpoint,
    check: OnceLock<std::result::Result<ValidationNuisance, String>>,
}

struct Fitted {
    estimator: FittedEstimator,
    lambda: Option<f64>,
    path: Option<Vec<(f64, f64, FittedEstimator)>>,
    fallback: Option<bool>,
}

impl<'a> RunContext<'a> {
    /// Draws network seeds from `seed` and fits Stage 1 when any learner
    /// needs pseudo-outcomes or a proxy checkpoint.
    fn new(
        settings: &'a ModelSettings,
        fitting: &'a Fitting,
        learners: &[LearnerSpec],
        seed: u64,
        opts: RunOptions,
    ) -> Result<Self> {
        let net = settings.network.with_seed(sub_seed(seed, STREAM_LEARNERS));
        let stage1_net = settings.network.with_seed(sub_seed(seed, STREAM_STAGE1));
        let check_net = settings.network.with_seed(sub_seed(seed, STREAM_CHECK));
        let (stage1, checkpoint) = if learners.iter().any(needs_stage1) {
            let n = fit_nuisances(
                &fitting.train,
                &settings.nuisance_config(&stage1_net),
                &Checkpoint::Factual(fitting.val.clone()),
            )?;
            let c = Checkpoint::proxy(&fitting.val, &n)?;
            (Some(n), c)
        } else {
            (None, Checkpoint::TrainLoss)
        };
        Ok(Self { settings, opts, fitting, net, check_net, stage1, checkpoint, check: OnceLock::new() })
    }

    fn stage1(&self) -> Result<&NuisanceSet> {
        self.stage1.as_ref().ok_or_else(|| Error::Invariant("stage-1 nuisances were not fitted".into()))
    }

    fn validation_check(&self) -> Result<&ValidationNuisance> {
        let cell = self.check.get_or_init(|| {
            let stage1 = self.stage1().map_err(|e| e.to_string())?;
            // Parameters see validation rows only; the kept epoch is chosen
            // by factual error on the training split.
            let checkpoint = Checkpoint::Factual(self.fitting.train.clone());
            let model = self.settings.outcome_model(&self.check_net);
            ValidationNuisance::fit(&self.fitting.val, &model, stage1, &checkpoint).map_err(|e| e.to_string())
        });
        cell.as_ref().map_err(|e| Error::Validation(e.clone()))
    }

    fn fit(&self, spec: &LearnerSpec) -> Result<Fitted> {
        let train = &self.fitting.train;
        let ck = &self.checkpoint;
        let base = |b: &BaseKind| self.settings.base_learner(*b, &self.net);
        let plain = |estimator| Fitted { estimator, lambda: None, path: None, fallback: None };
        Ok(match spec {
            LearnerSpec::TLearner { base: b } => plain(fit_t_learner(train, &base(b), ck)?),
            LearnerSpec::SLearner { base: b } => plain(fit_s_learner(train, &base(b), ck)?),
            LearnerSpec::Tarnet => plain(fit_tarnet(train, &self.net, ck)?),
            LearnerSpec::TarnetWr { rho } => {
                plain(fit_tarnet_wr(train, &self.net, &WeightRegConfig { rho: *rho }, ck)?)
            }
            LearnerSpec::Offsetnet => plain(fit_offsetnet(train, &self.net, ck)?),
            LearnerSpec::Direct { pseudo, base: b } => plain(fit_direct(train, *pseudo, self.stage1()?, &base(b), ck)?),
            LearnerSpec::HLearner { pseudo, lambda, zero_pseudo, base: b } => {
                let h = HLearnerConfig {
                    lambda: lambda.unwrap_or(0.0),
                    pseudo_kind: *pseudo,
                    zero_pseudo: *zero_pseudo,
                    base: match b {
                        BaseKind::Mlp => HBase::Net(self.net.clone()),
                        BaseKind::Ridge => HBase::Linear(self.settings.ridge),
                    },
                    stage1: self.settings.nuisance_config(&self.net),
                    sample_split: false,
                };
                let nuis = if *zero_pseudo { None } else { Some(self.stage1()?) };
                match lambda {
                    Some(l) if !self.opts.sweep_all_lambdas => Fitted {
                        estimator: fit_h_learner(train, &h, nuis, ck)?,
                        lambda: Some(*l),
                        path: None,
                        fallback: None,
                    },
                    _ => {
                        let check = self.validation_check()?;
                        let grid = &self.settings.lambda_grid;
                        let sel = select_lambda(train, &self.fitting.val, grid, &h, nuis, ck, check)?;
                        let chosen = sel.chosen_lambda();
                        let estimator = sel.chosen_estimator().clone();
                        let path = sel.candidates.into_iter().map(|c| (c.lambda, c.criterion, c.estimator)).collect();
                        Fitted {
                            estimator,
                            lambda: Some(lambda.unwrap_or(chosen)),
                            path: Some(path),
                            fallback: Some(check.fell_back),
                        }
                    }
                }
            }
        })
    }
}

fn evaluate(model: &dyn CateEstimator, sets: &EvalSets) -> Result<(Option<f64>, Option<f64>)> {
    let score = |x: &Array2<f64>, tau: &Option<Array1<f64>>| -> Result<Option<f64>> {
        match tau {
            Some(t) => Ok(Some(pehe(model, x.view(), t.view())?.root)),
            None => Ok(None),
        }
    };
    Ok((score(&sets.x_in, &sets.tau_in)?, score(&sets.x_out, &sets.tau_out)?))
}

/// A single learner fitted on caller-supplied data.
#[derive(Debug, Clone)]
pub struct LearnerFit {
    pub model: TrainedModel,
    /// Chosen or fixed lambda for H-learners.
    pub lambda: Option<f64>,
    /// Set when lambda selection reused Stage-1 outcome models.
    pub validation_fallback: Option<bool>,
}

/// Fits one learner on raw training rows, using `val` for checkpointing and
/// lambda selection. Network seeds derive from `seed`.
pub fn fit_learner(
    settings: &ModelSettings,
    spec: &LearnerSpec,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<LearnerFit> {
    settings.validate()?;
    spec.validate()?;
    let fitting = standardize_pair(settings, train, val)?;
    let ctx = RunContext::new(settings, &fitting, std::slice::from_ref(spec), seed, RunOptions::default())?;
    let f = ctx.fit(spec)?;
    Ok(LearnerFit {
        model: TrainedModel::new(spec.id(), f.estimator, Some(fitting.stats.clone())),
        lambda: f.lambda,
        validation_fallback: f.fallback,
    })
}

/// Runs every learner on one dataset draw. Run-level failures (data, split,
/// Stage 1) mark every learner record as failed.
pub fn run_once(cfg: &ExperimentConfig, setting: Option<f64>, run: usize, opts: RunOptions, hash: &str) -> RunOutput {
    let seed = run_seed(cfg.seed, run as u64);
    let blank = |learner: String| ResultRecord {
        config_hash: hash.to_string(),
        setting,
        run,
        seed,
        learner,
        lambda: None,
        pehe_in: None,
        pehe_out: None,
        lambda_path: None,
        validation_fallback: None,
        wall_time_s: None,
        error: None,
    };
    let fail_all = |e: Error| {
        warn!("run {run} failed: {e}");
        RunOutput {
            info: None,
            records: cfg
                .learners
                .iter()
                .map(|l| ResultRecord { error: Some(e.to_string()), ..blank(l.id()) })
                .collect(),
            models: vec![None; cfg.learners.len()],
        }
    };

    let settings = cfg.model_settings();
    let setup = || -> Result<(Draw, Fitting, EvalSets, [usize; 3])> {
        let spec = cfg.dataset_for(setting)?;
        let draw = draw_dataset(&spec, sub_seed(seed, STREAM_DATA))?;
        let (fitting, eval, sizes) = prepare(cfg, &draw, seed)?;
        Ok((draw, fitting, eval, sizes))
    };
    let (draw, fitting, sets, sizes) = match setup() {
        Ok(v) => v,
        Err(e) => return fail_all(e),
    };
    let info = RunInfo {
        setting,
        run,
        seed,
        n_train: sizes[0],
        n_val: sizes[1],
        n_test: sizes[2],
        overlap: draw.surface.as_ref().map(SemiSyntheticSurface::overlap),
    };
    let ctx = match RunContext::new(&settings, &fitting, &cfg.learners, seed, opts) {
        Ok(c) => c,
        Err(e) => return fail_all(e),
    };

    let mut records = Vec::with_capacity(cfg.learners.len());
    let mut models = Vec::with_capacity(cfg.learners.len());
    for spec in &cfg.learners {
        let id = spec.id();
        let start = Instant::now();
        let wrap = |est| TrainedModel::new(id.clone(), est, Some(fitting.stats.clone()));
        let outcome = ctx.fit(spec).and_then(|f| {
            let model = wrap(f.estimator);
            let (pehe_in, pehe_out) = evaluate(&model, &sets)?;
            let path = match f.path {
                Some(points) => Some(
                    points
                        .into_iter()
                        .map(|(lambda, criterion, est)| {
                            let (pi, po) = evaluate(&wrap(est), &sets)?;
                            Ok(LambdaPoint { lambda, criterion, pehe_in: pi, pehe_out: po })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            Ok((model, f.lambda, f.fallback, pehe_in, pehe_out, path))
        });
        let elapsed = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
        match outcome {
            Ok((model, lambda, fallback, pehe_in, pehe_out, path)) => {
                records.push(ResultRecord {
                    lambda,
                    pehe_in,
                    pehe_out,
                    lambda_path: path,
                    validation_fallback: fallback,
                    wall_time_s: elapsed,
                    ..blank(id)
                });
                models.push(opts.keep_models.then_some(model));
            }
            Err(e) => {
                warn!("run {run}: learner {id} failed: {e}");
                records.push(ResultRecord { error: Some(e.to_string()), wall_time_s: elapsed, ..blank(id) });
                models.push(None);
            }
        }
    }
    RunOutput { info: Some(info), records, models }
}

/// All runs of an experiment, in (setting, run) order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub runs: Vec<RunOutput>,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    pub fn n_failed(&self) -> usize {
        self.records().filter(|r| r.failed()).count()
    }
}

/// Runs every (setting, run) pair on a pool of `jobs` threads.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, opts: RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let hash = cfg.hash();
    let tasks: Vec<(Option<f64>, usize)> =
        cfg.settings().into_iter().flat_map(|s| (0..cfg.runs).map(move |r| (s, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    info!("running {} task(s) on {} thread(s), config {hash}", tasks.len(), jobs.max(1));
    let runs =
        pool.install(|| tasks.par_iter().map(|&(setting, run)| run_once(cfg, setting, run, opts, &hash)).collect());
    Ok(ExperimentResult { config_hash: hash, runs })
}

/// Summary of one learner (within one setting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: Option<f64>,
    pub learner: String,
    pub runs: usize,
    pub failed: usize,
    pub pehe_in_mean: f64,
    pub pehe_in_se: f64,
    pub pehe_out_mean: f64,
    pub pehe_out_se: f64,
    pub config_hash: String,
}

fn groups(result: &ExperimentResult) -> Vec<((Option<f64>, String), Vec<&ResultRecord>)> {
    let mut out: Vec<((Option<f64>, String), Vec<&ResultRecord>)> = Vec::new();
    for rec in result.records() {
        let key = (rec.setting, rec.learner.clone());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rec),
            None => out.push((key, vec![rec])),
        }
    }
    out
}

fn summarize_opt(values: &[Option<f64>]) -> Result<Option<Summary>> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    match v {
        Some(v) if !v.is_empty() => Ok(Some(summarize(&v)?)),
        _ => Ok(None),
    }
}

/// Mean and SE of root-PEHE per (setting, learner) over successful runs.
/// Groups without ground truth or without a successful run are skipped.
pub fn summary_rows(result: &ExperimentResult) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for ((setting, learner), recs) in groups(result) {
        let ok: Vec<&&ResultRecord> = recs.iter().filter(|r| !r.failed()).collect();
        let pin = summarize_opt(&ok.iter().map(|r| r.pehe_in).collect::<Vec<_>>())?;
        let pout = summarize_opt(&ok.iter().map(|r| r.pehe_out).collect::<Vec<_>>())?;
        if let (Some(i), Some(o)) = (pin, pout) {
            rows.push(SummaryRow {
                setting,
                learner,
                runs: ok.len(),
                failed: recs.len() - ok.len(),
                pehe_in_mean: i.mean,
                pehe_in_se: i.se,
                pehe_out_mean: o.mean,
                pehe_out_se: o.se,
                config_hash: result.config_hash.clone(),
            });
        }
    }
    Ok(rows)
}

/// Mean root-PEHE per grid value, aggregated over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCurveRow {
    pub setting: Option<f64>,
    pub learner: String,
    pub lambda: f64,
    pub runs: usize,
    pub pehe_out_mean: f64,
    pub pehe_out_se: f64,
    pub pehe_in_mean: f64,
    pub pehe_in_se: f64,
    pub criterion_mean: f64,
    pub config_hash: String,
}

pub fn lambda_curve_rows(result: &ExperimentResult) -> Result<Vec<LambdaCurveRow>> {
    let mut rows = Vec::new();
    for ((setting, learner), recs) in groups(result) {
        let paths: Vec<&Vec<LambdaPoint>> = recs.iter().filter_map(|r| r.lambda_path.as_ref()).collect();
        let Some(first) = paths.first() else { continue };
        for (k, point) in first.iter().enumerate() {
            let at: Vec<&LambdaPoint> = paths.iter().filter_map(|p| p.get(k)).collect();
            let out = summarize_opt(&at.iter().map(|p| p.pehe_out).collect::<Vec<_>>())?;
            let inn = summarize_opt(&at.iter().map(|p| p.pehe_in).collect::<Vec<_>>())?;
            let crit = summarize(&at.iter().map(|p| p.criterion).collect::<Vec<_>>())?;
            let (Some(out), Some(inn)) = (out, inn) else { continue };
            rows.push(LambdaCurveRow {
                setting,
                learner: learner.clone(),
                lambda: point.lambda,
                runs: at.len(),
                pehe_out_mean: out.mean,
                pehe_out_se: out.se,
                pehe_in_mean: inn.mean,
                pehe_in_se: inn.se,
                criterion_mean: crit.mean,
                config_hash: result.config_hash.clone(),
            });
        }
    }
    Ok(rows)
}

/// Grid value with the lowest mean test root-PEHE (ties to smaller lambda).
pub fn curve_argmin(rows: &[LambdaCurveRow]) -> Option<f64> {
    let grid: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.pehe_out_mean).collect();
    crate::eval::argmin_lambda(&grid, &means).ok().map(|i| grid[i])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub runs: usize,
    pub package_version: String,
    pub note: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub run_info: Vec<RunInfo>,
}

/// Full-scale protocols use 80 semi-synthetic runs and 1000 epochs; desk
/// defaults are smaller.
const SCALE_NOTE: &str = "desk-scale run counts and epochs; full-scale protocols \
(80 semi-synthetic runs, 1000 IHDP realizations, 1000 epochs) are reachable via config";

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, run_info: Vec<RunInfo>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            runs: cfg.runs,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            note: SCALE_NOTE.to_string(),
            config: cfg.clone(),
            run_info,
        }
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One record per line, in (setting, run, learner) order.
pub fn write_results_jsonl(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = create(path)?;
    for rec in result.records() {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_jsonl(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Predictions of a model on a dataset, with root-PEHE when truth is known.
pub fn predict_rows(
    model: &TrainedModel,
    data: &Dataset,
) -> Result<(Array1<f64>, Option<Array1<f64>>, Option<Array1<f64>>)> {
    Ok((model.predict_tau(data.x.view())?, model.predict_mu0(data.x.view())?, model.predict_mu1(data.x.view())?))
}

/// Root-PEHE of `tau_hat` against `truth`, if any.
pub fn root_pehe(tau_hat: ArrayView1<f64>, truth: Option<&GroundTruth>) -> Result<Option<f64>> {
    truth.map(|g| crate::eval::pehe_values(tau_hat, g.tau.view()).map(|p| p.root)).transpose()
}
