//! `hlearn`: generate datasets, run benchmarks and lambda sweeps, fit and
//! evaluate single models.
//!
//! Exit codes: 0 success, 1 fatal error, 2 configuration error, 3 some
//! learner runs failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use hlearn::config::{DatasetSpec, ExperimentConfig, LearnerSpec};
use hlearn::data::{load_csv, save_csv, CsvSchema};
use hlearn::error::{Error, Result};
use hlearn::experiment::{
    data_seed, draw_dataset, lambda_curve_rows, predict_rows, root_pehe, run_experiment, run_once, run_seed,
    summary_rows, write_json, write_results_jsonl, write_rows_csv, ExperimentResult, Manifest, RunInfo, RunOptions,
};
use hlearn::metalearners::TrainedModel;

#[derive(Parser)]
#[command(name = "hlearn", version, about = "CATE meta-learners and H-learner experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one generated dataset with ground truth.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Run index whose dataset draw to reproduce.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Fit and evaluate every learner over all runs.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit H-learners over the whole lambda grid and write mean curves.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit every learner on one run's training split and save the models.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Worker threads for lambda selection.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Predict with a saved model on a CSV dataset.
    Eval {
        /// Saved model (JSON from `fit`).
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV; `mu0`/`mu1` columns enable PEHE.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    Partial(usize),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn partial(result: &ExperimentResult) -> Outcome {
    match result.n_failed() {
        0 => Outcome::Ok,
        n => Outcome::Partial(n),
    }
}

fn run_infos(result: &ExperimentResult) -> Vec<RunInfo> {
    result.runs.iter().filter_map(|r| r.info.clone()).collect()
}

fn generate(common: &Common, run: usize) -> Result<Outcome> {
    let (cfg, out) = load(common)?;
    if matches!(cfg.dataset, DatasetSpec::Csv { .. }) {
        return Err(Error::Config("generate needs a toy or semi_synthetic dataset".into()));
    }
    let seed = data_seed(cfg.seed, run as u64);
    let draw = draw_dataset(&cfg.dataset, seed)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    save_csv(out.join("data.csv"), &draw.data, draw.truth.as_ref())?;

    #[derive(Serialize)]
    struct GenerateManifest<'a> {
        #[serde(flatten)]
        base: Manifest,
        run: usize,
        data_seed: u64,
        n: usize,
        d: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        overlap: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        surface: Option<&'a hlearn::dgp::SemiSyntheticSurface>,
    }
    let manifest = GenerateManifest {
        base: Manifest::new("generate", &cfg, Vec::new()),
        run,
        data_seed: seed,
        n: draw.data.n(),
        d: draw.data.d(),
        overlap: draw.surface.as_ref().map(|s| s.overlap()),
        surface: draw.surface.as_ref(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    info!("wrote {} rows to {}", draw.data.n(), out.join("data.csv").display());
    Ok(Outcome::Ok)
}

fn write_experiment(out: &Path, command: &str, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    write_results_jsonl(&out.join("results.jsonl"), result)?;
    let summary = summary_rows(result)?;
    write_rows_csv(&out.join("summary.csv"), &summary)?;
    let curve = lambda_curve_rows(result)?;
    if !curve.is_empty() {
        write_rows_csv(&out.join("lambda_curve.csv"), &curve)?;
    }
    write_json(&out.join("manifest.json"), &Manifest::new(command, cfg, run_infos(result)))?;
    for row in &summary {
        let setting = row.setting.map(|s| format!(" [{s}]")).unwrap_or_default();
        println!(
            "{}{}: in {:.4} ± {:.4}, out {:.4} ± {:.4} ({} runs)",
            row.learner, setting, row.pehe_in_mean, row.pehe_in_se, row.pehe_out_mean, row.pehe_out_se, row.runs
        );
    }
    Ok(())
}

fn bench(common: &Common, jobs: usize) -> Result<Outcome> {
    let (cfg, out) = load(common)?;
    let result = run_experiment(&cfg, jobs, RunOptions::default())?;
    write_experiment(&out, "bench", &cfg, &result)?;
    Ok(partial(&result))
}

fn sweep_lambda(common: &Common, jobs: usize) -> Result<Outcome> {
    let (cfg, out) = load(common)?;
    if !cfg.learners.iter().any(|l| matches!(l, LearnerSpec::HLearner { .. })) {
        return Err(Error::Config("sweep-lambda needs at least one h_learner".into()));
    }
    let opts = RunOptions { sweep_all_lambdas: true, ..RunOptions::default() };
    let result = run_experiment(&cfg, jobs, opts)?;
    write_experiment(&out, "sweep-lambda", &cfg, &result)?;
    Ok(partial(&result))
}

fn fit(common: &Common, run: usize, jobs: usize) -> Result<Outcome> {
    let (cfg, out) = load(common)?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let hash = cfg.hash();
    let opts = RunOptions { keep_models: true, ..RunOptions::default() };
    let output = pool.install(|| run_once(&cfg, None, run, opts, &hash));
    let models_dir = out.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    for model in output.models.iter().flatten() {
        let path = models_dir.join(format!("{}.json", model.learner));
        model.save_json(&path)?;
        info!("saved {}", path.display());
    }
    let result = ExperimentResult { config_hash: hash, runs: vec![output] };
    write_results_jsonl(&out.join("results.jsonl"), &result)?;
    write_json(&out.join("manifest.json"), &Manifest::new("fit", &cfg, run_infos(&result)))?;
    info!("run {run} used seed {}", run_seed(cfg.seed, run as u64));
    Ok(partial(&result))
}

fn eval(model: &Path, data: &Path, out: Option<&Path>) -> Result<Outcome> {
    let model = TrainedModel::load_json(model)?;
    let (dataset, truth) = load_csv(data, &CsvSchema::default())?;
    let (tau, mu0, mu1) = predict_rows(&model, &dataset)?;
    let root = root_pehe(tau.view(), truth.as_ref())?;
    match root {
        Some(r) => println!("{}: root-PEHE {r:.6} on {} rows", model.learner, dataset.n()),
        None => println!("{}: no ground truth columns; predictions only", model.learner),
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    #[derive(Serialize)]
    struct Row {
        tau_hat: f64,
        mu0_hat: Option<f64>,
        mu1_hat: Option<f64>,
    }
    let rows: Vec<Row> = (0..dataset.n())
        .map(|i| Row { tau_hat: tau[i], mu0_hat: mu0.as_ref().map(|m| m[i]), mu1_hat: mu1.as_ref().map(|m| m[i]) })
        .collect();
    write_rows_csv(&out.join("predictions.csv"), &rows)?;

    #[derive(Serialize)]
    struct Metrics<'a> {
        learner: &'a str,
        rows: usize,
        pehe_root: Option<f64>,
    }
    write_json(&out.join("metrics.json"), &Metrics { learner: &model.learner, rows: dataset.n(), pehe_root: root })?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate { common, run } => generate(common, *run),
        Command::Bench { common, jobs } => bench(common, *jobs),
        Command::SweepLambda { common, jobs } => sweep_lambda(common, *jobs),
        Command::Fit { common, run, jobs } => fit(common, *run, *jobs),
        Command::Eval { model, data, out } => eval(model, data, out.as_deref()),
    };
    match outcome {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            warn!("{n} learner run(s) failed; see results.jsonl");
            ExitCode::from(3)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
