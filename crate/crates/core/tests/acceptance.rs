//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are never
//! captured. Pass criterion numbers to run a subset, e.g.
//! `cargo test --release --test acceptance -- 1 7`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hlearn::config::ExperimentConfig;
use hlearn::eval::{aggregate, pehe_values, RunPehe};
use hlearn::experiment::{curve_argmin, lambda_curve_rows, run_experiment, summary_rows, RunOptions};
use hlearn::metalearners::fit_linear_h;
use hlearn::optim::{MlpSpec, RidgeConfig};
use hlearn::pseudo::{pseudo_values, NuisanceValues, PseudoKind};

const TOY_CONFIG: &str = include_str!("../../../configs/toy_tradeoff.toml");
const SETUP_A_CONFIG: &str = include_str!("../../../configs/setup_a_lambda.toml");
const SMOKE_CONFIG: &str = include_str!("../../../configs/smoke.toml");

type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

/// Ridge with an unpenalized intercept, solved by LU on the augmented
/// normal equations. Returns `(coef, intercept)`.
fn oracle_ridge(x: ArrayView2<f64>, y: ArrayView1<f64>, l2: f64) -> (Vec<f64>, f64) {
    let (n, d) = x.dim();
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[[i, j]] } else { 1.0 });
    let mut lhs = z.transpose() * &z;
    for j in 0..d {
        lhs[(j, j)] += l2;
    }
    let rhs = z.transpose() * DVector::from_iterator(n, y.iter().copied());
    let theta = lhs.lu().solve(&rhs).expect("oracle system is nonsingular");
    (theta.as_slice()[..d].to_vec(), theta[d])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d, l2) = (200, 4, 0.7);
    let x = gaussian_matrix(&mut rng, n, d);
    let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    let y = Array1::from_shape_fn(n, |i| {
        x[[i, 0]] - 0.5 * x[[i, 2]] + f64::from(t[i]) * (1.0 + x[[i, 1]]) + 0.3 * rng.sample::<f64, _>(StandardNormal)
    });
    let pseudo = Array1::from_shape_fn(n, |i| 1.0 + x[[i, 1]] + rng.sample::<f64, _>(StandardNormal));
    let cfg = RidgeConfig { l2, fit_intercept: true };

    let (h0, h1) = fit_linear_h(x.view(), &t, y.view(), pseudo.view(), 0.0, &cfg).expect("lambda 0 fit");
    let mut worst: f64 = 0.0;
    for (arm, model) in [(0u8, &h0), (1u8, &h1)] {
        let rows: Vec<usize> = (0..n).filter(|&i| t[i] == arm).collect();
        let xa = x.select(ndarray::Axis(0), &rows);
        let ya = y.select(ndarray::Axis(0), &rows);
        let (coef, b) = oracle_ridge(xa.view(), ya.view(), l2);
        worst = worst.max(max_abs_diff(&model.coef, &coef)).max((model.intercept - b).abs());
    }

    let (g0, g1) = fit_linear_h(x.view(), &t, y.view(), pseudo.view(), 1.0, &cfg).expect("lambda 1 fit");
    let implied: Vec<f64> = g1.coef.iter().zip(&g0.coef).map(|(a, b)| a - b).collect();
    let (coef, b) = oracle_ridge(x.view(), pseudo.view(), l2 / 2.0);
    let gap1 = max_abs_diff(&implied, &coef).max((g1.intercept - g0.intercept - b).abs());

    Verdict::new(
        worst < 1e-8 && gap1 < 1e-8,
        format!("lambda=0 vs T-learner {worst:.2e}, lambda=1 vs half-penalty direct ridge {gap1:.2e} (tol 1e-8)"),
    )
}

fn criterion_2() -> Verdict {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = gaussian_matrix(&mut rng, n, 2);
    let pi = |r: ArrayView1<f64>| 1.0 / (1.0 + (-(0.8 * r[0] - 0.4 * r[1])).exp());
    let mu0 = |r: ArrayView1<f64>| r[0] + 0.5 * r[1];
    let tau = |r: ArrayView1<f64>| 1.0 + r[0] * r[0] - r[1];
    let mut t = Vec::with_capacity(n);
    let mut y = Array1::zeros(n);
    let mut values =
        NuisanceValues { propensity: Some(Array1::zeros(n)), mu0: Array1::zeros(n), mu1: Array1::zeros(n) };
    let mut truth = Array1::zeros(n);
    for (i, r) in x.rows().into_iter().enumerate() {
        let p = pi(r);
        let ti = u8::from(rng.random_bool(p));
        let (m0, m1) = (mu0(r), mu0(r) + tau(r));
        y[i] = if ti == 1 { m1 } else { m0 } + rng.sample::<f64, _>(StandardNormal);
        t.push(ti);
        values.propensity.as_mut().unwrap()[i] = p;
        values.mu0[i] = m0;
        values.mu1[i] = m1;
        truth[i] = tau(r);
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [PseudoKind::Ipw, PseudoKind::Dr] {
        let phi = pseudo_values(kind, &t, y.view(), &values).expect("pseudo-outcomes");
        let err = &phi - &truth;
        let mean = err.mean().unwrap();
        let se = err.std(1.0) / (n as f64).sqrt();
        pass &= mean.abs() < 3.0 * se;
        parts.push(format!("{kind}: |bias| {:.4} vs 3SE {:.4}", mean.abs(), 3.0 * se));
    }
    Verdict::new(pass, parts.join(", "))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let input = rng.random_range(1..5);
        let depth = rng.random_range(1..4);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..7)).collect();
        let output = rng.random_range(1..3);
        let spec = MlpSpec::new(input, hidden, output);
        let mut params = spec.init(&mut rng).values;
        for p in params.iter_mut() {
            *p += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let batch = rng.random_range(1..6);
        let x = gaussian_matrix(&mut rng, batch, input);
        let weights = gaussian_matrix(&mut rng, batch, output);
        let loss = |p: &[f64]| (spec.predict(p, x.view()).unwrap() * &weights).sum();

        let cache = spec.forward(&params, x.view()).unwrap();
        let mut grad = vec![0.0; params.len()];
        spec.backward(&params, &cache, weights.view(), &mut grad);
        for k in 0..params.len() {
            let keep = params[k];
            params[k] = keep + h;
            let up = loss(&params);
            params[k] = keep - h;
            let down = loss(&params);
            params[k] = keep;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Verdict::new(worst < 1e-4, format!("max relative error {worst:.2e} over 100 networks (tol 1e-4)"))
}

fn mean_out(rows: &[hlearn::experiment::SummaryRow], setting: f64, learner: &str) -> f64 {
    rows.iter()
        .find(|r| r.setting == Some(setting) && r.learner == learner)
        .unwrap_or_else(|| panic!("no summary for {learner} at {setting}"))
        .pehe_out_mean
}

fn criterion_4() -> Verdict {
    let cfg = ExperimentConfig::from_toml_str(TOY_CONFIG).expect("toy config");
    let result = run_experiment(&cfg, jobs(), RunOptions::default()).expect("toy experiment");
    if result.n_failed() > 0 {
        return Verdict::new(false, format!("{} learner runs failed", result.n_failed()));
    }
    let rows = summary_rows(&result).expect("summary");
    let (s1, s2) = (0.0, std::f64::consts::FRAC_PI_2);
    let [t1, d1, h1] = ["tarnet", "direct_x", "h_x"].map(|l| mean_out(&rows, s1, l));
    let [t2, d2, h2] = ["tarnet", "direct_x", "h_x"].map(|l| mean_out(&rows, s2, l));
    let ratio1 = h1 / t1.min(d1);
    let ratio2 = h2 / t2.min(d2);
    let pass = d1 < t1 && t2 <= 1.1 * d2 && ratio1 <= 1.10 && ratio2 <= 1.10;
    Verdict::new(
        pass,
        format!(
            "S1 tarnet {t1:.4} direct {d1:.4} H {h1:.4} (H/min {ratio1:.3}); \
             S2 tarnet {t2:.4} direct {d2:.4} H {h2:.4} (indirect/direct {:.3}, H/min {ratio2:.3})",
            t2 / d2
        ),
    )
}

fn criteria_5_and_6() -> (Verdict, Verdict) {
    let cfg = ExperimentConfig::from_toml_str(SETUP_A_CONFIG).expect("setup A config");
    let opts = RunOptions { sweep_all_lambdas: true, ..RunOptions::default() };
    let result = run_experiment(&cfg, jobs(), opts).expect("setup A experiment");
    if result.n_failed() > 0 {
        let msg = format!("{} learner runs failed", result.n_failed());
        return (Verdict::new(false, msg.clone()), Verdict::new(false, msg));
    }
    let rows = lambda_curve_rows(&result).expect("lambda curves");
    let curve = |s: f64| rows.iter().filter(|r| r.setting == Some(s)).cloned().collect::<Vec<_>>();
    let (low, mid, high) = (curve(0.1), curve(0.5), curve(0.9));
    let arg_low = curve_argmin(&low).expect("curve at 0.1");
    let arg_high = curve_argmin(&high).expect("curve at 0.9");
    let five =
        Verdict::new(arg_high >= arg_low, format!("argmin lambda {arg_low} at shared 0.1, {arg_high} at shared 0.9"));

    let best = mid.iter().min_by(|a, b| a.pehe_out_mean.total_cmp(&b.pehe_out_mean)).expect("curve at 0.5");
    let first = mid.first().unwrap().pehe_out_mean;
    let last = mid.last().unwrap().pehe_out_mean;
    let margin = 1.0 - best.pehe_out_mean / first.min(last);
    let six = Verdict::new(
        margin >= 0.02,
        format!(
            "lambda {} mean {:.4} vs endpoints {first:.4} / {last:.4} ({:.1}% below the better)",
            best.lambda,
            best.pehe_out_mean,
            100.0 * margin
        ),
    );
    (five, six)
}

fn criterion_7() -> Verdict {
    let p = pehe_values(Array1::from(vec![1.0, 3.0]).view(), Array1::from(vec![0.0, 0.0]).view()).unwrap();
    let runs: Vec<RunPehe> = [1.0, 2.0, 3.0].iter().map(|&v| RunPehe { pehe_in: v, pehe_out: v }).collect();
    let report = aggregate(&runs).unwrap();
    let se = 1.0 / 3f64.sqrt();
    let pass = p.eps == 5.0
        && p.root == 5f64.sqrt()
        && (report.pehe_out.mean - 2.0).abs() < 1e-12
        && (report.pehe_out.se - se).abs() < 1e-12;
    Verdict::new(
        pass,
        format!("eps {} root {:.6}; mean {} se {:.15}", p.eps, p.root, report.pehe_out.mean, report.pehe_out.se),
    )
}

fn bench(config: &Path, out: &Path, jobs: usize) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_hlearn"))
        .args(["bench", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--jobs", &jobs.to_string()])
        .output()
        .expect("launch hlearn");
    assert!(status.status.success(), "bench failed: {}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.join("results.jsonl")).expect("results.jsonl")
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("smoke.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let a = bench(&config, &dir.path().join("a"), 1);
    let b = bench(&config, &dir.path().join("b"), 1);
    let c = bench(&config, &dir.path().join("c"), 8);
    Verdict::new(
        !a.is_empty() && a == b && a == c,
        format!("{} bytes; serial rerun identical: {}; --jobs 8 identical: {}", a.len(), a == b, a == c),
    )
}

fn report(number: usize, name: &str, verdict: &Verdict, took: Duration) -> bool {
    let tag = if verdict.pass { "PASS" } else { "FAIL" };
    println!("criterion {number} [{tag}] {name}: {} ({:.1}s)", verdict.detail, took.as_secs_f64());
    verdict.pass
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let simple: [Criterion; 4] = [
        (1, "closed-form endpoints", criterion_1),
        (2, "pseudo-outcome unbiasedness", criterion_2),
        (3, "gradient correctness", criterion_3),
        (4, "toy-model trade-off", criterion_4),
    ];
    let mut all = true;
    for (k, name, run) in simple {
        if wanted(k) {
            let start = Instant::now();
            let v = run();
            all &= report(k, name, &v, start.elapsed());
        }
    }
    if wanted(5) || wanted(6) {
        let start = Instant::now();
        let (five, six) = criteria_5_and_6();
        let took = start.elapsed();
        if wanted(5) {
            all &= report(5, "Setup-A lambda monotonicity", &five, took);
        }
        if wanted(6) {
            all &= report(6, "interior-lambda benefit", &six, took);
        }
    }
    let tail: [Criterion; 2] = [(7, "metric and aggregation exactness", criterion_7), (8, "determinism", criterion_8)];
    for (k, name, run) in tail {
        if wanted(k) {
            let start = Instant::now();
            let v = run();
            all &= report(k, name, &v, start.elapsed());
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
