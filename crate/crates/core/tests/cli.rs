//! End-to-end checks of the `hlearn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlearn")).args(args).output().expect("launch hlearn")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const TOY: &str = r#"
spec_version = 1
runs = 2
seed = 5
[dataset]
kind = "toy"
n = 120
delta = 0.0
beta = 1.5
"#;

#[test]
fn generate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", &format!("{TOY}[[learners]]\nkind = \"tarnet\"\n"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(hlearn(&["generate", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(hlearn(&["generate", "--config", s(&cfg), "--out", s(&b)]).status.success());
    assert!(hlearn(&["generate", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]).status.success());
    let bytes = |d: &Path| std::fs::read(d.join("data.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));

    let (header, rows) = read_csv(&a.join("data.csv"));
    assert_eq!(rows.len(), 120);
    let mu0 = column(&header, &rows, "mu0");
    let mu1 = column(&header, &rows, "mu1");
    for (m0, m1) in mu0.iter().zip(&mu1) {
        assert!((m1 - m0 - 1.5).abs() < 1e-12, "scenario 1 effect must equal beta");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 120);
    assert_eq!(manifest["command"], "generate");
}

#[test]
fn semi_synthetic_manifest_records_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.toml",
        r#"
spec_version = 1
[dataset]
kind = "semi_synthetic"
s_size = 10
shared_fraction = 0.5
[[learners]]
kind = "tarnet"
"#,
    );
    let out = dir.path().join("out");
    assert!(hlearn(&["generate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["overlap"], 5);
    assert_eq!(manifest["n"], 747);
    assert_eq!(manifest["d"], 25);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &format!("{TOY}surprise = 1\n[[learners]]\nkind = \"tarnet\"\n"));
    let out = hlearn(&["bench", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    let missing = hlearn(&["bench", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(1));

    // Every unit is a control: each run fails positivity, so all learners are
    // recorded as failed and the command reports a partial failure.
    let mut data = String::from("x,t,y\n");
    for i in 0..40 {
        data.push_str(&format!("{},0,{}\n", i as f64 / 10.0, i % 3));
    }
    let csv = write(dir.path(), "controls.csv", &data);
    let cfg = write(
        dir.path(),
        "csv.toml",
        &format!(
            "spec_version = 1\nruns = 2\n[dataset]\nkind = \"csv\"\npath = {:?}\n[[learners]]\nkind = \"t_learner\"\nbase = \"ridge\"\n",
            s(&csv)
        ),
    );
    let dest = dir.path().join("partial");
    let out = hlearn(&["bench", "--config", s(&cfg), "--out", s(&dest)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&dest.join("results.jsonl"));
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r["error"].is_string()));
}

#[test]
fn sweep_endpoints_match_linear_baselines() {
    let dir = tempfile::tempdir().unwrap();
    // With no penalty the half-penalty direct ridge is the direct ridge itself.
    let cfg = write(
        dir.path(),
        "lin.toml",
        &format!(
            "lambda_grid = [0.0, 1.0]\n{TOY}[ridge]\nl2 = 0.0\n[stage1]\nmodel = \"t_learner_ridge\"\n\
             [[learners]]\nkind = \"t_learner\"\nbase = \"ridge\"\n\
             [[learners]]\nkind = \"direct\"\npseudo = \"x\"\nbase = \"ridge\"\n\
             [[learners]]\nkind = \"h_learner\"\npseudo = \"x\"\nbase = \"ridge\"\n"
        ),
    );
    let out = dir.path().join("out");
    let run = hlearn(&["sweep-lambda", "--config", s(&cfg), "--out", s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let recs = records(&out.join("results.jsonl"));
    let find = |run: u64, learner: &str| {
        recs.iter().find(|r| r["run"] == run && r["learner"] == learner).unwrap_or_else(|| panic!("{learner}"))
    };
    for run in 0..2 {
        let path = find(run, "h_x_ridge")["lambda_path"].as_array().unwrap().clone();
        assert_eq!(path.len(), 2);
        let t = find(run, "t_learner_ridge")["pehe_out"].as_f64().unwrap();
        let d = find(run, "direct_x_ridge")["pehe_out"].as_f64().unwrap();
        assert!((path[0]["pehe_out"].as_f64().unwrap() - t).abs() < 1e-6);
        assert!((path[1]["pehe_out"].as_f64().unwrap() - d).abs() < 1e-6);
    }
    let (header, rows) = read_csv(&out.join("lambda_curve.csv"));
    assert_eq!(column(&header, &rows, "lambda"), vec![0.0, 1.0]);
}

#[test]
fn single_run_has_zero_standard_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = TOY.replace("runs = 2", "runs = 1");
    let cfg = write(dir.path(), "one.toml", &format!("{body}[[learners]]\nkind = \"s_learner\"\nbase = \"ridge\"\n"));
    let out = dir.path().join("out");
    assert!(hlearn(&["bench", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let (header, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(column(&header, &rows, "pehe_out_se"), vec![0.0]);
    assert_eq!(column(&header, &rows, "pehe_in_se"), vec![0.0]);
}

#[test]
fn fit_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fit.toml",
        &format!("{TOY}[stage1]\nmodel = \"t_learner_ridge\"\n[[learners]]\nkind = \"h_learner\"\nbase = \"ridge\"\nlambda = 0.5\n"),
    );
    let fit_dir = dir.path().join("fit");
    assert!(hlearn(&["fit", "--config", s(&cfg), "--out", s(&fit_dir)]).status.success());
    let model = fit_dir.join("models").join("h_x_ridge_lambda0.5.json");
    assert!(model.exists());

    let data_dir = dir.path().join("data");
    assert!(hlearn(&["generate", "--config", s(&cfg), "--out", s(&data_dir), "--run", "1"]).status.success());
    let eval_dir = dir.path().join("eval");
    let out = hlearn(&["eval", "--model", s(&model), "--data", s(&data_dir.join("data.csv")), "--out", s(&eval_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&eval_dir.join("predictions.csv"));
    assert_eq!(rows.len(), 120);
    let tau = column(&header, &rows, "tau_hat");
    let mu0 = column(&header, &rows, "mu0_hat");
    let mu1 = column(&header, &rows, "mu1_hat");
    for i in 0..rows.len() {
        assert!((mu1[i] - mu0[i] - tau[i]).abs() < 1e-9);
    }
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["pehe_root"].as_f64().unwrap() >= 0.0);
}
