use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use spam_core::SpamModel;

fn spam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spam"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPAM_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Parses the `active set {..}` field of a fit summary line.
fn summary_active_set(line: &str) -> BTreeSet<usize> {
    let start = line.find("active set {").unwrap() + "active set {".len();
    let end = start + line[start..].find('}').unwrap();
    line[start..end].split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect()
}

fn gensynth(dir: &Path, n: usize, p: usize, sd: f64, seed: u64) {
    let o = spam(
        &["gensynth", "--n", &n.to_string(), "--p", &p.to_string(), "--noise-sd", &sd.to_string(), "--seed", &seed.to_string(), "--out", "d.csv"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gensynth_writes_data_and_truth_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 40, 6, 1.0, 11);
    let first = fs::read(dir.path().join("d.csv")).unwrap();
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("d.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["support"], serde_json::json!([1, 2, 3, 4]));
    assert_eq!(truth["seed"], 11);
    gensynth(dir.path(), 40, 6, 1.0, 11);
    assert_eq!(first, fs::read(dir.path().join("d.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,x3,x4,x5,x6,y");
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 30, 5, 1.0, 77);
    let explicit = fs::read(dir.path().join("d.csv")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spam"))
        .args(["gensynth", "--n", "30", "--p", "5", "--out", "e.csv"])
        .current_dir(dir.path())
        .env("SPAM_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(explicit, fs::read(dir.path().join("e.csv")).unwrap());
}

#[test]
fn cp_fit_keeps_the_true_components() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 300, 10, 0.5, 3);
    let o = spam(&["fit", "--data", "d.csv", "--select", "cp"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let model = SpamModel::from_json(&stdout(&o)).unwrap();
    let active = summary_active_set(&stderr(&o));
    assert_eq!(active, model.active_set());
    assert!((1..=4).all(|j| active.contains(&j)), "selected {active:?}");
    assert!(stderr(&o).contains("df ") && stderr(&o).contains("Cp "));
}

#[test]
fn huge_penalty_gives_empty_model_and_constant_prediction() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 60, 5, 1.0, 2);
    let o = spam(&["fit", "--data", "d.csv", "--lambda", "1e9", "--out", "m.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(summary_active_set(&stderr(&o)).is_empty());
    let o = spam(&["predict", "--model", "m.json", "--data", "d.csv", "--response", "y"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let values: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(values.len(), 60);
    assert!(values.iter().all(|v| *v == values[0]));
}

#[test]
fn lasso_on_orthonormal_columns_returns_projection() {
    let dir = tempfile::tempdir().unwrap();
    let (n, p) = (25, 4);
    let raw = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0 + 0.1 * j as f64);
    let q = raw.qr().q();
    let y = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
    let mut csv = String::from("a,b,c,d,y\n");
    for i in 0..n {
        let row: Vec<String> = (0..p).map(|j| format!("{:e}", q[(i, j)])).chain([format!("{:e}", y[i])]).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(dir.path().join("o.csv"), csv).unwrap();
    let o = spam(&["fit", "--data", "o.csv", "--mode", "lasso", "--lambda", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expected = q.tr_mul(&y);
    for j in 0..p {
        let got = report["coefficients"][j].as_f64().unwrap();
        assert!((got - expected[j]).abs() < 1e-8, "column {j}: {got} vs {}", expected[j]);
    }
}

#[test]
fn path_csv_shape_and_cp_matches_fit_selection() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 120, 8, 0.7, 5);
    let o = spam(&["path", "--data", "d.csv", "--grid-size", "25", "--out", "path.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("path.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lambda,normalized_coordinate,j,component_norm,active,df,cp,gcv");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 25 * 8);
    assert!(rows[..8].iter().all(|r| r[4] == "false"));
    let mut best = (f64::INFINITY, String::new());
    for r in rows.iter().step_by(8) {
        let cp: f64 = r[6].parse().unwrap();
        if cp < best.0 {
            best = (cp, r[0].to_string());
        }
    }
    let o = spam(&["fit", "--data", "d.csv", "--select", "cp", "--grid-size", "25"], dir.path());
    let model = SpamModel::from_json(&stdout(&o)).unwrap();
    assert_eq!(best.1.parse::<f64>().unwrap(), model.lambda);
}

#[test]
fn group_lasso_mode_reports_groups() {
    let dir = tempfile::tempdir().unwrap();
    gensynth(dir.path(), 50, 5, 1.0, 8);
    let o = spam(
        &["fit", "--data", "d.csv", "--mode", "group-lasso", "--groups", "x1,x2;x3,x4", "--lambda", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let groups = report["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    assert_eq!(groups[0]["columns"], serde_json::json!(["x1", "x2"]));
    assert_eq!(groups[2]["columns"], serde_json::json!(["x5"]));
    assert!(report["kkt_residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn input_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spam(&["fit", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(spam(&["fit", "--data", "missing.csv", "--lambda", "1"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("bad.csv"), "x1,y\n0.5,1\nabc,2\n").unwrap();
    let o = spam(&["fit", "--data", "bad.csv", "--lambda", "0.1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2") && stderr(&o).contains("x1"), "{}", stderr(&o));
    gensynth(dir.path(), 30, 4, 1.0, 1);
    assert_eq!(spam(&["fit", "--data", "d.csv", "--response", "nope", "--lambda", "1"], dir.path()).status.code(), Some(1));
    assert_eq!(spam(&["fit", "--data", "d.csv", "--mode", "logistic"], dir.path()).status.code(), Some(1));
    assert_eq!(spam(&["--help"], dir.path()).status.code(), Some(0));
}

fn benchmark(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["benchmark"];
    args.extend_from_slice(extra);
    let o = spam(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o)
}

fn proportions(table: &str) -> Vec<f64> {
    table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn benchmark_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--p", "8", "--n-grid", "40,80", "--trials", "6", "--seed", "4", "--noise-sd", "0.5"];
    let one = benchmark(dir.path(), &[&args[..], &["--threads", "1"]].concat());
    let four = benchmark(dir.path(), &[&args[..], &["--threads", "4"]].concat());
    assert_eq!(one, four);
    assert_eq!(one.lines().next().unwrap(), "p,n,trials,proportion");
    assert_eq!(one.lines().nth(1).unwrap().split(',').take(3).collect::<Vec<_>>(), ["8", "40", "6"]);
}

#[test]
fn recovery_fails_with_tiny_samples() {
    let dir = tempfile::tempdir().unwrap();
    let table = benchmark(dir.path(), &["--p", "256", "--n-grid", "10", "--trials", "20", "--seed", "1"]);
    assert!(proportions(&table)[0] < 0.2, "{table}");
}

#[test]
fn recovery_proportion_trends_up_with_n() {
    let dir = tempfile::tempdir().unwrap();
    let table = benchmark(
        dir.path(),
        &["--p", "50", "--n-grid", "50,100,200,400,800", "--trials", "20", "--seed", "1", "--noise-sd", "0.5"],
    );
    let props = proportions(&table);
    let logn: Vec<f64> = [50.0f64, 100.0, 200.0, 400.0, 800.0].iter().map(|v| v.ln()).collect();
    let (mx, my) = (logn.iter().sum::<f64>() / 5.0, props.iter().sum::<f64>() / 5.0);
    let slope = logn.iter().zip(&props).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / logn.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope > 0.0, "no upward trend: {table}");
    // consecutive drops within two binomial standard errors at T = 20
    for w in props.windows(2) {
        assert!(w[1] >= w[0] - 2.0 * (0.25f64 / 20.0).sqrt(), "{table}");
    }
}
