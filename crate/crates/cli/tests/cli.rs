use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use basisrisk::asymptotics::{limit_distribution, CurveRow};
use basisrisk::harness::{calibrated_experiment, run_experiment, spiked_grid, McSummary, SpikedGrid, SpikedRow};
use basisrisk::metrics::{optimal_index_panel, BasisRiskReport};
use basisrisk::nalgebra::DMatrix;
use basisrisk::panel::{load_panel, write_panel};
use basisrisk::spiked::{Calibration, SpikeRegime};
use basisrisk::{IngestOptions, YieldPanel};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basisrisk")).args(args).output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_matrix(dir: &Path, name: &str, values: DMatrix<f64>) -> PathBuf {
    let path = dir.join(name);
    let panel = YieldPanel::from_matrix(values).unwrap();
    write_panel(&panel, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

/// Parses `text`, re-emits it the way the tool does and requires identical bytes.
fn round_trip<T: Serialize + DeserializeOwned>(text: &str) -> T {
    let value: T = serde_json::from_str(text).unwrap();
    let mut again = serde_json::to_string_pretty(&value).unwrap();
    again.push('\n');
    assert_eq!(again, text);
    value
}

#[test]
fn perfectly_correlated_panel_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let f = [1.0, 3.0, 2.0, 5.0, 4.5, 0.5];
    let values = DMatrix::from_fn(6, 5, |i, j| j as f64 + (1.0 + 0.25 * j as f64) * f[i]);
    let path = write_matrix(dir.path(), "p.csv", values);
    let report: BasisRiskReport = round_trip(&stdout_ok(&["metrics", path.to_str().unwrap(), "--format", "json"]));
    for v in [report.r2_area, report.r2_optimal, report.lambda_share, report.r2_quantile] {
        assert!((v - 1.0).abs() < 1e-9, "{report:?}");
    }
}

#[test]
fn identity_panel_r2_is_one_over_n() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("identity.json");
    let rows: Vec<Vec<f64>> = (0..50).map(|i| (0..50).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    std::fs::write(&model, serde_json::json!({ "dense": { "covariance": rows } }).to_string()).unwrap();
    let panel = dir.path().join("panel.csv");
    let out = stdout_ok(&["sample", "--model", model.to_str().unwrap(), "--t", "10000", "--seed", "5"]);
    std::fs::write(&panel, out).unwrap();
    let report: BasisRiskReport = serde_json::from_str(&stdout_ok(&["metrics", panel.to_str().unwrap(), "--format", "json"])).unwrap();
    assert!((report.r2_area - 0.02).abs() < 0.02, "{}", report.r2_area);
}

#[test]
fn first_pc_weights_reproduce_the_eigen_share() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    std::fs::write(&panel, stdout_ok(&["sample", "--t", "15", "--n", "30", "--lambda", "0.4", "--seed", "2"])).unwrap();
    let (p, _) = load_panel(&panel, IngestOptions::default()).unwrap();
    let w: Vec<f64> = optimal_index_panel(&p).unwrap().weights.weights().iter().copied().collect();
    let weights = dir.path().join("w.json");
    std::fs::write(&weights, serde_json::to_string(&w).unwrap()).unwrap();
    let report: BasisRiskReport = serde_json::from_str(&stdout_ok(&[
        "metrics",
        panel.to_str().unwrap(),
        "--index",
        "weights",
        "--weights",
        weights.to_str().unwrap(),
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(report.index, "custom");
    assert!((report.r2_index - report.lambda_share).abs() < 1e-10);

    // keyed by field id, in a different order
    let keyed: serde_json::Map<String, serde_json::Value> =
        p.field_ids().iter().zip(&w).rev().map(|(id, v)| (id.clone(), serde_json::json!(v))).collect();
    std::fs::write(&weights, serde_json::Value::Object(keyed).to_string()).unwrap();
    let again: BasisRiskReport = serde_json::from_str(&stdout_ok(&[
        "metrics",
        panel.to_str().unwrap(),
        "--index",
        "weights",
        "--weights",
        weights.to_str().unwrap(),
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(again, report);
}

#[test]
fn metrics_csv_is_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_matrix(dir.path(), "p.csv", DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.5, 4.0, 3.0]));
    let csv = stdout_ok(&["metrics", path.to_str().unwrap()]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,field,value");
    assert_eq!(lines[1], "index,,mean");
    assert!(lines.iter().any(|l| l.starts_with("per_field_r2,f2,")));
}

#[test]
fn simulate_spiked_passes_through_to_the_harness() {
    let json = stdout_ok(&[
        "simulate-spiked",
        "--t-grid",
        "4,20",
        "--n-grid",
        "40",
        "--lambda-grid",
        "0.25,0.75",
        "--reps",
        "25",
        "--seed",
        "11",
        "--format",
        "json",
    ]);
    let rows: Vec<SpikedRow> = round_trip(&json);
    let direct = spiked_grid(&SpikedGrid {
        t_grid: vec![4, 20],
        n_grid: vec![40],
        lambda_grid: vec![0.25, 0.75],
        n_reps: 25,
        base_seed: 11,
        calibration: Calibration::ExactTarget,
    })
    .unwrap();
    assert_eq!(rows, direct);
    assert_eq!(rows.len(), 4);

    let csv = stdout_ok(&["simulate-spiked", "--t-grid", "4", "--n-grid", "40", "--lambda-grid", "0.5", "--reps", "5"]);
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,n,lambda_tilde,population_share,mean_estimate,empirical_bias,mc_standard_error,theoretical_bias,worst_bound,n_reps,n_failed"
    );
}

#[test]
fn simulate_calibrated_passes_through_to_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    std::fs::write(&panel, stdout_ok(&["sample", "--t", "10", "--n", "12", "--seed", "4"])).unwrap();
    let json = stdout_ok(&[
        "simulate-calibrated",
        panel.to_str().unwrap(),
        "--t-grid",
        "4,6",
        "--reps",
        "20",
        "--oracle-size",
        "800",
        "--seed",
        "3",
        "--format",
        "json",
    ]);
    let summary: McSummary = round_trip(&json);
    let (p, _) = load_panel(&panel, IngestOptions::default()).unwrap();
    let exp = basisrisk::harness::McExperiment {
        t_grid: vec![4, 6],
        n_reps: 20,
        population_oracle_size: 800,
        base_seed: 3,
        ..calibrated_experiment(&p)
    };
    assert_eq!(summary, run_experiment(&exp).unwrap());
    assert_eq!(summary.rows.len(), 6);
    for r in &summary.rows {
        assert_eq!(r.bias, r.mean_estimate - r.population_value);
    }
}

#[test]
fn asymptotics_table() {
    let json = stdout_ok(&["asymptotics", "--t-grid", "4,100", "--format", "json"]);
    let rows: Vec<CurveRow> = round_trip(&json);
    assert_eq!(rows.len(), 2 * 99);
    let first = &rows[0];
    assert_eq!((first.t, first.r), (4, 0.01));
    assert!((first.bias - 1.0 / 3.0).abs() < 0.01);
    for r in rows.iter().filter(|r| r.t == 100) {
        assert!(r.bias.abs() <= 1.0 / 99.0);
    }
    for r in &rows {
        let law = limit_distribution(SpikeRegime::Constant, r.t, r.r).unwrap();
        for (p, q) in [(0.01, r.q01), (0.05, r.q05), (0.5, r.q50), (0.95, r.q95), (0.99, r.q99)] {
            assert!((law.cdf(q) - p).abs() < 1e-9);
        }
    }
    let small = stdout_ok(&["asymptotics", "--r-grid", "0.000001"]);
    let bias: f64 = small.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((bias - 1.0 / 3.0).abs() < 1e-4);
}

#[test]
fn help_shows_design_defaults() {
    let spiked = stdout_ok(&["simulate-spiked", "--help"]);
    assert!(spiked.contains("[default: 4 20 100]"));
    assert!(spiked.contains("[default: 50 200 500 1000]"));
    assert!(spiked.contains("[default: 500]"));
    assert!(spiked.contains("--exact-target") && spiked.contains("--paper-recipe"));
    let calibrated = stdout_ok(&["simulate-calibrated", "--help"]);
    assert!(calibrated.contains("[default: 4 10 20]"));
    assert!(calibrated.contains("[default: 25000]"));
    assert!(calibrated.contains("[default: 0.3]"));
    let metrics = stdout_ok(&["metrics", "--help"]);
    assert!(metrics.contains("--drop-missing") && metrics.contains("--fail-missing"));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"threads": 2, "simulate-spiked": {"reps": 6, "seed": 9, "t_grid": [4], "n-grid": [30], "lambda-grid": [0.3, 0.6], "paper-recipe": true},
            "metrics": {"tau": 0.5}}"#,
    )
    .unwrap();
    let c = config.to_str().unwrap();
    let from_config = stdout_ok(&["simulate-spiked", "--config", c, "--seed", "2"]);
    let explicit = stdout_ok(&[
        "simulate-spiked",
        "--reps",
        "6",
        "--seed",
        "2",
        "--t-grid",
        "4",
        "--n-grid",
        "30",
        "--lambda-grid",
        "0.3,0.6",
        "--paper-recipe",
    ]);
    assert_eq!(from_config, explicit);
    // an explicit flag of an exclusive pair hides the config's choice
    let exact = stdout_ok(&["--config", c, "simulate-spiked", "--exact-target"]);
    let exact_explicit = stdout_ok(&["simulate-spiked", "--reps", "6", "--seed", "9", "--t-grid", "4", "--n-grid", "30", "--lambda-grid", "0.3,0.6"]);
    assert_eq!(exact, exact_explicit);

    std::fs::write(&config, r#"{"simulate-spiked": {"bogus": 1}}"#).unwrap();
    assert_eq!(run(&["simulate-spiked", "--config", c]).status.code(), Some(2));
    std::fs::write(&config, r#"{"simulate-spiked": {"reps": "many"}}"#).unwrap();
    assert_eq!(run(&["simulate-spiked", "--config", c]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["metrics"]).status.code(), Some(2));
    assert_eq!(run(&["metrics", "/nonexistent/panel.csv"]).status.code(), Some(3));
    assert_eq!(run(&["simulate-spiked", "--lambda-grid", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["asymptotics", "--t-grid", "1"]).status.code(), Some(2));

    let constant = write_matrix(dir.path(), "c.csv", DMatrix::from_element(4, 3, 2.0));
    let out = run(&["metrics", constant.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let gappy = dir.path().join("gappy.csv");
    std::fs::write(&gappy, "period,a,b,c\n2001,1,2,3\n2002,2,,5\n2003,4,1,2\n").unwrap();
    let g = gappy.to_str().unwrap();
    assert_eq!(run(&["metrics", g, "--fail-missing"]).status.code(), Some(3));
    let dropped = run(&["metrics", g]);
    assert!(dropped.status.success());
    assert!(String::from_utf8_lossy(&dropped.stderr).contains("dropped 1 field"));
    let report: BasisRiskReport =
        serde_json::from_str(&stdout_ok(&["metrics", g, "--drop-missing", "--format", "json"])).unwrap();
    assert_eq!(report.field_ids, vec!["a", "c"]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,x\n2,3\n").unwrap();
    assert_eq!(run(&["metrics", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn sample_json_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    stdout_ok(&["sample", "--t", "3", "--n", "4", "--format", "json", "--out", out.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["values"].as_array().unwrap().len(), 3);
    assert_eq!(v["field_ids"].as_array().unwrap().len(), 4);
    let csv = stdout_ok(&["sample", "--t", "3", "--n", "4"]);
    assert_eq!(csv.lines().next().unwrap(), "period,f1,f2,f3,f4");
}
