use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use dynqr::fitter::{pack, unpack};
use dynqr::{CoefficientSet, ModelSpec, SeriesData};
use dynqr_cli::csvio::{read_series, write_series};
use dynqr_cli::{run, Cli, CliError, RunConfig};
use serde_json::Value;

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

fn invoke(args: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut argv = vec!["dynqr"];
    argv.extend_from_slice(args);
    run(&Cli::try_parse_from(argv).unwrap())
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    invoke(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SIMULATE: &str = r#"{"seed": 3, "simulate": {"replications": 2,
    "dgp": {"design": "y2", "process": "qar1", "n_obs": 50}}}"#;

#[test]
fn simulate_writes_datasets_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIMULATE);
    let out = dir.path().join("out");
    let written = run_cmd("simulate", &cfg, &out, &[]).unwrap();
    assert_eq!(written.len(), 3);
    for name in ["sim_000.csv", "sim_001.csv"] {
        let (header, rows) = read_csv(&out.join(name));
        assert_eq!(header, ["t", "y", "x"]);
        assert_eq!(rows.len(), 50);
    }
    let truth = read_json(&out.join("truth.json"));
    let coefs = truth["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 9);
    assert!(coefs.iter().all(|c| c["theta"].as_f64() == Some(0.0)));
    assert_eq!(truth["replications"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIMULATE);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_cmd("simulate", &cfg, &a, &[]).unwrap();
    run_cmd("simulate", &cfg, &b, &[]).unwrap();
    run_cmd("simulate", &cfg, &c, &["--seed", "4"]).unwrap();
    let read = |d: &Path| fs::read(d.join("sim_001.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(
        fs::read(a.join("truth.json")).unwrap(),
        fs::read(b.join("truth.json")).unwrap()
    );
}

fn simulated_series(dir: &Path, n_obs: usize) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!(
            r#"{{"seed": 8, "simulate": {{"replications": 1,
            "dgp": {{"design": "y3", "process": "dqar11", "n_obs": {n_obs}}}}}}}"#
        ),
    );
    let out = dir.join("sim");
    run_cmd("simulate", &cfg, &out, &[]).unwrap();
    out.join("sim_000.csv")
}

#[test]
fn fit_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_series(dir.path(), 50);
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 1, "emit_plots": false, "fit": {"settings": {
            "spec": {"lag_y": 1, "asymmetric_slope": false, "lagged_quantiles": 1,
                     "include_intercept": true, "exog_columns": ["x"]},
            "grid": [0.25, 0.5, 0.75], "lambda": 1.0}}}"#,
    );
    let out = dir.path().join("fit");
    let written = run_cmd("fit", &cfg, &out, &["--data", data.to_str().unwrap()]).unwrap();
    assert_eq!(written.len(), 2);
    assert!(!out.join("fit.svg").exists());

    let report = read_json(&out.join("fit.json"));
    assert_eq!(report["columns"], serde_json::json!(["intercept", "y_lag", "x"]));
    let coeffs: CoefficientSet = serde_json::from_value(report["coefficients"].clone()).unwrap();
    let flat = pack(&coeffs);
    assert_eq!(flat.len(), 12);
    assert_eq!(unpack(&flat, 3, 3, 1).unwrap(), coeffs);
    for (q, row) in report["table"].as_array().unwrap().iter().enumerate() {
        let beta: Vec<f64> = serde_json::from_value(row["beta"].clone()).unwrap();
        assert_eq!(beta, coeffs.beta_row(q));
        assert_eq!(row["theta"].as_f64(), coeffs.theta(q));
    }
    let pct = report["crossing_incidence_pct"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&pct));

    let (header, rows) = read_csv(&out.join("fitted_paths.csv"));
    assert_eq!(header, ["t", "q0.25", "q0.5", "q0.75"]);
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.len() == 4));
}

#[test]
fn fit_emits_svg_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_series(dir.path(), 40);
    let cfg = write_config(
        dir.path(),
        r#"{"emit_plots": true, "fit": {"settings": {"grid": [0.1, 0.5, 0.9]}}}"#,
    );
    let out = dir.path().join("fit");
    run_cmd("fit", &cfg, &out, &["--data", data.to_str().unwrap()]).unwrap();
    let svg = fs::read_to_string(out.join("fit.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn montecarlo_tables_have_expected_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 5, "montecarlo": {"processes": ["dqar11"], "designs": ["y1"],
            "sample_sizes": [40], "replications": 2, "lambdas": [5.0, 0.0],
            "init_strategies": ["zeros"], "nelder_mead_baseline": true,
            "bias_levels": [0.1, 0.9]}}"#,
    );
    let out = dir.path().join("mc");
    run_cmd("montecarlo", &cfg, &out, &[]).unwrap();

    let (header, rows) = read_csv(&out.join("crossing.csv"));
    assert_eq!(
        header,
        ["estimator", "lambda", "init", "process", "design", "n_obs", "crossing_pct"]
    );
    assert_eq!(rows.len(), 3);
    let lambdas: Vec<Option<f64>> = rows.iter().map(|r| r[1].parse().ok()).collect();
    assert_eq!(lambdas, [Some(0.0), Some(5.0), None]);
    assert_eq!(rows[2][0], "caviar_nm");
    for r in &rows {
        let pct: f64 = r[6].parse().unwrap();
        assert!((0.0..=100.0).contains(&pct), "{pct}");
    }

    let bias = read_json(&out.join("bias.json"));
    let bias = bias.as_array().unwrap();
    assert_eq!(bias.len(), 6);
    assert!(bias.iter().all(|r| r["bias"].as_f64().unwrap() >= 0.0));
    let (_, rows) = read_csv(&out.join("bias.csv"));
    assert_eq!(rows.len(), 6);
}

#[test]
fn backtest_reports_forecasts_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_series(dir.path(), 254);
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 2, "backtest": {"plan": {"initial_window": 100, "fit": {
            "spec": {"lag_y": 1, "asymmetric_slope": false, "lagged_quantiles": 0,
                     "include_intercept": true, "exog_columns": ["x"]},
            "grid": [0.1, 0.5, 0.9], "lambda": 1.0,
            "optim_options": {"max_iters": 40}}}}}"#,
    );
    let out = dir.path().join("bt");
    run_cmd("backtest", &cfg, &out, &["--data", data.to_str().unwrap()]).unwrap();

    let (header, rows) = read_csv(&out.join("forecasts.csv"));
    assert_eq!(rows.len(), 153);
    assert_eq!(header.len(), 3 + 3 + 2);
    let (_, coef_rows) = read_csv(&out.join("coefficients.csv"));
    assert_eq!(coef_rows.len(), 153 * 3);

    let scores = read_json(&out.join("scores.json"));
    assert_eq!(scores["n_forecasts"].as_u64(), Some(153));
    let mut n = 0;
    for variant in ["unsorted", "sorted"] {
        for scheme in ["qs", "centre", "left_tail", "right_tail"] {
            assert!(scores[variant][scheme].as_f64().unwrap().is_finite());
            n += 1;
        }
    }
    assert_eq!(n, 8);
    assert!(scores["sorted"]["qs"].as_f64() <= scores["unsorted"]["qs"].as_f64());
}

#[test]
fn backtest_rejects_short_series() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_series(dir.path(), 60);
    let cfg = write_config(dir.path(), r#"{"backtest": {}}"#);
    let err = run_cmd("backtest", &cfg, &dir.path().join("bt"), &["--data", data.to_str().unwrap()])
        .unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn malformed_csv_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "t,y,x\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
    let msg = read_series(&path).unwrap_err().to_string();
    assert!(msg.contains("row 3"), "{msg}");
    assert!(msg.contains("column y"), "{msg}");

    fs::write(&path, "a,b\n1,2\n").unwrap();
    assert!(read_series(&path).unwrap_err().to_string().contains("y"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    for json in [
        r#"{"sed": 1}"#,
        r#"{"fit": {"settings": {"lamda": 1.0}}}"#,
        r#"{"montecarlo": {"replications": 2, "extra": true}}"#,
    ] {
        let err = RunConfig::from_json(json).unwrap_err();
        assert_eq!(err.kind(), "config", "{json}");
    }
}

#[test]
fn missing_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let err = run_cmd("montecarlo", &cfg, &dir.path().join("x"), &[]).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn csv_series_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let y = vec![0.1, -2.5e-7, 3.0 / 7.0, 1e12];
    let x = vec![1.0, 2.0, f64::EPSILON, -0.0];
    let data = SeriesData::with_exog(y, vec![("x".into(), x)]).unwrap();
    let path = dir.path().join("s.csv");
    write_series(&path, &data).unwrap();
    let back = read_series(&path).unwrap();
    assert_eq!(back.y(), data.y());
    assert_eq!(back.exog_column("x"), data.exog_column("x"));
    assert_eq!(back.len(), 4);
    let spec = ModelSpec {
        exog_columns: vec!["x".into()],
        ..ModelSpec::default()
    };
    assert!(dynqr::model::build_design(&back, &spec).is_ok());
}

#[test]
fn binary_reports_errors_as_json() {
    let exe = env!("CARGO_BIN_EXE_dynqr");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = Process::new(exe)
        .args(["simulate", "--config", missing.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("nope.json"));

    let out = Process::new(exe).args(["simulate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn binary_prints_written_paths() {
    let exe = env!("CARGO_BIN_EXE_dynqr");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIMULATE);
    let out_dir = dir.path().join("o");
    let out = Process::new(exe)
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.lines().all(|l| Path::new(l).exists()));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 4);
}
