use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use timechange_sv_cli::{cmd_simulate, read_trace, RunConfig};

fn tcsv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcsv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn ou_truth() -> serde_json::Value {
    json!({
        "kappa_x": 0.2, "mu_x": 0.1, "kappa_alpha": 0.3, "mu_alpha": -0.2,
        "sigma": 0.4, "rho": -0.5, "alpha0": -0.2
    })
}

fn simulate_config(n_obs: usize, delta: f64, thin: usize) -> RunConfig {
    RunConfig::from_json(
        &json!({
            "model": "ou-sv-leverage",
            "truth": ou_truth(),
            "simulate": { "n_obs": n_obs, "delta": delta, "thin": thin, "seed": 4 }
        })
        .to_string(),
    )
    .unwrap()
}

fn data_rows(path: &Path) -> Vec<(f64, f64)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["time", "value"]);
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect()
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn fit_config(dir: &Path, n_iter: usize, chains: usize) -> PathBuf {
    write_config(
        dir,
        "fit.json",
        &json!({
            "model": "ou-sv-leverage",
            "chains": chains,
            "sampler": {
                "m": 3, "block_len": 2, "n_iter": n_iter, "n_burn": 20,
                "seed": 11, "init": "moments"
            }
        }),
    )
}

fn simulated_data(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    cmd_simulate(&simulate_config(41, 0.01, 100), &out).unwrap();
    out.join("data.csv")
}

#[test]
fn simulate_writes_one_row_per_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &serde_json::from_str(include_str!("../../../configs/ou_simulate.json")).unwrap(),
    );
    let out = dir.path().join("out");
    let res = tcsv(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let rows = data_rows(&out.join("data.csv"));
    assert_eq!(rows.len(), 501);
    assert_eq!(rows[0].0, 0.0);
    assert!((rows[500].0 - 500.0).abs() < 1e-9);
    assert_eq!(line_count(&out.join("truth.csv")), 500 * 1000 + 2);
    assert_eq!(line_count(&out.join("truth_params.csv")), 8);
}

#[test]
fn thin_one_keeps_the_full_skeleton() {
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&simulate_config(50, 0.1, 1), dir.path()).unwrap();
    assert_eq!(data_rows(&dir.path().join("data.csv")).len(), 50);
    assert_eq!(line_count(&dir.path().join("truth.csv")), 51);
}

#[test]
fn halving_delta_keeps_rows_but_changes_values() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_simulate(&simulate_config(30, 0.02, 50), &a).unwrap();
    cmd_simulate(&simulate_config(30, 0.01, 100), &b).unwrap();
    let (ra, rb) = (
        data_rows(&a.join("data.csv")),
        data_rows(&b.join("data.csv")),
    );
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x.0 - y.0).abs() < 1e-9);
    }
    assert!(ra.iter().zip(&rb).skip(1).any(|(x, y)| x.1 != y.1));
}

#[test]
fn simulated_output_is_ingestible() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_data(dir.path());
    let obs =
        timechange_sv::ingest_csv(&data, timechange_sv::CsvSchema::TimeColumn, false).unwrap();
    assert_eq!(obs.n_intervals(), 40);
}

#[test]
fn fit_writes_trace_summary_and_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_data(dir.path());
    let cfg = fit_config(dir.path(), 100, 1);
    let out = dir.path().join("fit");
    let res = tcsv(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "iter,kappa_x,mu_x,kappa_alpha,mu_alpha,sigma,rho,alpha0,loglik"
    );
    assert_eq!(trace.lines().count(), 81);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next().unwrap(),
        "parameter,mean,sd,q025,median,q975"
    );
    assert_eq!(summary.lines().count(), 8);

    let acc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("acceptance.json")).unwrap()).unwrap();
    for key in ["z", "gamma"] {
        let rate = acc[key]["rate"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
    assert!(acc["params"]["sigma"]["proposed"].as_u64().unwrap() > 0);
}

#[test]
fn same_seed_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_data(dir.path());
    let cfg = fit_config(dir.path(), 60, 1);
    let traces: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let res = tcsv(&[
                "fit",
                "--config",
                cfg.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(res.status.success());
            fs::read_to_string(out.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn several_chains_get_suffixed_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated_data(dir.path());
    let cfg = fit_config(dir.path(), 40, 2);
    let out = dir.path().join("fit");
    let res = tcsv(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for i in 1..=2 {
        for stem in ["trace", "summary"] {
            assert!(out.join(format!("{stem}_chain{i}.csv")).exists());
        }
        assert!(out.join(format!("acceptance_chain{i}.json")).exists());
    }
    assert!(!out.join("trace.csv").exists());
    let one = fs::read_to_string(out.join("trace_chain1.csv")).unwrap();
    let two = fs::read_to_string(out.join("trace_chain2.csv")).unwrap();
    assert_ne!(one, two);
}

fn ar1_trace(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("trace.csv");
    let mut text = String::from("iter,theta,loglik\n");
    let mut v = 0.0_f64;
    for i in 0..n {
        v = 0.5 * v + ((i * 7919 % 1000) as f64 / 1000.0 - 0.5);
        text.push_str(&format!("{i},{v},-1.0\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn diagnose_writes_acf_iact_and_kde() {
    let dir = tempfile::tempdir().unwrap();
    let trace = ar1_trace(dir.path(), 400);
    let out = dir.path().join("diag");
    let res = tcsv(&[
        "diagnose",
        "--trace",
        trace.to_str().unwrap(),
        "--max-lag",
        "20",
        "--out",
        out.to_str().unwrap(),
        "--grid-points",
        "64",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("loglik"));

    let acf = fs::read_to_string(out.join("acf.csv")).unwrap();
    assert_eq!(acf.lines().next().unwrap(), "lag,theta");
    assert_eq!(acf.lines().count(), 22);
    assert!(acf.lines().nth(1).unwrap().starts_with("0,1"));
    assert_eq!(line_count(&out.join("iact.csv")), 2);
    assert_eq!(line_count(&out.join("kde.csv")), 65);
    assert_eq!(read_trace(&trace).unwrap().n_rows(), 400);
}

#[test]
fn max_lag_beyond_draws_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = ar1_trace(dir.path(), 150);
    let out = dir.path().join("diag");
    let res = tcsv(&[
        "diagnose",
        "--trace",
        trace.to_str().unwrap(),
        "--max-lag",
        "150",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &json!({ "model": "no-such-model" }));
    let res = tcsv(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "unused",
    ]);
    assert_eq!(res.status.code(), Some(1));

    let cfg = write_config(
        dir.path(),
        "typo.json",
        &json!({ "model": "ou-sv-leverage", "chian": 2 }),
    );
    let res = tcsv(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "unused",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn explosive_simulation_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "explode.json",
        &json!({
            "model": "const-vol-scalar",
            "truth": { "theta0": 0.0, "theta1": -1000.0, "sigma": 1.0 },
            "simulate": { "n_obs": 200, "delta": 1.0, "x0": 1.0 }
        }),
    );
    let out = dir.path().join("out");
    let res = tcsv(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}
