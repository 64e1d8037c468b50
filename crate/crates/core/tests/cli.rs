//! Command-line behaviour: exit codes, outputs and reproducibility.

use std::process::Command;

use uhwt::cli::execute;
use uhwt::io::{load_tensor, parse_summary};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uhwt"))
}

fn write_pgm(dir: &std::path::Path) -> std::path::PathBuf {
    let p = dir.join("img.pgm");
    std::fs::write(&p, b"P2\n4 3\n255\n0 10 200 30\n5 255 0 9\n100 90 80 70\n").unwrap();
    p
}

#[test]
fn exact_denoise_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_pgm(dir.path());
    let pred = dir.path().join("fit.uhwt");
    let out = bin()
        .args(["denoise", "--input", img.to_str().unwrap(), "--a", "0", "--b", "0", "--max-depth", "20", "--seed", "1", "--pred-out", pred.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["metrics"]["train_mse"].as_f64().unwrap() < 1e-20);
    let t = load_tensor(&pred).unwrap();
    assert_eq!(t.shape, vec![3, 4]);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_seed_and_bad_values_are_config_errors() {
    let out = bin().args(["boost", "--signal", "fig5", "--n", "50", "--stages", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["bench", "--signal", "nowhere", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["quantiles", "--signal", "fig5", "--seed", "1", "--q", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let out = bin().args(["fit", "--input", "/nonexistent/x.pgm"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn irregular_signal_needs_samples() {
    let out = bin().args(["fit", "--signal", "irregular", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("signal-file"));
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("s.csv");
    std::fs::write(&samples, "x,y,z,f\n1,0,0,1\n0,1,0,2\n0,0,1,3\n-1,0,0,4\n0,-1,0,5\n0,0,-1,6\n").unwrap();
    let out = bin()
        .args(["fit", "--signal", "irregular", "--signal-file", samples.to_str().unwrap(), "--n", "60", "--seed", "1", "--test-n", "100"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sphere_commands_write_csv_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let out = bin()
        .args(["rre", "--signal", "fig5", "--n", "80", "--members", "5", "--seed", "2", "--test-n", "50", "--pred-out", pred.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("x,y,z,pred"));
    assert_eq!(text.lines().count(), 81);
}

#[test]
fn lonlat_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ll.csv");
    let mut s = String::from("lon,lat,value\n");
    for i in 0..40 {
        s += &format!("{},{},{}\n", i * 9 - 180, (i * 7) % 170 - 85, i % 5);
    }
    std::fs::write(&p, s).unwrap();
    let out = bin().args(["denoise", "--lonlat-csv", p.to_str().unwrap(), "--b", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn backfit_writes_draws_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_pgm(dir.path());
    let draws = dir.path().join("draws.jsonl");
    let summary = dir.path().join("summary.uhws");
    let out = bin()
        .args([
            "backfit", "--input", img.to_str().unwrap(), "--trees", "3", "--sweeps", "12", "--burn-in", "2", "--sigma", "0.2", "--seed", "4",
            "--draws-out", draws.to_str().unwrap(), "--summary-out", summary.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = std::fs::read_to_string(&draws).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 10);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert!(first["sweep"].is_u64() && first["mu"].is_f64() && first["trees"].as_array().unwrap().len() == 3);
    let s = parse_summary(&std::fs::read(&summary).unwrap()).unwrap();
    assert_eq!(s.shape, vec![3, 4]);
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_pgm(dir.path());
    let img = img.to_str().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["uhwt", "boost", "--signal", "fig5", "--n", "100", "--stages", "20", "--seed", "3", "--test-n", "200", "--soft-c", "0.2"],
        vec!["uhwt", "boost", "--input", img, "--stages", "5", "--lr", "0.5", "--b", "0.3", "--seed", "3"],
        vec!["uhwt", "quantiles", "--signal", "fig5", "--n", "60", "--members", "8", "--holdout", "100", "--seed", "3"],
        vec!["uhwt", "mcmc", "--input", img, "--steps", "300", "--sigma", "0.3", "--seed", "3"],
        vec!["uhwt", "backfit", "--input", img, "--trees", "2", "--sweeps", "8", "--burn-in", "2", "--seed", "3"],
        vec!["uhwt", "verify", "--check", "bounds,enumeration", "--instances", "3", "--replicates", "20", "--seed", "3"],
        vec!["uhwt", "bench", "--n", "80", "--stages", "5,10", "--test-n", "100", "--identity", "--forest", "4", "--seed", "3"],
    ];
    for args in runs {
        let a = execute(args.clone()).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        let b = execute(args.clone()).unwrap();
        assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap(), "{args:?}");
    }
}
