use std::fs;
use std::path::Path;

use exphedge::experiment::{self, RunConfig};
use exphedge::ErrorKind;

fn config(out: &Path, extra: &str) -> RunConfig {
    RunConfig::parse(&format!("N = 1000\nK = 10\noutput = {}\n{extra}", out.display())).unwrap()
}

#[test]
fn zero_claim_reports_two_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("zero");
    experiment::run(&config(&out, "claim = zero\n")).unwrap();
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let cases: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(cases, ["learned_merton", "true_merton"]);
    assert!(!out.join("strategy_merton.csv").exists());
}

#[test]
fn put_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("put");
    let summary = experiment::run(&config(&out, "")).unwrap();
    for f in [
        "report.csv",
        "pnl_learned_merton.csv",
        "pnl_learned_claim.csv",
        "pnl_true_merton.csv",
        "pnl_true_claim.csv",
        "hedge_path.csv",
        "strategy.csv",
        "strategy_merton.csv",
        "prices.csv",
        "config.txt",
        "meta.txt",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(summary.cases.len(), 4);
    let pnl = fs::read_to_string(out.join("pnl_true_claim.csv")).unwrap();
    assert_eq!(pnl.lines().count(), 1001);
    let hedge = fs::read_to_string(out.join("hedge_path.csv")).unwrap();
    assert_eq!(hedge.lines().count(), 11);
    let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("quantile = ") && meta.lines().last().unwrap().starts_with("wall_time_seconds"));
    // No scratch directory is left behind.
    let leftovers = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("partial"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let first = config(&out, "seed = 3\nsmoothing = 0.7\n");
    experiment::run(&first).unwrap();
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    let snapshot: Vec<(String, Vec<u8>)> = ["report.csv", "strategy.csv", "prices.csv", "pnl_learned_claim.csv"]
        .iter()
        .map(|f| (f.to_string(), fs::read(out.join(f)).unwrap()))
        .collect();

    let again = RunConfig::parse(&written).unwrap();
    assert_eq!(
        again,
        RunConfig {
            eval_seed: Some(4),
            ..first
        }
    );
    experiment::run(&again).unwrap();
    for (f, bytes) in snapshot {
        assert_eq!(fs::read(out.join(&f)).unwrap(), bytes, "{f} differs");
    }
    assert_eq!(fs::read_to_string(out.join("config.txt")).unwrap(), written);
}

#[test]
fn in_sample_flag_evaluates_on_training_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = experiment::run(&config(&tmp.path().join("i"), "in_sample = true\n")).unwrap();
    let pnl = &summary.cases.iter().find(|c| c.name == "learned_claim").unwrap().pnl;
    let replayed = exphedge::risk::log_mean_exp_loss(pnl, 1.0).unwrap();
    assert!((replayed - summary.claim_table.log_psi1).abs() < 1e-10);
}

#[test]
fn convergence_rows_cover_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let cfg = config(&out, "converge_n = 200, 400\nconverge_seeds = 3\n");
    let rows = experiment::converge(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(
        csv.lines().next().unwrap(),
        "n,seed,learned_price,oracle_price,abs_error"
    );

    let single = experiment::convergence_study(&config(&out, "converge_n = 300\nconverge_seeds = 1\n")).unwrap();
    assert_eq!(single.len(), 1);
}

#[test]
fn simulate_and_price_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let paths = experiment::simulate(&config(&out, "N = 5\n")).unwrap();
    assert_eq!(paths.n_paths(), 5);
    let csv = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 11);

    let est = experiment::price(&config(&out, "")).unwrap();
    assert!((est.oracle - 0.0797).abs() < 2e-4);
    assert!(fs::read_to_string(out.join("prices.csv"))
        .unwrap()
        .contains("indifference_price_learned"));
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "N = 1",
        "gamma = -1",
        "sigma = 0.2, 0.1",
        "levels = 1.5",
        "nonsense = 3",
        "claim = straddle",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Config, "{text}");
    }
}

#[test]
fn failed_runs_leave_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");
    // A huge drift against tiny volatility makes every increment positive,
    // so the last step has no finite optimum.
    let cfg = config(&out, "mu = 5\nsigma = 0.001\n");
    let err = experiment::run(&cfg).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numerical, "{err}");
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}
