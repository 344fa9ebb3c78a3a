use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exphedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exphedge"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_artifacts_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!("# small run\nN = 1000\nK = 10\noutput = {}\n", out.display()),
    );
    let o = exphedge(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("learned indifference price"));
    for f in [
        "report.csv",
        "prices.csv",
        "strategy.csv",
        "hedge_path.csv",
        "meta.txt",
        "config.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn other_subcommands_write_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "N = 300\nK = 5\nconverge_n = 200, 400\nconverge_seeds = 2\noutput = {}\n",
            out.display()
        ),
    );
    for (cmd, file) in [
        ("simulate", "paths.csv"),
        ("price", "prices.csv"),
        ("converge", "convergence.csv"),
    ] {
        let o = exphedge(&[cmd, &cfg]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).is_file(), "{cmd} did not write {file}");
    }
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 5);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gamma = -1\n");
    let o = exphedge(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("risk aversion"));

    let missing = tmp.path().join("missing.cfg");
    assert_eq!(exphedge(&["price", &missing.to_string_lossy()]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!("N = 500\nK = 5\nmu = 5\nsigma = 0.001\noutput = {}\n", out.display()),
    );
    let o = exphedge(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learn"));
    assert!(!out.exists());
}

#[test]
fn io_errors_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!("N = 100\nK = 3\noutput = {}\n", blocker.join("out").display()),
    );
    assert_eq!(exphedge(&["simulate", &cfg]).status.code(), Some(4));
}
