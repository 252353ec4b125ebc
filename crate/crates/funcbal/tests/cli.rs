//! End-to-end tests of the `funcbal` binary: round trips over the bundled
//! dataset, input validation, and exit-code conventions.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_funcbal"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fit_bundled(model: &Path) -> Output {
    bin()
        .arg("fit")
        .arg("--treatments")
        .arg(data("example_treatments.csv"))
        .arg("--covariates")
        .arg(data("example_covariates.csv"))
        .arg("--outcomes")
        .arg(data("example_outcomes.csv"))
        .arg("--out")
        .arg(model)
        .output()
        .expect("spawn")
}

#[test]
fn fit_weights_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.json");
    let out = fit_bundled(&model);
    assert_eq!(code(&out), 0, "fit failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());

    let wpath = tmp.path().join("weights.csv");
    let out = bin()
        .arg("weights")
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(&wpath)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0);
    let wtext = std::fs::read_to_string(&wpath).unwrap();
    let mut lines = wtext.lines();
    assert_eq!(lines.next(), Some("id,weight"));
    assert_eq!(lines.count(), 30, "one weight per bundled subject");

    let tpath = tmp.path().join("tau.csv");
    let out = bin()
        .arg("predict")
        .arg("--model")
        .arg(&model)
        .arg("--at")
        .arg(data("example_new_treatments.csv"))
        .arg("--out")
        .arg(&tpath)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0, "predict failed: {}", String::from_utf8_lossy(&out.stderr));
    let ttext = std::fs::read_to_string(&tpath).unwrap();
    assert_eq!(ttext.lines().next(), Some("id,tau_hat"));
    assert_eq!(ttext.lines().count(), 6, "header plus five predictions");
    for line in ttext.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn predict_with_no_rows_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.json");
    assert_eq!(code(&fit_bundled(&model)), 0);
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "id,t,value\n").unwrap();
    let out_path = tmp.path().join("tau.csv");
    let out = bin()
        .arg("predict")
        .arg("--model")
        .arg(&model)
        .arg("--at")
        .arg(&empty)
        .arg("--out")
        .arg(&out_path)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(&out_path).unwrap(), "id,tau_hat\n");
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().arg("simulate").output().expect("spawn");
    assert_eq!(code(&out), 2, "missing required arguments");
    let out = bin().arg("frobnicate").output().expect("spawn");
    assert_eq!(code(&out), 2, "unknown subcommand");
    let out = bin().arg("--help").output().expect("spawn");
    assert_eq!(code(&out), 0, "--help is not an error");
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    // missing file
    let out = bin()
        .arg("fit")
        .arg("--treatments")
        .arg(tmp.path().join("absent.csv"))
        .arg("--covariates")
        .arg(data("example_covariates.csv"))
        .arg("--outcomes")
        .arg(data("example_outcomes.csv"))
        .arg("--out")
        .arg(tmp.path().join("m.json"))
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 3);

    // malformed header
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "id,time,value\ns1,0.0,1.0\n").unwrap();
    let out = bin()
        .arg("fit")
        .arg("--treatments")
        .arg(&bad)
        .arg("--covariates")
        .arg(data("example_covariates.csv"))
        .arg("--outcomes")
        .arg(data("example_outcomes.csv"))
        .arg("--out")
        .arg(tmp.path().join("m.json"))
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[fit]\nbox_bond = 5.0\n").unwrap();
    let out = bin()
        .arg("fit")
        .arg("--treatments")
        .arg(data("example_treatments.csv"))
        .arg("--covariates")
        .arg(data("example_covariates.csv"))
        .arg("--outcomes")
        .arg(data("example_outcomes.csv"))
        .arg("--out")
        .arg(tmp.path().join("m.json"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("box_bond"),
        "error should name the unknown key"
    );
}

#[test]
fn config_overrides_are_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "[fit]\nbox_bound = 1.0\nlambda_grid = [0.05]\neta_grid = [0.001]\n",
    )
    .unwrap();
    let model = tmp.path().join("m.json");
    let out = bin()
        .arg("fit")
        .arg("--treatments")
        .arg(data("example_treatments.csv"))
        .arg("--covariates")
        .arg(data("example_covariates.csv"))
        .arg("--outcomes")
        .arg(data("example_outcomes.csv"))
        .arg("--out")
        .arg(&model)
        .arg("--config")
        .arg(&cfg)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let wpath = tmp.path().join("w.csv");
    let out = bin()
        .arg("weights")
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(&wpath)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0);
    for line in std::fs::read_to_string(&wpath).unwrap().lines().skip(1) {
        let w: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0 + 1e-9).contains(&w), "weight {w} violates the box bound");
    }
}

#[test]
fn selftest_passes() {
    let out = bin().arg("selftest").output().expect("spawn");
    assert_eq!(code(&out), 0, "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all checks passed"));
    assert!(!text.contains("FAIL"));
}
