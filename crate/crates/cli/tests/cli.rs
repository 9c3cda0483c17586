use std::path::Path;
use std::process::{Command, Output};

fn fdrift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdrift"))
        .current_dir(dir)
        .env_remove("FDRIFT_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("spawn fdrift")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn simulate_writes_reproducible_paths() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--T", "1", "--n", "4096", "--seed", "3", "--noise"];
    let o = fdrift(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("path.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,value"));
    assert_eq!(lines.count(), 4097);
    assert!(dir.path().join("path.bh.csv").exists() && dir.path().join("path.w.csv").exists());
    let o = fdrift(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("path.csv")).unwrap(), first);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = fdrift(dir.path(), &["simulate", "--T", "1", "--n", "10", "--H", "1.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("0 < H < 1"), "{}", stderr(&o));

    let o = fdrift(dir.path(), &["estimate", "--input", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--estimator"));

    let o = fdrift(dir.path(), &["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let o = fdrift(dir.path(), &["--jobs", "0", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_noise_estimates_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = fdrift(dir.path(), &["simulate", "--T", "2", "--n", "200", "--zero-noise", "--theta", "0.3", "-o", "z.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for est in ["RATIO", "MLE"] {
        let o = fdrift(dir.path(), &["estimate", "--estimator", est, "--input", "z.csv", "--format", "json", "-o", "e.json"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).lines().any(|l| l == "estimate: 0.3"), "{}", stdout(&o));
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("e.json")).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
    }
}

#[test]
fn inapplicable_estimator_is_a_computational_failure() {
    let dir = tempfile::tempdir().unwrap();
    fdrift(dir.path(), &["simulate", "--T", "2", "--n", "100", "--model", "ou", "-o", "x.csv"]);
    let o = fdrift(dir.path(), &["estimate", "--estimator", "MLE", "--input", "x.csv", "--model", "ou"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("B2"), "{}", stderr(&o));

    let o = fdrift(dir.path(), &["estimate", "--estimator", "SEQ_MLE", "--input", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sequential_experiment_reports_scaled_mse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("seq_mse.toml");
    let o = fdrift(
        dir.path(),
        &["--output-dir", ".", "experiment", "--config", cfg.to_str().unwrap(), "--replicates", "50", "--name", "small"],
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.split(',').any(|c| c == "scaled_mse"), "{header}");
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("small.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["replicates"], 50);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir(&out).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fdrift"))
        .current_dir(dir.path())
        .env("FDRIFT_OUTPUT_DIR", &out)
        .args(["simulate", "--T", "1", "--n", "8"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("path.csv").exists());
    assert!(!dir.path().join("path.csv").exists());
}

#[test]
fn bound_check_and_selftest_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = fdrift(dir.path(), &["bound-check", "--what", "gaus1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("bound_gaus1.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);

    let o = fdrift(dir.path(), &["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn transform_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let f: String = std::iter::once("t,value".to_string())
        .chain((0..=100).map(|k| format!("{},{}", k as f64 / 100.0, 1.0)))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.path().join("one.csv"), f + "\n").unwrap();
    let o = fdrift(dir.path(), &["transform", "--op", "molchan", "--input", "one.csv", "--H", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // at H = 1/2 the transform of 1 is t
    let line = stdout(&o);
    let jt: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((jt - 1.0).abs() < 1e-12, "{line}");

    let o = fdrift(dir.path(), &["transform", "--op", "gls", "--input", "one.csv"]);
    assert_eq!(o.status.code(), Some(2));
}
