use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = "alpha = [1.0, 1.0]\nbeta = [1.0, 2.0]\ndelta = [[1.0, 1.0]]\ngamma_a = [1.0, 1.0]\ngamma_y = 1.0\n";

fn aggiv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggiv"))
        .args(args)
        .env("AGGIV_OUT", out)
        .output()
        .expect("binary runs")
}

fn stderr_json(output: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stderr);
    serde_json::from_str(text.lines().last().expect("error line")).expect("json error line")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn experiment_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = aggiv(dir.path(), &["experiment", "figure2a", "--seed", "42"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let results = std::fs::read_to_string(dir.path().join("figure2a/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 51 * 3);
    let manifest = std::fs::read_to_string(dir.path().join("figure2a/manifest")).unwrap();
    assert!(manifest.contains("seed=42") && manifest.contains("config_sha256="));

    let other = tempfile::tempdir().unwrap();
    let again = aggiv(
        other.path(),
        &["experiment", "figure2a", "--seed", "42", "--jobs", "1"],
    );
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        std::fs::read(other.path().join("figure2a/results.csv")).unwrap(),
        results.as_bytes()
    );
}

#[test]
fn explicit_out_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("explicit");
    let out = aggiv(
        dir.path(),
        &["experiment", "table1", "--out", target.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("table1/results.csv").exists());
    assert!(!dir.path().join("table1").exists());
}

#[test]
fn degenerate_aggregate_exits_3_naming_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "zero.toml",
        &BASE.replace("alpha = [1.0, 1.0]", "alpha = [0.0, 0.0]"),
    );
    let out = aggiv(dir.path(), &["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 3);
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("degenerate aggregate"));
}

#[test]
fn equivalence_requires_unit_variances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "var.toml", &format!("{BASE}var_y = 2.0\n"));
    let out = aggiv(dir.path(), &["equivalence", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("variances"));
}

#[test]
fn equivalence_output_round_trips_into_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.toml", BASE);
    let out = aggiv(dir.path(), &["equivalence", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let mapped = dir.path().join("equivalence/model.toml");
    let out = aggiv(
        dir.path(),
        &[
            "simulate",
            "--config",
            mapped.to_str().unwrap(),
            "--n",
            "20000",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let data = dir.path().join("simulate/data.csv");
    let out = aggiv(dir.path(), &["estimate", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8(out.stdout).unwrap();
    let estimate: f64 = report
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((estimate - 1.5).abs() < 0.1, "{estimate}");
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "alpha = [1.0,");
    let out = aggiv(dir.path(), &["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "input");
    let missing = aggiv(
        dir.path(),
        &["validate", "--config", "/nonexistent/model.toml"],
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn rank_deficient_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "flat.csv",
        "i1,a,y\n1,0.5,1\n1,1.5,2\n1,2.5,2\n1,0.1,3\n",
    );
    let out = aggiv(dir.path(), &["estimate", "--data", &data]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "rank_deficient");
}

#[test]
fn sargan_with_one_instrument_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.toml", BASE);
    let out = aggiv(dir.path(), &["sargan", "--config", &cfg, "--n", "500"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "under_identified");
}

#[test]
fn acid_reports_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tuned.toml",
        &format!("{BASE}\n[acid]\nkind = \"instrument_tuned\"\n"),
    );
    let out = aggiv(
        dir.path(),
        &["acid", "--config", &cfg, "--at", "-1.5", "--n", "1000"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ace=1.5"));
    let sample = std::fs::read_to_string(dir.path().join("acid/interventional.csv")).unwrap();
    assert!(sample.starts_with("# a=-1.5\na1,a2\n"));

    let cfg = write(
        dir.path(),
        "cx.toml",
        &format!("{BASE}\n[acid]\nkind = \"counterexample\"\n"),
    );
    let out = aggiv(dir.path(), &["acid", "--config", &cfg, "--at", "-2"]);
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("effect=1.5"));
    let out = aggiv(dir.path(), &["acid", "--config", &cfg, "--at", "2.5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_experiment_and_bad_grid_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        aggiv(dir.path(), &["experiment", "figure9"]).status.code(),
        Some(2)
    );
    assert_eq!(
        aggiv(
            dir.path(),
            &["experiment", "figure2a", "--grid", "4:-1:0.1"]
        )
        .status
        .code(),
        Some(2)
    );
}
