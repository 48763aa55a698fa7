//! End-to-end runs of the `mfg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config(dir: &Path, fixedpoint: &str) -> PathBuf {
    let path = dir.join("small.json");
    let text = format!(
        r#"{{
  "seed": 7,
  "model": {{ "builtin": "reference_lq" }},
  "grid": {{ "n_steps": 20 }},
  "fixedpoint": {fixedpoint},
  "experiment": {{
    "nash": {{ "ns": [4, 8], "replications": 10, "deviations": ["equilibrium", "zero"] }},
    "chaos": {{ "ns": [4, 8], "replications": 10 }}
  }}
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

const FAST: &str = r#"{ "n_particles": 1000, "support": 64, "tolerance": 0.1, "lattice": { "spacing": 0.1 } }"#;

fn run_dir(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn sign_violation_is_advisory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("lq_sign_violation.json");
    let out = mfg(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(run_dir(&out).join("summary.txt")).unwrap();
    assert!(
        summary.contains("VIOLATED (advisory): weak mean reversion, terminal"),
        "{summary}"
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir(&out).join("assumptions.json")).unwrap()).unwrap();
    assert!(report["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["passed"] == false));
}

#[test]
fn degenerate_control_cost_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"lq_spec": {"b0": 0, "b1": 0, "b2": 1, "m": 1, "mbar": 0, "n": 0, "q": 1, "qbar": 0,
            "sigma": 1, "x0": 0, "T": 1}}"#,
    )
    .unwrap();
    let out = mfg(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(run_dir(&out).join("summary.txt")).unwrap();
    assert!(summary.contains("VIOLATED (blocking)"), "{summary}");
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = mfg(&["solve", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());

    let unknown = mfg(&["frobnicate", "--config", "x.json"]);
    assert_eq!(unknown.status.code(), Some(2));

    let typo = tmp.path().join("typo.json");
    fs::write(&typo, r#"{"fixedpoint": {"dampign": 0.5}}"#).unwrap();
    assert_eq!(
        mfg(&["solve", "--config", typo.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let odd = small_config(tmp.path(), r#"{ "n_particles": 1001 }"#);
    let out = mfg(&[
        "solve",
        "--config",
        odd.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), FAST);
    let out_dir = tmp.path().join("solve");
    let args = [
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ];
    let a = mfg(&args);
    let b = mfg(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(run_dir(&a), out_dir);
    assert_eq!(run_dir(&b), tmp.path().join("solve-1"));
    let (fa, fb) = (csv_files(&run_dir(&a)), csv_files(&run_dir(&b)));
    for name in [
        "flow.csv",
        "flow_moments.csv",
        "residuals.csv",
        "field.csv",
        "paths.csv",
        "riccati.csv",
    ] {
        assert!(fa.iter().any(|(n, _)| n == name), "missing {name}");
    }
    assert_eq!(fa, fb);
    assert_eq!(
        fs::read(run_dir(&a).join("field.json")).unwrap(),
        fs::read(run_dir(&b).join("field.json")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), FAST);
    let runs: Vec<_> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = mfg(&[
                "chaos",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                tmp.path().join(format!("t{t}")).to_str().unwrap(),
                "--threads",
                t,
                "--quiet",
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            run_dir(&out)
        })
        .collect();
    assert_eq!(csv_files(&runs[0]), csv_files(&runs[1]));
    assert_eq!(manifest(&runs[1])["threads"], 3);
}

#[test]
fn seed_override_is_recorded_and_used() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), FAST);
    let base = mfg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("a").to_str().unwrap(),
        "--quiet",
    ]);
    let other = mfg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("b").to_str().unwrap(),
        "--seed",
        "8",
        "--quiet",
    ]);
    let (ma, mb) = (manifest(&run_dir(&base)), manifest(&run_dir(&other)));
    assert_eq!(ma["master_seed"], 7);
    assert_eq!(ma["seed_overridden"], false);
    assert_eq!(mb["master_seed"], 8);
    assert_eq!(mb["seed_overridden"], true);
    let read = |o: &Output| fs::read(run_dir(o).join("flow.csv")).unwrap();
    assert_ne!(read(&base), read(&other));
    assert!(!ma["derived_seeds"].as_array().unwrap().is_empty());
    assert_eq!(ma["exit_code"], 0);
}

#[test]
fn non_convergence_exits_with_three_and_keeps_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        r#"{ "n_particles": 1000, "support": 64, "tolerance": 1e-9, "max_iters": 2, "lattice": { "spacing": 0.1 } }"#,
    );
    let out = mfg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let dir = run_dir(&out);
    let residuals = fs::read_to_string(dir.join("residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 3);
    assert!(dir.join("flow.csv").exists() && dir.join("manifest.json").exists());
    assert_eq!(manifest(&dir)["exit_code"], 3);
}

#[test]
fn reference_solve_meets_its_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("lq_reference.json");
    let out = mfg(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("s").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let residuals = fs::read_to_string(run_dir(&out).join("residuals.csv")).unwrap();
    let last: f64 = residuals
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(last <= 0.01, "{last}");
    let flow = fs::read_to_string(run_dir(&out).join("flow.csv")).unwrap();
    assert_eq!(flow.lines().next().unwrap(), "t,atom,x_0,weight");
    // 101 time nodes; the first is a single atom, the rest carry the thinned support
    let first: Vec<_> = flow.lines().skip(1).take_while(|l| l.starts_with("0.0,")).collect();
    let total: f64 = first
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn lq_oracle_reports_the_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("lq_terminal_only.json");
    let out = mfg(&[
        "lq-oracle",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let oracle: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir(&out).join("oracle.json")).unwrap()).unwrap();
    let j = oracle["cost"].as_f64().unwrap();
    assert!((j - (0.25 + 0.5 * std::f64::consts::LN_2)).abs() < 1e-6);
    let csv = fs::read_to_string(run_dir(&out).join("riccati.csv")).unwrap();
    assert!(csv.starts_with("t,eta_00,chi_0,xbar_0,cov_00"));
}

#[test]
fn rate_table_has_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("rate.json");
    fs::write(
        &cfg,
        r#"{"seed": 3, "experiment": {"rate": {"law": {"uniform": {"lo": 0, "hi": 1}}, "ns": [8, 16, 32], "reps": 20, "reference_atoms": 4096}}}"#,
    )
    .unwrap();
    let out = mfg(&[
        "wasserstein-rate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run_dir(&out).join("rate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "N,mean_w2sq,stderr,bound_C_Npow");
    assert_eq!(lines.count(), 3);
}
