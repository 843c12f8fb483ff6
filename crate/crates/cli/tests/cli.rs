//! End-to-end tests of the `ope` binary: every subcommand over real files,
//! plus the failure paths the pipeline gates on (corrupt propensities,
//! malformed lines, unknown schema versions).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ope_core::collector::{corrupt_propensities, PropensityCorruption};
use ope_core::logio;
use ope_core::types::EnvironmentSpec;

fn ope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ope"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// One scenario + log shared by the read-only subcommand tests.
fn setup(dir: &Path) {
    assert_ok(&ope(
        dir,
        &[
            "gen-scenario",
            "--num-queries",
            "8",
            "--l",
            "3",
            "--seed",
            "11",
            "--out",
            "env.json",
        ],
    ));
    assert_ok(&ope(
        dir,
        &[
            "collect",
            "--env",
            "env.json",
            "--scheme",
            "sigmoid",
            "--n",
            "4000",
            "--seed",
            "7",
            "--out",
            "log.jsonl",
        ],
    ));
}

#[test]
fn pipeline_generates_verifies_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    // The generated file is a loadable environment and carries its metadata.
    let env_text = fs::read_to_string(dir.path().join("env.json")).unwrap();
    let env: EnvironmentSpec = serde_json::from_str(&env_text).unwrap();
    assert_eq!(env.action_count(), 4);
    assert!(env_text.contains("\"scenario\""));
    assert!(dir.path().join("env.json.manifest.json").exists());
    assert!(dir.path().join("log.jsonl.manifest.json").exists());

    // Clean log: verify exits zero and reports every test passing.
    let verify = ope(
        dir.path(),
        &["verify", "--log", "log.jsonl", "--out", "report.json"],
    );
    assert_ok(&verify);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["replay"]["passed"], true);

    // Evaluate: the IPS point must sit within 3 standard errors of the
    // environment oracle for the same policy.
    let eval = ope(
        dir.path(),
        &[
            "evaluate",
            "--log",
            "log.jsonl",
            "--policy",
            "threshold:0.5",
            "--out",
            "est.csv",
        ],
    );
    assert_ok(&eval);
    let csv = fs::read_to_string(dir.path().join("est.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy_id,estimator,point,stderr,ci_low,ci_high,n,match_count"
    );
    let ips_row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let point: f64 = ips_row[2].parse().unwrap();
    let stderr: f64 = ips_row[3].parse().unwrap();
    let truth = env
        .true_value(&ope_core::types::Policy::ScoreThreshold { tau: 0.5 })
        .unwrap();
    assert!(
        (point - truth).abs() < 3.0 * stderr,
        "point {point} vs oracle {truth} (stderr {stderr})"
    );
}

#[test]
fn verify_rejects_corrupted_propensities() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let log = logio::load_log(&dir.path().join("log.jsonl")).unwrap();
    let factors = [(1usize, 1.5f64)].into_iter().collect();
    let out = corrupt_propensities(&log, &PropensityCorruption::PerAction(factors)).unwrap();
    logio::save_log(&dir.path().join("bad.jsonl"), &out.records).unwrap();

    let verify = ope(dir.path(), &["verify", "--log", "bad.jsonl"]);
    assert!(!verify.status.success());
    let stdout = String::from_utf8_lossy(&verify.stdout);
    assert!(stdout.contains("FAILED"), "{stdout}");
}

#[test]
fn malformed_line_aborts_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut text = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    text.push_str("{broken\n");
    fs::write(dir.path().join("broken.jsonl"), text).unwrap();

    let out = ope(
        dir.path(),
        &[
            "evaluate",
            "--log",
            "broken.jsonl",
            "--policy",
            "threshold:0.5",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("4001"), "stderr: {stderr}");
}

#[test]
fn unknown_schema_version_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let line = r#"{"schema":9,"ctx":{"id":"x","features":[0.5]},"action":0,"p":0.5,"r":1.0}"#;
    fs::write(dir.path().join("future.jsonl"), format!("{line}\n")).unwrap();
    let out = ope(
        dir.path(),
        &[
            "evaluate",
            "--log",
            "future.jsonl",
            "--policy",
            "threshold:0.5",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("schema"), "stderr: {stderr}");
}

#[test]
fn bootstrap_writes_histogram_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_ok(&ope(
        dir.path(),
        &[
            "bootstrap",
            "--log",
            "log.jsonl",
            "--policy",
            "threshold:0.5",
            "--B",
            "50",
            "--bins",
            "10",
            "--seed",
            "3",
            "--out",
            "boot",
        ],
    ));
    let csv = fs::read_to_string(dir.path().join("boot.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "bin_low,bin_high,count");
    let total: usize = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 50);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("boot.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["b"], 50);
}

#[test]
fn compare_emits_one_row_per_period() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_ok(&ope(
        dir.path(),
        &[
            "compare",
            "--env",
            "env.json",
            "--scheme",
            "sigmoid",
            "--policy",
            "threshold:0.4",
            "--days",
            "7",
            "--n",
            "1500",
            "--seed",
            "5",
            "--out",
            "cmp.csv",
        ],
    ));
    let csv = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "period,online_value,ips_value,biased_value,ci_width"
    );
    assert_eq!(lines.len(), 8);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")));
    }
}

#[test]
fn optimize_selects_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ope(
        dir.path(),
        &[
            "optimize",
            "--log",
            "log.jsonl",
            "--env",
            "env.json",
            "--grid",
            "threshold:0.1,0.3,0.5,0.7,0.9",
            "--seed",
            "9",
            "--out",
            "opt",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected threshold params"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("opt.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6); // header + 5 grid rows
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("opt.json")).unwrap()).unwrap();
    assert!(json["report"]["selected"].is_number());
    assert!(json["validation"]["true_value"].is_number());
}

#[test]
fn optimize_with_impossible_capacity_reports_no_selection() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ope(
        dir.path(),
        &[
            "optimize",
            "--log",
            "log.jsonl",
            "--env",
            "env.json",
            "--grid",
            "threshold:0.1,0.5",
            "--capacity",
            "0.5",
            "--seed",
            "9",
            "--out",
            "opt2",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("no feasible candidate"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("opt2.json")).unwrap()).unwrap();
    assert!(json["report"]["selected"].is_null());
}

#[test]
fn reruns_reproduce_artifacts_byte_for_byte() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [dir_a.path(), dir_b.path()] {
        setup(dir);
        assert_ok(&ope(
            dir,
            &[
                "compare",
                "--env",
                "env.json",
                "--policy",
                "threshold:0.4",
                "--days",
                "3",
                "--n",
                "500",
                "--seed",
                "5",
                "--out",
                "cmp.csv",
            ],
        ));
    }
    for file in ["env.json", "log.jsonl", "cmp.csv", "cmp.csv.manifest.json"] {
        let a = fs::read(dir_a.path().join(file)).unwrap();
        let b = fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}
