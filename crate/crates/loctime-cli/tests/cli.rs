//! End-to-end tests of the compiled binary: exit codes, report files,
//! overrides, seed precedence, and thread-count invariance.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loctime::calibration::Calibration;
use loctime::harness::report::ExperimentReport;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_loctime"));
    cmd.env_remove("LOCTIME_SEED");
    cmd
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("loctime-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}"))
}

fn write_tiny_clt2_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny_clt2.toml");
    fs::write(
        &path,
        r#"
# Smoke-test scale: 100 paths cannot resolve the statistical gates, so the
# tolerances below are opened wide. This config exercises plumbing (exit
# codes, report files, seeds, threads), not the limit claims.
kind = "clt2"
t = 0.25
h_list = [0.1]
dt = 1.0e-3
n_paths = 100
base_seed = 3

[grid]
x_min = -3.5
x_max = 3.5
dx = 0.0125

[tolerance]
z_multiplier = 10.0
rel_multiplier = 6.0
"#,
    )
    .unwrap();
    path
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn load_report(path: &Path) -> ExperimentReport {
    ExperimentReport::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_happy_path_writes_reports_and_exits_zero() {
    let out_dir = temp_dir("run-happy");
    let out = bin()
        .args(["run", "--config"])
        .arg(repo_config("potential_integrals.toml"))
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("[PASS] potential_integrals"), "stdout: {text}");

    let report = load_report(&out_dir.join("potential_integrals.report.json"));
    assert!(report.all_pass);
    assert!(report.overrides.is_empty());
    let csv = fs::read_to_string(out_dir.join("potential_integrals.rows.csv")).unwrap();
    assert!(csv.starts_with("check_id,"));
    assert_eq!(csv.trim().lines().count(), 1 + report.rows.len());
}

#[test]
fn overrides_are_applied_and_recorded() {
    let out_dir = temp_dir("run-override");
    let out = bin()
        .args(["run", "--config"])
        .arg(repo_config("potential_integrals.toml"))
        .arg("--output-dir")
        .arg(&out_dir)
        .args(["--override", "h_list=[0.1,0.02]"])
        .args(["--override", "tolerance.rel_multiplier=1.25"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = load_report(&out_dir.join("potential_integrals.report.json"));
    assert_eq!(report.config.h_list, vec![0.1, 0.02]);
    assert_eq!(report.config.tolerance.rel_multiplier, 1.25);
    assert!(report
        .overrides
        .iter()
        .any(|o| o.contains("tolerance.rel_multiplier")));
}

#[test]
fn malformed_config_exits_two_before_any_output() {
    let dir = temp_dir("run-malformed");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "kind = [unclosed\n").unwrap();
    let out_dir = dir.join("reports");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(!out_dir.exists(), "no output may be written on config errors");
}

#[test]
fn invalid_field_is_named_in_the_error() {
    let dir = temp_dir("run-invalid-field");
    let cfg = write_tiny_clt2_config(&dir);
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "n_paths=50"])
        .arg("--output-dir")
        .arg(dir.join("reports"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("n_paths"), "stderr: {}", stderr(&out));
}

#[test]
fn failing_gates_exit_one() {
    let out_dir = temp_dir("run-failing");
    let out = bin()
        .args(["run", "--config"])
        .arg(repo_config("potential_integrals.toml"))
        .arg("--output-dir")
        .arg(&out_dir)
        // Absurdly tight relative gates: the coefficient rows must fail.
        .args(["--override", "tolerance.rel_multiplier=1e-6"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr(&out));
    let report = load_report(&out_dir.join("potential_integrals.report.json"));
    assert!(!report.all_pass);
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().arg("run").output().unwrap();
    assert_eq!(exit_code(&out), 2);
    let out = bin().arg("no-such-subcommand").output().unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn env_seed_overrides_config_and_explicit_override_beats_env() {
    let dir = temp_dir("run-seed");
    let cfg = write_tiny_clt2_config(&dir);

    let out = bin()
        .env("LOCTIME_SEED", "77")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("a"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = load_report(&dir.join("a/clt2.report.json"));
    assert_eq!(report.config.base_seed, 77);

    let out = bin()
        .env("LOCTIME_SEED", "77")
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "base_seed=5"])
        .arg("--output-dir")
        .arg(dir.join("b"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = load_report(&dir.join("b/clt2.report.json"));
    assert_eq!(report.config.base_seed, 5);

    let out = bin()
        .env("LOCTIME_SEED", "not-a-number")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("c"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("LOCTIME_SEED"));
}

#[test]
fn thread_count_does_not_change_the_report_body() {
    let dir = temp_dir("run-threads");
    let cfg = write_tiny_clt2_config(&dir);
    for threads in ["1", "2"] {
        let out = bin()
            .args(["run", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(dir.join(threads))
            .output()
            .unwrap();
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    }
    let one = load_report(&dir.join("1/clt2.report.json"));
    let two = load_report(&dir.join("2/clt2.report.json"));
    assert_eq!(one.body_fingerprint(), two.body_fingerprint());
}

#[test]
fn calibrate_writes_once_and_needs_force_to_refit() {
    let dir = temp_dir("calibrate");
    let path = dir.join("calibration.txt");

    let out = bin().args(["calibrate", "--path"]).arg(&path).output().unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let first = fs::read_to_string(&path).unwrap();
    let cal = Calibration::load(&path).unwrap();
    for key in cal.keys() {
        let v = cal.get(key).unwrap();
        assert!(v.is_finite() && v > 0.0, "{key} = {v}");
    }

    // Second run without --force is a no-op.
    fs::write(&path, format!("{first}# sentinel\n")).unwrap();
    let out = bin().args(["calibrate", "--path"]).arg(&path).output().unwrap();
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).contains("--force"));
    assert!(fs::read_to_string(&path).unwrap().contains("# sentinel"));

    // --force refits deterministically.
    let out = bin()
        .args(["calibrate", "--force", "--path"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
}

#[test]
fn report_subcommand_renders_summary_and_csv() {
    let dir = temp_dir("report-render");
    let out = bin()
        .args(["run", "--config"])
        .arg(repo_config("potential_integrals.toml"))
        .arg("--output-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let json_path = dir.join("potential_integrals.report.json");

    let out = bin().arg("report").arg(&json_path).output().unwrap();
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).contains("[PASS]"));

    let out = bin().arg("report").arg(&json_path).arg("--csv").output().unwrap();
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).starts_with("check_id,"));

    let out = bin().arg("report").arg(dir.join("missing.json")).output().unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn verify_all_quick_writes_reports_and_summary() {
    let dir = temp_dir("verify-quick");
    let out = bin()
        .args(["verify-all", "--quick", "--seed", "42", "--output-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    // Quick mode is a smoke run: criteria may legitimately fail, so the
    // exit code only distinguishes "ran" (0/1) from "could not run" (2).
    let code = exit_code(&out);
    assert!(code == 0 || code == 1, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(
        text.lines().filter(|l| l.contains("criterion")).count(),
        11,
        "stdout: {text}"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("verify-summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["criteria"].as_array().unwrap().len(), 11);
    // Every report the summary references was written alongside it.
    for report in summary["reports"].as_array().unwrap() {
        let kind = report["config"]["kind"].as_str().unwrap();
        assert!(dir.join(format!("verify-{kind}.report.json")).exists());
    }
}
