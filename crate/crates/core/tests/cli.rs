use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imitate"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs_under_id_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "coordination_R1", "--out-dir", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let base = dir.path().join("o/coordination_R1/9");
    for f in ["trajectory_0.csv", "trajectory_1.csv", "equilibria.csv", "summary.json"] {
        assert!(base.join(f).exists(), "missing {f}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(base.join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r["converged"] == Value::Bool(true)));

    let o = run(&["run", "coordination_R1", "--out-dir", "o", "--seed", "11"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("o/coordination_R1/11/summary.json").exists());
}

#[test]
fn vertex_start_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", fixture("vertex_start.json").to_str().unwrap(), "--out-dir", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/vertex_start/1/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x_1,x_2,x_3,phi,phi_dot"));
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(&cols[1..4], &[0.0, 1.0, 0.0]);
        assert_eq!(cols[5], 0.0);
        rows += 1;
    }
    assert!(rows > 10);
}

#[test]
fn fixed_step_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["run", "anticoordination_R2", "--integrator", "fixed", "--t-end", "5", "--out-dir", out]
    };
    assert!(run(&args("a"), dir.path()).status.success());
    assert!(run(&args("b"), dir.path()).status.success());
    for f in ["trajectory_0.csv", "trajectory_1.csv", "equilibria.csv"] {
        let a = fs::read(dir.path().join("a/anticoordination_R2/9").join(f)).unwrap();
        let b = fs::read(dir.path().join("b/anticoordination_R2/9").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn verify_reports_reversed_sign_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", fixture("reversed_sign.json").to_str().unwrap(), "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = reports[0]["checks"].as_array().unwrap();
    let sign = checks.iter().find(|c| c["name"] == "sign").unwrap();
    assert_eq!(sign["outcome"], "fail");
    assert_eq!(sign["ok"], true);
    let lyap = checks.iter().find(|c| c["name"] == "lyapunov").unwrap();
    assert_eq!(lyap["outcome"], "fail");
}

#[test]
fn verify_flags_unexpected_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("reversed_sign.json")).unwrap();
    let text = text.replace("\"sign\": false, ", "");
    let p = write(dir.path(), "s.json", &text);
    let o = run(&["verify", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("BAD sign")), "{out}");
}

#[test]
fn rsp_potential_identity_fails_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "rsp_negative", "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Value = serde_json::from_slice(&o.stdout).unwrap();
    let check = reports[0]["checks"].as_array().unwrap().iter().find(|c| c["name"] == "potential_identity").cloned().unwrap();
    assert_eq!(check["outcome"], "fail");
    assert_eq!(check["expected"], "fail");
}

#[test]
fn equilibria_table_lists_interior_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibria", "anticoordination_R2", "--format", "csv"], dir.path());
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().next().unwrap().starts_with("x_1,x_2,support,label"));
    assert_eq!(out.lines().count(), 4);
    assert!(out.contains("nash"));
}

#[test]
fn non_square_reward_matrix_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.json",
        r#"{"id": "bad", "game": {"family": "linear", "R": [[1, 2, 3], [4, 5, 6]]},
            "rule": {"kind": "replicator"}, "initial": {"point": [0.5, 0.5]}, "integrator": {}}"#,
    );
    let o = run(&["run", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("game.R"), "{}", stderr(&o));
}

#[test]
fn random_gains_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "noseed.json",
        r#"{"id": "noseed", "game": {"family": "linear", "R": [[1, 0], [0, 1]]},
            "rule": {"kind": "arctan", "K": {"random_uniform": [0, 1]}},
            "initial": {"point": [0.5, 0.5]}, "integrator": {}}"#,
    );
    let o = run(&["run", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "broken.json", "{\n  \"id\": \"x\",\n  \"game\": [\n");
    let o = run(&["run", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "does/not/exist.json"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn tolerance_with_fixed_integrator_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "dominance_R3", "--integrator", "fixed", "--tol", "1e-6"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_basin_map() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "coordination_R1", "--grid", "11", "--t-end", "30", "--out-dir", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/coordination_R1/9/basin.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
}
