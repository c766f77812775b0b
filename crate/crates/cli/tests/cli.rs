use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adiabatica"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn list_models_shows_registry() {
    let o = bin().arg("list-models").output().unwrap();
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["avoided_crossing", "decoupled_diag", "rice_mele", "two_band_3d", "gaussian", "bump"] {
        assert!(s.contains(name), "missing {name}");
    }
}

#[test]
fn describe_prints_formulas() {
    let o = bin().args(["describe", "egorov"]).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("Op(a o phi^t_eps)"));
    let o = bin().args(["describe", "pump"]).output().unwrap();
    assert!(stdout(&o).contains("j(t) = int Omega^{pt}(t, k) dk / (2 pi)^m"));
    assert_eq!(bin().args(["describe", "nothing"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn unknown_model_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "pump", "model": {"name": "graphene"}, "torus": {"kappa_points": 16, "time_points": 16}}"#,
    );
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rice_mele") && err.contains("avoided_crossing"), "{err}");
}

#[test]
fn missing_output_directory_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "pump", "model": {"name": "rice_mele"}, "torus": {"kappa_points": 16, "time_points": 16}}"#,
    );
    assert_eq!(bin().arg("run").arg(&cfg).output().unwrap().status.code(), Some(2));
}

#[test]
fn gap_guard_exits_with_code_three_and_records_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "band-info", "model": {{"name": "avoided_crossing"}}, "epsilon": 0.1,
                "points": [[0.25, -0.5]], "gap_min": 4.0, "output": {:?}}}"#,
            out.display().to_string()
        ),
    );
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["error"]["kind"], "numerical_guard");
    assert_eq!(m["error"]["coords"], serde_json::json!([0.25, -0.5]));
}

#[test]
fn pump_run_is_thread_count_independent_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "pump", "model": {"name": "rice_mele"}, "torus": {"kappa_points": 32, "time_points": 32}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(&a).args(["--threads", "3"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin().arg("run").arg(a.join("manifest.json")).arg("--out").arg(&b).env("ADIABATICA_THREADS", "1").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["threads"], 1);
    let q = m["summary"]["pumped_charge"][0].as_f64().unwrap();
    assert!((q.abs() - 1.0).abs() < 1e-3, "{q}");
    let csv = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(csv.starts_with("t,j_1,cumulative_charge_1\n"));
    assert_eq!(csv.lines().count(), 33);
}
