use adiabatica::run::{execute, run_to_dir, RunConfig};
use serde_json::Value;

fn config(text: &str) -> RunConfig {
    RunConfig::from_json(text).unwrap()
}

fn summary(text: &str) -> Value {
    execute(&config(text)).unwrap().summary
}

#[test]
fn chern_matches_pumped_charge() {
    let torus = r#""torus": {"kappa_points": 48, "time_points": 48}"#;
    let c = summary(&format!(r#"{{"experiment": "chern", "model": {{"name": "rice_mele"}}, {torus}}}"#));
    let q = summary(&format!(r#"{{"experiment": "pump", "model": {{"name": "rice_mele"}}, {torus}}}"#));
    let q = q["pumped_charge"][0].as_f64().unwrap();
    assert_eq!(c["integer"].as_i64().unwrap().abs(), 1);
    assert_eq!(c["integer"].as_i64().unwrap() as f64, q.round());
    assert!((q.abs() - 1.0).abs() < 1e-3, "{q}");
}

#[test]
fn piezo_terms_vanish_on_small_torus() {
    let s = summary(
        r#"{"experiment": "piezo", "model": {"name": "two_band_3d"},
            "torus": {"kappa_points": 20, "time_points": 16}, "field": [0.1, 0.4, -0.3]}"#,
    );
    assert!(s["term1_norm"].as_f64().unwrap() < 1e-8, "{s}");
    assert!(s["max_divergence"].as_f64().unwrap() < 1e-6, "{s}");
}

#[test]
fn flow_modes_agree_to_first_order() {
    let run = |eps: f64| {
        let s = summary(&format!(
            r#"{{"experiment": "flow", "model": {{"name": "avoided_crossing"}}, "epsilon": {eps},
                "points": [[1.0, 0.5]], "time": 1.0,
                "modes": ["corrected_truncated", "corrected_exact", "uncorrected"]}}"#
        ));
        let finals: Vec<Vec<f64>> = s["final_points"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["final"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        (dist(&finals[0], &finals[1]), dist(&finals[0], &finals[2]))
    };
    let (exact_a, plain_a) = run(0.1);
    let (exact_b, plain_b) = run(0.05);
    // Truncated vs exact differ at second order, corrected vs plain at first order.
    assert!((exact_a / exact_b).log2() > 1.7, "{exact_a} {exact_b}");
    assert!(((plain_a / plain_b).log2() - 1.0).abs() < 0.3, "{plain_a} {plain_b}");
}

#[test]
fn sweep_tables_have_one_row_per_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#"{"experiment": "residual", "model": {"name": "avoided_crossing"},
            "sweep": [0.25, 0.125, 0.0625], "grid": {"points": 256, "max_half_width": 8.0},
            "window": {"cutoff": 3.0}}"#,
    );
    let rep = run_to_dir(&cfg, dir.path()).unwrap();
    let csv = std::fs::read_to_string(&rep.results_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,with_m,without_m");
    assert_eq!(lines.len(), 4);
    let with_m: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let without: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(with_m.iter().zip(&without).all(|(a, b)| a < b));
    assert!(rep.manifest.summary["fits"]["with_m"]["slope"].as_f64().unwrap() > 1.4);
}

#[test]
fn validation_errors_name_the_field() {
    let e = RunConfig::from_json(r#"{"experiment": "egorov", "model": {"name": "avoided_crossing"}, "sweep": [0.1]}"#)
        .and_then(|c| c.validate())
        .unwrap_err();
    assert!(e.is_validation() && e.to_string().contains("grid"), "{e}");
}
