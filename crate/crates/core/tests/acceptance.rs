//! Primary acceptance criteria. Runs as a plain binary so the per-criterion
//! lines are printed even when everything passes.

use adiabatica::band::BandOptions;
use adiabatica::bloch::{chern_number, minimum_gap, piezo_cancellation, pumped_charge, TorusGrid};
use adiabatica::exec;
use adiabatica::experiments::{
    effective_hamiltonian_residual, equilibrium_error, fit_order, liouville_sweep, moyal_error,
    projector_invariance, wigner_transport_error, Corrections, EnergyWindow, ErrorCurve, MoyalKind,
    QuadratureOptions, QuantumSetup,
};
use adiabatica::flow::{FlowConfig, FlowMode, LatticeOptions};
use adiabatica::identities::{identity_suite, sample_points, IDENTITY_TOLERANCES};
use adiabatica::models::{build_model, symbol_catalog, ModelSpec, RiceMele, TwoBand3D};
use adiabatica::observables::Gaussian;
use adiabatica::ode::Integrator;
use adiabatica::quantum::WaveFunction;
use adiabatica::run::{flagship_config, run_to_dir, GridSpec, DEFAULT_INTEGRATOR};
use adiabatica::symbols::PhasePoint;
use num_complex::Complex64 as C64;
use std::time::Instant;

const SWEEP: [f64; 4] = [0.125, 0.0625, 0.03125, 0.015625];
const GRID: GridSpec = GridSpec { points: 1024, max_half_width: 8.0 };
/// Energy window for the operator norms of criteria 2 and 5, fixed before measuring.
const WINDOW: EnergyWindow = EnergyWindow { cutoff: 3.0 };

struct Ledger {
    lines: Vec<(bool, String)>,
    start: Instant,
}

impl Ledger {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        let line = format!(
            "[{}] {id:>2}. {name}: {detail} ({:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            self.start.elapsed().as_secs_f64()
        );
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn slope(name: &str, points: &[(f64, f64)]) -> f64 {
    let curve = ErrorCurve::new(name, "avoided_crossing", name, 1.0, GRID.points, points.to_vec()).unwrap();
    fit_order(&curve).map(|f| f.slope).unwrap_or(f64::NAN)
}

fn errors(points: &[(f64, f64)]) -> String {
    let v: Vec<String> = points.iter().map(|(_, e)| format!("{e:.3e}")).collect();
    format!("[{}]", v.join(", "))
}

fn main() {
    let mut ledger = Ledger { lines: Vec::new(), start: Instant::now() };
    let band = BandOptions::default();
    let model = build_model(&ModelSpec::new("avoided_crossing")).unwrap();
    let gauss = Gaussian::new(1.5, 0.0, 0.7);
    let work = tempfile::tempdir().unwrap();

    // 1. Egorov order, through the config runner on four worker threads.
    let flagship = flagship_config();
    let first = exec::with_threads(4, || run_to_dir(&flagship, &work.path().join("threads4")));
    match &first {
        Ok(rep) => {
            let fits = &rep.manifest.summary["fits"];
            let c = fits["corrected_truncated"]["slope"].as_f64().unwrap_or(f64::NAN);
            let u = fits["uncorrected"]["slope"].as_f64().unwrap_or(f64::NAN);
            let pass = (1.6..=2.4).contains(&c) && (0.6..=1.4).contains(&u);
            ledger.record(1, "Egorov order", pass, format!("corrected slope {c:.3} in [1.6, 2.4], uncorrected {u:.3} in [0.6, 1.4]"));
        }
        Err((e, _)) => ledger.record(1, "Egorov order", false, format!("run failed: {e}")),
    }

    // 2.-5. share one quantum setup per epsilon.
    let (mut res_m, mut res_nom, mut eq_on, mut eq_off, mut wig, mut proj) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    let mut failure = None;
    let f = adiabatica::observables::Bump { lo: -1.5, hi: 1.0 };
    for &eps in &SWEEP {
        let mut step = || -> adiabatica::error::Result<()> {
            let setup = QuantumSetup::new(model.clone(), GRID.at(eps)?, band)?;
            res_m.push((eps, effective_hamiltonian_residual(&setup, true, Some(&WINDOW))?));
            res_nom.push((eps, effective_hamiltonian_residual(&setup, false, Some(&WINDOW))?));
            let quad = QuadratureOptions::default();
            eq_on.push((eps, equilibrium_error(&setup, &f, &gauss, Corrections::On, &quad)?));
            eq_off.push((eps, equilibrium_error(&setup, &f, &gauss, Corrections::Off, &quad)?));
            let cfg = FlowConfig::new(eps, FlowMode::CorrectedTruncated).with_integrator(DEFAULT_INTEGRATOR);
            let psi0 = WaveFunction::gaussian(setup.grid, -1.0, 1.0, eps.sqrt(), &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])?;
            let a_op = setup.quantize_observable(&gauss)?;
            let pulled = setup.pullback(&gauss, 1.0, &cfg, &LatticeOptions::default())?;
            wig.push((eps, wigner_transport_error(&setup, &psi0, &a_op, &pulled, 1.0)?));
            proj.push((eps, projector_invariance(&setup, 1.0, Some(&WINDOW))?));
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(format!("eps = {eps}: {e}"));
            break;
        }
    }
    if let Some(msg) = failure {
        for (id, name) in [(2, "effective Hamiltonian residual"), (3, "equilibrium expectations"), (4, "Wigner transport"), (5, "projector invariance")] {
            ledger.record(id, name, false, msg.clone());
        }
    } else {
        let (a, b) = (slope("residual_m", &res_m), slope("residual_no_m", &res_nom));
        ledger.record(
            2,
            "effective Hamiltonian residual",
            (1.6..=2.4).contains(&a) && (0.6..=1.4).contains(&b),
            format!("with M slope {a:.3} in [1.6, 2.4], without M {b:.3} in [0.6, 1.4]; with M {}", errors(&res_m)),
        );
        let (a, b) = (slope("eq_on", &eq_on), slope("eq_off", &eq_off));
        ledger.record(
            3,
            "equilibrium expectations",
            (1.6..=2.4).contains(&a) && (0.6..=1.4).contains(&b),
            format!("corrections on slope {a:.3} in [1.6, 2.4], off {b:.3} in [0.6, 1.4]; on {}", errors(&eq_on)),
        );
        let a = slope("wigner", &wig);
        ledger.record(4, "Wigner transport", (1.6..=2.4).contains(&a), format!("slope {a:.3} in [1.6, 2.4]; {}", errors(&wig)));
        let a = slope("projector", &proj);
        ledger.record(5, "projector invariance", a >= 2.0, format!("slope {a:.3} >= 2.0; {}", errors(&proj)));
    }

    // 6. Scalar Moyal commutator.
    let g2 = Gaussian::new(-0.3, 0.6, 0.9);
    let moyal: Result<Vec<(f64, f64)>, _> = SWEEP
        .iter()
        .map(|&eps| Ok::<_, adiabatica::error::Error>((eps, moyal_error(MoyalKind::Commutator, model.as_ref(), &gauss, &g2, GRID.at(eps)?, &band)?)))
        .collect();
    match moyal {
        Ok(pts) => {
            let a = slope("moyal", &pts);
            ledger.record(6, "Moyal commutator", a >= 2.7, format!("slope {a:.3} >= 2.7; {}", errors(&pts)));
        }
        Err(e) => ledger.record(6, "Moyal commutator", false, e.to_string()),
    }

    // 7. Algebraic identities at 100 random points of every registry model.
    let mut worst = [0.0f64; 7];
    let mut failed_models = Vec::new();
    for (k, info) in symbol_catalog().iter().enumerate() {
        let m = build_model(&ModelSpec::new(info.name)).unwrap();
        let pts = sample_points(m.as_ref(), 100, 1000 + k as u64);
        match identity_suite(m.as_ref(), &pts, 2000 + k as u64, &band) {
            Ok(r) => {
                for (w, v) in worst.iter_mut().zip(r.values()) {
                    *w = w.max(v);
                }
                if !r.failures().is_empty() {
                    failed_models.push(format!("{}: {:?}", info.name, r.failures()));
                }
            }
            Err(e) => failed_models.push(format!("{}: {e}", info.name)),
        }
    }
    let detail: Vec<String> = IDENTITY_TOLERANCES.iter().zip(worst).map(|((n, tol), v)| format!("{n} {v:.1e} <= {tol:.0e}")).collect();
    ledger.record(
        7,
        "algebraic identities",
        failed_models.is_empty(),
        if failed_models.is_empty() { detail.join(", ") } else { failed_models.join("; ") },
    );

    // 8. Pump quantization.
    let torus = TorusGrid::new(64, 64).unwrap();
    let standard = RiceMele::default();
    let small = RiceMele { center_t1: 1.5, radius: 0.05, ..Default::default() };
    let pump = (|| -> adiabatica::error::Result<(f64, i64, f64, i64, f64)> {
        let q = pumped_charge(&standard, &torus, &band)?[0];
        let c = chern_number(&standard, &torus, 0.0, &band)?.integer;
        let q0 = pumped_charge(&small, &torus, &band)?[0];
        let c0 = chern_number(&small, &torus, 0.0, &band)?.integer;
        Ok((q, c, q0, c0, minimum_gap(&small, &torus, &band)?))
    })();
    match pump {
        Ok((q, c, q0, c0, gap)) => {
            let pass = (q.abs() - 1.0).abs() < 1e-3 && c as f64 == q.round() && q0.abs() < 1e-3 && c0 == 0;
            ledger.record(
                8,
                "pump quantization",
                pass,
                format!("Q = {q:.6}, chern = {c}; non-encircling Q = {q0:.1e}, chern = {c0} (gap {gap:.2})"),
            );
        }
        Err(e) => ledger.record(8, "pump quantization", false, e.to_string()),
    }

    // 9. Piezo cancellation at 48^3 nodes.
    let b = [0.3, -0.2, 0.5];
    match piezo_cancellation(&TwoBand3D::default(), b, 0.0, &TorusGrid::new(48, 16).unwrap(), &band) {
        Ok(r) => {
            let n1 = r.term1.iter().map(|x| x * x).sum::<f64>().sqrt();
            ledger.record(
                9,
                "piezo cancellation",
                n1 < 1e-8 && r.max_divergence < 1e-6,
                format!("|term1| = {n1:.1e} < 1e-8, max |div Omega| = {:.1e} < 1e-6", r.max_divergence),
            );
        }
        Err(e) => ledger.record(9, "piezo cancellation", false, e.to_string()),
    }

    // 10. Liouville invariance of the corrected measure.
    let lmodel = build_model(&ModelSpec::new("avoided_crossing").with("omega", 1.3)).unwrap();
    let base = FlowConfig::new(0.1, FlowMode::CorrectedTruncated).with_integrator(Integrator::Rk45Adaptive { rtol: 1e-12, atol: 1e-14 });
    match liouville_sweep(lmodel.as_ref(), &PhasePoint::qp(1.0, 0.5), 1.0, &SWEEP, &base) {
        Ok(pts) => {
            let a = slope("liouville", &pts);
            ledger.record(10, "Liouville invariance", a >= 2.0, format!("slope {a:.3} >= 2.0; {}", errors(&pts)));
        }
        Err(e) => ledger.record(10, "Liouville invariance", false, e.to_string()),
    }

    // 11. Determinism: the flagship again on one thread, byte-compared.
    let second = exec::with_threads(1, || run_to_dir(&flagship, &work.path().join("threads1")));
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            let x = std::fs::read(&a.results_path).unwrap();
            let y = std::fs::read(&b.results_path).unwrap();
            ledger.record(
                11,
                "determinism",
                x == y,
                format!("results.csv with 4 threads and 1 thread {} ({} bytes)", if x == y { "identical" } else { "differ" }, x.len()),
            );
        }
        _ => ledger.record(11, "determinism", false, "a flagship run failed".into()),
    }

    let failed = ledger.lines.iter().filter(|(p, _)| !p).count();
    println!("\nacceptance: {} of {} criteria passed", ledger.lines.len() - failed, ledger.lines.len());
    for (_, line) in ledger.lines.iter().filter(|(p, _)| !p) {
        println!("  {line}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
