use adiabatica::band::{band_point, BandOptions};
use adiabatica::linalg::{eigh, CMatrix};
use adiabatica::models::{build_model, ModelSpec};
use adiabatica::symbols::{poisson_bracket, sandwich_bracket, PhasePoint, SymbolJet};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

const D: usize = 3;
const N: usize = 2;

fn matrix() -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), D * D)
        .prop_map(|v| CMatrix::from_slice(D, &v.into_iter().map(|(a, b)| C64::new(a, b)).collect::<Vec<_>>()))
}

fn hermitian() -> impl Strategy<Value = CMatrix> {
    matrix().prop_map(|m| m.hermitian_part())
}

fn jet() -> impl Strategy<Value = SymbolJet> {
    (hermitian(), prop::collection::vec(hermitian(), 2 * N)).prop_map(|(value, mut parts)| {
        let dp = parts.split_off(N);
        SymbolJet { dq: parts, dp, ..SymbolJet::constant(value, N) }
    })
}

fn close(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    (a - b).max_abs() <= tol
}

proptest! {
    #[test]
    fn bracket_self_trace_vanishes(a in jet()) {
        prop_assert!(poisson_bracket(&a, &a).unwrap().trace().norm() < 1e-12);
    }

    #[test]
    fn bracket_trace_is_antisymmetric(a in jet(), b in jet()) {
        let ab = poisson_bracket(&a, &b).unwrap().trace();
        let ba = poisson_bracket(&b, &a).unwrap().trace();
        prop_assert!((ab + ba).norm() < 1e-12);
    }

    #[test]
    fn bracket_is_bilinear(a in jet(), b in jet(), c in jet(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let (x, y) = (C64::new(x, 0.3), C64::new(-0.5, y));
        let lhs = poisson_bracket(&SymbolJet::linear_combination(x, &a, y, &b), &c).unwrap();
        let mut rhs = poisson_bracket(&a, &c).unwrap().scale(x);
        rhs.axpy(y, &poisson_bracket(&b, &c).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn sandwich_with_identity_is_bracket(a in jet(), c in jet()) {
        let s = sandwich_bracket(&a, &CMatrix::identity(D), &c).unwrap();
        prop_assert!(close(&s, &poisson_bracket(&a, &c).unwrap(), 1e-13));
    }

    #[test]
    fn eigh_reconstructs(m in hermitian()) {
        let e = eigh(&m);
        let v = &e.vectors;
        let rebuilt = v.matmul(&CMatrix::from_real_diag(&e.values)).matmul(&v.adjoint());
        prop_assert!(close(&rebuilt, &m, 1e-12));
        prop_assert!(close(&v.adjoint().matmul(v), &CMatrix::identity(D), 1e-12));
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn band_outputs_are_gauge_invariant(q in -2.5..2.5f64, p in -2.5..2.5f64, phase in 0.0..6.283f64) {
        let model = build_model(&ModelSpec::new("avoided_crossing")).unwrap();
        let z = PhasePoint::qp(q, p);
        let a = band_point(model.as_ref(), &z, &BandOptions::default()).unwrap();
        let b = band_point(model.as_ref(), &z, &BandOptions { gauge_phase: phase, ..Default::default() }).unwrap();
        prop_assert!(close(&a.pi0, &b.pi0, 1e-12));
        prop_assert!((a.m - b.m).abs() < 1e-12 && (a.e1 - b.e1).abs() < 1e-12);
        prop_assert!(close(&a.pi0.matmul(&a.pi0), &a.pi0, 1e-12));
    }

    #[test]
    fn rice_mele_projector_is_periodic(k in 0.0..6.283f64, t in 0.0..6.283f64) {
        let model = build_model(&ModelSpec::new("rice_mele")).unwrap();
        let opts = BandOptions::default();
        let a = band_point(model.as_ref(), &PhasePoint::with_time(&[0.0], &[k], t), &opts).unwrap();
        let b = band_point(model.as_ref(), &PhasePoint::with_time(&[0.0], &[k + 2.0 * std::f64::consts::PI], t), &opts).unwrap();
        prop_assert!(close(&a.pi0, &b.pi0, 1e-11));
        prop_assert!((a.omega.max_abs() - b.omega.max_abs()).abs() < 1e-9);
    }
}
