//! Operator-valued phase-space symbols, derivative jets and the bracket algebra
//! entering the subprincipal Moyal terms.
//!
//! Bracket convention: `{A, B} = Σ_j ∂_{p_j}A ∂_{q_j}B − ∂_{q_j}A ∂_{p_j}B`, so
//! that `{q, p} = −1`.

use crate::error::{Error, Location, Result};
use crate::linalg::{CMatrix, HermitianMatrix, I};
use num_complex::Complex64 as C64;
use smallvec::SmallVec;
use std::collections::BTreeMap;

/// Phase-space point `z = (q, p)` with an optional time coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: SmallVec<[f64; 3]>,
    pub p: SmallVec<[f64; 3]>,
    pub t: Option<f64>,
}

impl PhasePoint {
    pub fn new(q: &[f64], p: &[f64]) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        assert!(!q.is_empty(), "slow dimension must be at least 1");
        Self {
            q: SmallVec::from_slice(q),
            p: SmallVec::from_slice(p),
            t: None,
        }
    }

    pub fn with_time(q: &[f64], p: &[f64], t: f64) -> Self {
        let mut z = Self::new(q, p);
        z.t = Some(t);
        z
    }

    /// One-dimensional shorthand.
    pub fn qp(q: f64, p: f64) -> Self {
        Self::new(&[q], &[p])
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Coordinates ordered `(q_1..q_n, p_1..p_n)`.
    pub fn coords(&self) -> Vec<f64> {
        self.q.iter().chain(self.p.iter()).copied().collect()
    }

    pub fn from_coords(coords: &[f64], t: Option<f64>) -> Self {
        let n = coords.len() / 2;
        Self {
            q: SmallVec::from_slice(&coords[..n]),
            p: SmallVec::from_slice(&coords[n..2 * n]),
            t,
        }
    }

    /// Coordinate α in the order q, p, t.
    pub fn coord(&self, alpha: usize) -> f64 {
        let n = self.n();
        if alpha < n {
            self.q[alpha]
        } else if alpha < 2 * n {
            self.p[alpha - n]
        } else {
            self.t.expect("time coordinate requested on an autonomous point")
        }
    }

    pub fn shifted(&self, alpha: usize, h: f64) -> Self {
        let mut z = self.clone();
        let n = self.n();
        if alpha < n {
            z.q[alpha] += h;
        } else if alpha < 2 * n {
            z.p[alpha - n] += h;
        } else {
            z.t = Some(self.t.expect("time coordinate on autonomous point") + h);
        }
        z
    }

    pub fn location(&self) -> Location {
        Location {
            coords: self.coords(),
            time: self.t,
        }
    }
}

/// A family of Hermitian fast-space matrices `H₀(z) + εH₁(z)` on phase space.
pub trait SymbolModel: Send + Sync {
    fn name(&self) -> &str;
    /// Slow dimension n.
    fn slow_dim(&self) -> usize;
    /// Fast dimension d.
    fn fast_dim(&self) -> usize;
    fn is_time_dependent(&self) -> bool {
        false
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix;
    fn subprincipal(&self, _z: &PhasePoint) -> Option<CMatrix> {
        None
    }
    /// Analytic first partials of `H₀` in coordinate order (q, p, t).
    fn principal_gradient(&self, _z: &PhasePoint) -> Option<Vec<CMatrix>> {
        None
    }
    /// Per-coordinate length scales for finite-difference steps.
    fn coordinate_scales(&self) -> Vec<f64> {
        vec![1.0; self.coord_count()]
    }
    /// Period of each coordinate, if periodic.
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None; self.coord_count()]
    }
    /// Minimum gap claimed on the working region.
    fn gap_promise(&self) -> f64 {
        0.1
    }
    fn band_index(&self) -> usize {
        0
    }
    /// Parameters for run manifests.
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
    fn coord_count(&self) -> usize {
        2 * self.slow_dim() + usize::from(self.is_time_dependent())
    }
}

/// Value and partial derivatives of a matrix symbol at a point.
#[derive(Clone, Debug)]
pub struct SymbolJet {
    pub value: CMatrix,
    pub dq: Vec<CMatrix>,
    pub dp: Vec<CMatrix>,
    pub dt: Option<CMatrix>,
    /// Second partials over all coordinates, packed upper triangle (α ≤ β).
    pub second: Option<Vec<CMatrix>>,
    /// Subprincipal (order-ε) part; `None` means zero.
    pub sub: Option<CMatrix>,
}

impl SymbolJet {
    /// Jet of a constant symbol with vanishing partials.
    pub fn constant(value: CMatrix, n: usize) -> Self {
        let d = value.dim();
        Self {
            value,
            dq: vec![CMatrix::zeros(d); n],
            dp: vec![CMatrix::zeros(d); n],
            dt: None,
            second: None,
            sub: None,
        }
    }

    /// Scalar symbol `a(z)·1_d` from its value and gradient.
    pub fn scalar(value: f64, grad_q: &[f64], grad_p: &[f64], d: usize) -> Self {
        let id = CMatrix::identity(d);
        Self {
            value: id.scale_re(value),
            dq: grad_q.iter().map(|&g| id.scale_re(g)).collect(),
            dp: grad_p.iter().map(|&g| id.scale_re(g)).collect(),
            dt: None,
            second: None,
            sub: None,
        }
    }

    pub fn n(&self) -> usize {
        self.dq.len()
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    pub fn has_first(&self) -> bool {
        !self.dq.is_empty() && self.dq.len() == self.dp.len()
    }

    /// First partial along coordinate α (q, p, t order).
    pub fn partial(&self, alpha: usize) -> &CMatrix {
        let n = self.n();
        if alpha < n {
            &self.dq[alpha]
        } else if alpha < 2 * n {
            &self.dp[alpha - n]
        } else {
            self.dt.as_ref().expect("jet has no time derivative")
        }
    }

    /// Second partial ∂_α∂_β, if computed.
    pub fn second(&self, alpha: usize, beta: usize) -> Option<&CMatrix> {
        let m = self.coord_count();
        let (a, b) = if alpha <= beta { (alpha, beta) } else { (beta, alpha) };
        self.second.as_ref().map(|s| &s[packed_index(a, b, m)])
    }

    pub fn coord_count(&self) -> usize {
        2 * self.n() + usize::from(self.dt.is_some())
    }

    pub fn with_sub(mut self, sub: CMatrix) -> Self {
        self.sub = Some(sub);
        self
    }

    /// `αA + βB` componentwise (first partials and subprincipal parts).
    pub fn linear_combination(a: C64, x: &Self, b: C64, y: &Self) -> Self {
        let lin = |u: &CMatrix, v: &CMatrix| {
            let mut m = u.scale(a);
            m.axpy(b, v);
            m
        };
        let sub = match (&x.sub, &y.sub) {
            (None, None) => None,
            (u, v) => {
                let d = x.dim();
                let z = CMatrix::zeros(d);
                Some(lin(u.as_ref().unwrap_or(&z), v.as_ref().unwrap_or(&z)))
            }
        };
        Self {
            value: lin(&x.value, &y.value),
            dq: x.dq.iter().zip(&y.dq).map(|(u, v)| lin(u, v)).collect(),
            dp: x.dp.iter().zip(&y.dp).map(|(u, v)| lin(u, v)).collect(),
            dt: match (&x.dt, &y.dt) {
                (Some(u), Some(v)) => Some(lin(u, v)),
                _ => None,
            },
            second: None,
            sub,
        }
    }

    fn sub_or_zero(&self) -> CMatrix {
        self.sub.clone().unwrap_or_else(|| CMatrix::zeros(self.dim()))
    }
}

pub(crate) fn packed_index(a: usize, b: usize, m: usize) -> usize {
    debug_assert!(a <= b && b < m);
    a * m - a * (a + 1) / 2 + b
}

/// Central-difference step `ε_mach^{1/3}·scale`.
pub fn fd_step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * scale
}

fn checked(m: CMatrix, z: &PhasePoint) -> Result<CMatrix> {
    let residual = m.hermiticity_residual();
    if residual > HermitianMatrix::TOLERANCE {
        return Err(Error::NonHermitianEvaluation {
            residual,
            at: z.location(),
        });
    }
    Ok(m)
}

/// Evaluates `H₀` (checked Hermitian) at z.
pub fn principal_checked(model: &dyn SymbolModel, z: &PhasePoint) -> Result<CMatrix> {
    checked(model.principal(z), z)
}

fn first_partials(model: &dyn SymbolModel, z: &PhasePoint, force_fd: bool) -> Vec<CMatrix> {
    if !force_fd {
        if let Some(g) = model.principal_gradient(z) {
            return g;
        }
    }
    let scales = model.coordinate_scales();
    (0..model.coord_count())
        .map(|a| {
            let h = fd_step(scales[a]);
            let plus = model.principal(&z.shifted(a, h));
            let minus = model.principal(&z.shifted(a, -h));
            (&plus - &minus).scale_re(0.5 / h)
        })
        .collect()
}

fn second_partials(model: &dyn SymbolModel, z: &PhasePoint) -> Vec<CMatrix> {
    let m = model.coord_count();
    let scales = model.coordinate_scales();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    if model.principal_gradient(z).is_some() {
        // Differences of the analytic gradient, symmetrized.
        let h: Vec<f64> = scales.iter().map(|&s| fd_step(s)).collect();
        let grads: Vec<(Vec<CMatrix>, Vec<CMatrix>)> = (0..m)
            .map(|b| {
                (
                    model.principal_gradient(&z.shifted(b, h[b])).unwrap(),
                    model.principal_gradient(&z.shifted(b, -h[b])).unwrap(),
                )
            })
            .collect();
        for a in 0..m {
            for b in a..m {
                let dab = (&grads[b].0[a] - &grads[b].1[a]).scale_re(0.5 / h[b]);
                let dba = (&grads[a].0[b] - &grads[a].1[b]).scale_re(0.5 / h[a]);
                out.push((&dab + &dba).scale_re(0.5));
            }
        }
        return out;
    }
    let h: Vec<f64> = scales.iter().map(|&s| f64::EPSILON.powf(0.25) * s).collect();
    let h0 = model.principal(z);
    for a in 0..m {
        for b in a..m {
            let d = if a == b {
                let p = model.principal(&z.shifted(a, h[a]));
                let mm = model.principal(&z.shifted(a, -h[a]));
                let mut s = &p + &mm;
                s.axpy(C64::new(-2.0, 0.0), &h0);
                s.scale_re(1.0 / (h[a] * h[a]))
            } else {
                let at = |sa: f64, sb: f64| {
                    model.principal(&z.shifted(a, sa * h[a]).shifted(b, sb * h[b]))
                };
                let s = &(&at(1.0, 1.0) - &at(1.0, -1.0)) - &(&at(-1.0, 1.0) - &at(-1.0, -1.0));
                s.scale_re(0.25 / (h[a] * h[b]))
            };
            out.push(d);
        }
    }
    out
}

fn assemble(model: &dyn SymbolModel, value: CMatrix, partials: Vec<CMatrix>) -> SymbolJet {
    let n = model.slow_dim();
    let mut it = partials.into_iter();
    let dq: Vec<CMatrix> = it.by_ref().take(n).collect();
    let dp: Vec<CMatrix> = it.by_ref().take(n).collect();
    let dt = if model.is_time_dependent() { it.next() } else { None };
    SymbolJet {
        value,
        dq,
        dp,
        dt,
        second: None,
        sub: None,
    }
}

/// Value and partials of `H₀` (subprincipal part `H₁` attached) up to `order`.
pub fn evaluate_jet(model: &dyn SymbolModel, z: &PhasePoint, order: usize) -> Result<SymbolJet> {
    if order > 2 {
        return Err(Error::InvalidInput(format!("jet order {order} exceeds 2")));
    }
    check_point(model, z)?;
    let value = checked(model.principal(z), z)?;
    let sub = match model.subprincipal(z) {
        Some(h1) => Some(checked(h1, z)?),
        None => None,
    };
    let mut jet = if order == 0 {
        SymbolJet {
            value,
            dq: vec![],
            dp: vec![],
            dt: None,
            second: None,
            sub: None,
        }
    } else {
        let partials = first_partials(model, z, false);
        assemble(model, value, partials)
    };
    if order == 2 {
        jet.second = Some(second_partials(model, z));
    }
    jet.sub = sub;
    Ok(jet)
}

/// Finite-difference first jet, ignoring any analytic gradient.
pub fn evaluate_jet_fd(model: &dyn SymbolModel, z: &PhasePoint) -> Result<SymbolJet> {
    check_point(model, z)?;
    let value = checked(model.principal(z), z)?;
    let partials = first_partials(model, z, true);
    Ok(assemble(model, value, partials))
}

fn check_point(model: &dyn SymbolModel, z: &PhasePoint) -> Result<()> {
    if z.n() != model.slow_dim() {
        return Err(Error::DimensionMismatch {
            context: "phase point",
            expected: model.slow_dim(),
            found: z.n(),
        });
    }
    if z.t.is_some() != model.is_time_dependent() {
        return Err(Error::InvalidInput(format!(
            "time coordinate {} for model `{}`",
            if z.t.is_some() { "given" } else { "missing" },
            model.name()
        )));
    }
    Ok(())
}

fn check_pair(a: &SymbolJet, b: &SymbolJet, context: &'static str) -> Result<()> {
    if !a.has_first() || !b.has_first() {
        return Err(Error::InvalidInput(format!("{context}: first partials required")));
    }
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.n(),
            found: b.n(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `{A, B} = Σ_j ∂_{p_j}A ∂_{q_j}B − ∂_{q_j}A ∂_{p_j}B`.
pub fn poisson_bracket(a: &SymbolJet, b: &SymbolJet) -> Result<CMatrix> {
    check_pair(a, b, "poisson_bracket")?;
    let mut out = CMatrix::zeros(a.dim());
    for j in 0..a.n() {
        out += &a.dp[j].matmul(&b.dq[j]);
        out -= &a.dq[j].matmul(&b.dp[j]);
    }
    Ok(out)
}

/// `{A|B|C} = Σ_j ∂_{p_j}A·B·∂_{q_j}C − ∂_{q_j}A·B·∂_{p_j}C`.
pub fn sandwich_bracket(a: &SymbolJet, b: &CMatrix, c: &SymbolJet) -> Result<CMatrix> {
    check_pair(a, c, "sandwich_bracket")?;
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            context: "sandwich_bracket",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mut out = CMatrix::zeros(a.dim());
    for j in 0..a.n() {
        out += &a.dp[j].matmul(b).matmul(&c.dq[j]);
        out -= &a.dq[j].matmul(b).matmul(&c.dp[j]);
    }
    Ok(out)
}

/// Order-ε Moyal coefficient of `A#B`: `A₁B₀ + A₀B₁ − (i/2){A₀,B₀}`.
pub fn moyal_subprincipal_pair(a: &SymbolJet, b: &SymbolJet) -> Result<CMatrix> {
    let pb = poisson_bracket(a, b)?;
    let mut out = a.sub_or_zero().matmul(&b.value);
    out += &a.value.matmul(&b.sub_or_zero());
    out.axpy(-0.5 * I, &pb);
    Ok(out)
}

/// Order-ε Moyal coefficient of `A#B#C`:
/// `A₁B₀C₀ + A₀B₁C₀ + A₀B₀C₁ − (i/2)(A₀{B₀,C₀} + {A₀,B₀}C₀ + {A₀|B₀|C₀})`.
pub fn moyal_subprincipal_triple(a: &SymbolJet, b: &SymbolJet, c: &SymbolJet) -> Result<CMatrix> {
    check_pair(a, b, "moyal_subprincipal_triple")?;
    check_pair(b, c, "moyal_subprincipal_triple")?;
    let mut out = a.sub_or_zero().matmul(&b.value).matmul(&c.value);
    out += &a.value.matmul(&b.sub_or_zero()).matmul(&c.value);
    out += &a.value.matmul(&b.value).matmul(&c.sub_or_zero());
    let mut br = a.value.matmul(&poisson_bracket(b, c)?);
    br += &poisson_bracket(a, b)?.matmul(&c.value);
    br += &sandwich_bracket(a, &b.value, c)?;
    out.axpy(-0.5 * I, &br);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pauli, ONE, ZERO};
    use crate::models::FnModel;

    fn spin(delta: f64) -> FnModel {
        FnModel::new("spin", 1, 2, move |z: &PhasePoint| {
            crate::linalg::bloch_matrix([z.q[0], z.p[0], delta], 0.0)
        })
    }

    #[test]
    fn constant_symbol_has_zero_partials() {
        let m = FnModel::new("const", 1, 2, |_| CMatrix::from_real_diag(&[0.0, 1.0]));
        let jet = evaluate_jet(&m, &PhasePoint::qp(0.3, -2.0), 2).unwrap();
        assert_eq!(jet.dq[0], CMatrix::zeros(2));
        assert_eq!(jet.dp[0], CMatrix::zeros(2));
        for s in jet.second.unwrap() {
            assert_eq!(s.max_abs(), 0.0);
        }
    }

    #[test]
    fn polynomial_derivative() {
        let m = FnModel::new("p2", 1, 1, |z| CMatrix::from_real_diag(&[z.p[0] * z.p[0]]));
        let jet = evaluate_jet(&m, &PhasePoint::qp(0.0, 2.0), 1).unwrap();
        assert!((jet.dp[0][(0, 0)].re - 4.0).abs() < 1e-9);
        assert_eq!(jet.dq[0][(0, 0)], ZERO);
    }

    #[test]
    fn spin_partials_are_pauli_matrices() {
        let [sx, sy, _] = pauli();
        let m = spin(1.0);
        let jet = evaluate_jet_fd(&m, &PhasePoint::qp(1.0, 1.0)).unwrap();
        assert!((&jet.dq[0] - &sx).max_abs() < 1e-8);
        assert!((&jet.dp[0] - &sy).max_abs() < 1e-8);
    }

    #[test]
    fn non_hermitian_evaluator_is_rejected() {
        let m = FnModel::new("bad", 1, 2, |_| CMatrix::from_slice(2, &[ZERO, ONE, ZERO, ZERO]));
        assert!(matches!(
            evaluate_jet(&m, &PhasePoint::qp(0.0, 0.0), 0),
            Err(Error::NonHermitianEvaluation { .. })
        ));
    }

    #[test]
    fn canonical_pair_bracket() {
        let q = SymbolJet::scalar(0.7, &[1.0], &[0.0], 1);
        let p = SymbolJet::scalar(-0.2, &[0.0], &[1.0], 1);
        let pb = poisson_bracket(&q, &p).unwrap();
        assert_eq!(pb[(0, 0)], C64::new(-1.0, 0.0));
        let pair = moyal_subprincipal_pair(&q, &p).unwrap();
        assert_eq!(pair[(0, 0)], C64::new(0.0, 0.5));
    }

    #[test]
    fn constant_brackets_vanish() {
        let a = SymbolJet::constant(pauli()[0].clone(), 1);
        let b = SymbolJet::constant(pauli()[2].clone(), 1);
        assert_eq!(poisson_bracket(&a, &b).unwrap().max_abs(), 0.0);
        assert_eq!(moyal_subprincipal_pair(&a, &b).unwrap().max_abs(), 0.0);
        assert_eq!(moyal_subprincipal_triple(&a, &b, &a).unwrap().max_abs(), 0.0);
        let c = SymbolJet::scalar(1.0, &[2.0], &[3.0], 2);
        assert_eq!(sandwich_bracket(&a, &pauli()[1], &c).unwrap().max_abs(), 0.0);
        assert_eq!(sandwich_bracket(&c, &pauli()[1], &a).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = SymbolJet::scalar(1.0, &[1.0], &[0.0], 1);
        let b = SymbolJet::scalar(1.0, &[1.0, 0.0], &[0.0, 1.0], 1);
        assert!(matches!(poisson_bracket(&a, &b), Err(Error::DimensionMismatch { .. })));
        let c = SymbolJet::scalar(1.0, &[1.0], &[0.0], 2);
        assert!(matches!(poisson_bracket(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn packed_index_enumerates_upper_triangle() {
        let m = 5;
        let mut k = 0;
        for a in 0..m {
            for b in a..m {
                assert_eq!(packed_index(a, b, m), k);
                k += 1;
            }
        }
    }
}
