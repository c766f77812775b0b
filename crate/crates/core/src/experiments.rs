//! ε-sweeps comparing the corrected classical model with the grid reference.

use crate::band::{band_point, projector_jet, BandOptions};
use crate::error::{Error, Result};
use crate::exec;
use crate::flow::{liouville_invariance_defect, pullback_lattice, FlowConfig, LatticeOptions};
use crate::linalg::CMatrix;
use crate::observables::{EnergyFunction, Observable};
use crate::quantum::{
    band_wigner, matvec, operator_norm, propagate, superadiabatic_projector_from, trusted_energy, weyl_quantize,
    weyl_quantize_scalar, wigner, BandLattice, Grid, QuantumOperator, SpectralDecomposition, Superadiabatic,
    SymbolSamples, WaveFunction,
};
use crate::symbols::{moyal_subprincipal_pair, moyal_subprincipal_triple, poisson_bracket, PhasePoint, SymbolModel};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Errors measured over a decreasing sequence of ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub experiment: String,
    pub model: String,
    pub mode: String,
    pub t: f64,
    pub grid_points: usize,
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ErrorCurve {
    /// Sorts the points by decreasing ε and validates them.
    pub fn new(
        experiment: &str,
        model: &str,
        mode: &str,
        t: f64,
        grid_points: usize,
        points: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let mut points = points;
        points.sort_by(|a, b| b.0.total_cmp(&a.0));
        if points.len() < 3 {
            return Err(Error::InvalidInput(format!("an error curve needs at least 3 points, got {}", points.len())));
        }
        if points.windows(2).any(|w| w[0].0 <= w[1].0) || points.iter().any(|p| !(p.0 > 0.0)) {
            return Err(Error::InvalidInput("epsilons must be distinct and positive".into()));
        }
        if points.iter().any(|p| !p.1.is_finite() || p.1 < 0.0) {
            return Err(Error::InvalidInput("errors must be finite and non-negative".into()));
        }
        Ok(Self {
            experiment: experiment.into(),
            model: model.into(),
            mode: mode.into(),
            t,
            grid_points,
            epsilons: points.iter().map(|p| p.0).collect(),
            errors: points.iter().map(|p| p.1).collect(),
        })
    }

    /// Errors decrease with ε (the asymptotic-regime check).
    pub fn is_monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln ε, ln error)`.
pub fn fit_order(curve: &ErrorCurve) -> Result<OrderFit> {
    if curve.errors.len() < 3 {
        return Err(Error::InvalidInput("fit needs at least 3 points".into()));
    }
    if curve.errors.iter().all(|e| *e < 1e-14) || curve.errors.iter().any(|e| *e <= 0.0) {
        return Err(Error::DegenerateFit);
    }
    let xs: Vec<f64> = curve.epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = curve.errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(OrderFit { slope, intercept, r_squared })
}

/// Runs `f` at every ε (one after another: each point holds dense
/// operators) and collects the curve.
pub fn sweep<F>(epsilons: &[f64], mut f: F) -> Result<Vec<(f64, f64)>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut sorted = epsilons.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.into_iter().map(|e| Ok((e, f(e)?))).collect()
}

/// Smooth energy cut-off `χ(λ) = exp(−4·max(λ − E_c, 0)²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub cutoff: f64,
}

impl EnergyWindow {
    pub fn weight(&self, lambda: f64) -> f64 {
        let x = (lambda - self.cutoff).max(0.0);
        (-4.0 * x * x).exp()
    }
}

/// Everything the grid experiments share at one ε.
pub struct QuantumSetup {
    pub model: Arc<dyn SymbolModel>,
    pub grid: Grid,
    pub band: BandOptions,
    pub hamiltonian: QuantumOperator,
    pub spectrum: SpectralDecomposition,
    pub lattice: BandLattice,
    pub superadiabatic: Superadiabatic,
}

impl QuantumSetup {
    pub fn new(model: Arc<dyn SymbolModel>, grid: Grid, band: BandOptions) -> Result<Self> {
        let lattice = BandLattice::new(model.as_ref(), grid, &band)?;
        let hamiltonian = weyl_quantize(&SymbolSamples::hamiltonian(model.as_ref(), grid)?)?;
        let spectrum = SpectralDecomposition::new(&hamiltonian)?;
        let cutoff = trusted_energy(model.as_ref(), grid)?;
        let superadiabatic = superadiabatic_projector_from(&lattice.projector, &hamiltonian, cutoff)?;
        Ok(Self { model, grid, band, hamiltonian, spectrum, lattice, superadiabatic })
    }

    pub fn epsilon(&self) -> f64 {
        self.grid.epsilon
    }

    pub fn d(&self) -> usize {
        self.hamiltonian.d
    }

    pub fn projector(&self) -> &QuantumOperator {
        &self.superadiabatic.projector
    }

    pub fn quantize_observable(&self, a: &dyn Observable) -> Result<QuantumOperator> {
        weyl_quantize_scalar(self.grid, self.d(), |x, p| a.value(&PhasePoint::qp(x, p)))
    }

    /// `a∘φ^t` on the midpoint lattice (layout `[s][m]`).
    pub fn pullback(&self, a: &dyn Observable, t: f64, cfg: &FlowConfig, opts: &LatticeOptions) -> Result<Vec<f64>> {
        lattice_pullback(self.model.as_ref(), a, self.grid, t, cfg, opts)
    }

    /// Orthonormal eigenvectors with non-negligible window weight, and the weights.
    fn window_columns(&self, window: &EnergyWindow) -> (Mat<C64>, Vec<f64>, Vec<f64>) {
        let idx: Vec<usize> =
            (0..self.spectrum.dim()).filter(|&i| window.weight(self.spectrum.values[i]) > 1e-17).collect();
        let v = &self.spectrum.vectors;
        let cols = Mat::from_fn(v.nrows(), idx.len(), |r, c| v[(r, idx[c])]);
        let lambdas = idx.iter().map(|&i| self.spectrum.values[i]).collect();
        let weights = idx.iter().map(|&i| window.weight(self.spectrum.values[i])).collect();
        (cols, lambdas, weights)
    }
}

/// `a∘φ^t` on the midpoint lattice of `grid` (layout `[s][m]`).
pub fn lattice_pullback(
    model: &dyn SymbolModel,
    a: &dyn Observable,
    grid: Grid,
    t: f64,
    cfg: &FlowConfig,
    opts: &LatticeOptions,
) -> Result<Vec<f64>> {
    let n = grid.points;
    let xs = grid.midpoints();
    // Momenta in increasing order: sorted index r ↔ FFT index (r + N/2) mod N.
    let ps: Vec<f64> = (0..n).map(|r| grid.momentum((r + n / 2) % n)).collect();
    let sorted = pullback_lattice(model, a, &xs, &ps, 0.0, t, cfg, opts)?;
    let mut out = vec![0.0; 2 * n * n];
    for s in 0..2 * n {
        for r in 0..n {
            out[s * n + (r + n / 2) % n] = sorted[s * n + r];
        }
    }
    Ok(out)
}

/// Spectral norm of a rectangular matrix through its Gram matrix.
fn rect_norm(x: MatRef<'_, C64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    let gram = x.adjoint() * x;
    let gram = Mat::from_fn(gram.nrows(), gram.ncols(), |i, j| 0.5 * (gram[(i, j)] + gram[(j, i)].conj()));
    gram.self_adjoint_eigenvalues(Side::Lower)
        .map(|ev| ev.iter().fold(0.0f64, |m, l| m.max(*l)).max(0.0).sqrt())
        .unwrap_or(f64::NAN)
}

fn hermitian_norm(x: MatRef<'_, C64>) -> f64 {
    x.self_adjoint_eigenvalues(Side::Lower)
        .map(|ev| ev.iter().fold(0.0f64, |m, l| m.max(l.abs())))
        .unwrap_or(f64::NAN)
}

/// `‖π̂(e^{iĤt/ε} Op(a) e^{−iĤt/ε} − Op(a∘φ^t))π̂‖` given `Op(a)` and the
/// lattice samples of `a∘φ^t`.
pub fn egorov_error(setup: &QuantumSetup, a_op: &QuantumOperator, pulled: &[f64], t: f64) -> Result<f64> {
    let transported = weyl_quantize(&SymbolSamples::from_scalar_values(setup.grid, setup.d(), pulled))?;
    let diff = if t == 0.0 {
        a_op.sub(&transported)?
    } else {
        let u = crate::quantum::evolution_operator(&setup.spectrum, t);
        let heis = u.matrix.adjoint() * (&a_op.matrix * &u.matrix);
        QuantumOperator::from_matrix(setup.grid, setup.d(), heis)?.sub(&transported)?
    };
    let pi = &setup.projector().matrix;
    let x = pi * (&diff.matrix * pi);
    Ok(operator_norm(x.as_ref()))
}

/// Egorov error for one flow mode, computing `Op(a)` and the pullback.
pub fn egorov_error_for(
    setup: &QuantumSetup,
    a: &dyn Observable,
    t: f64,
    cfg: &FlowConfig,
    opts: &LatticeOptions,
) -> Result<f64> {
    let a_op = setup.quantize_observable(a)?;
    let pulled = setup.pullback(a, t, cfg, opts)?;
    egorov_error(setup, &a_op, &pulled, t)
}

/// Corrections entering the classical side of the equilibrium formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corrections {
    /// `h = e₀ + εe₁ + εM` and `dλ_ε = (1 + εΩ) dq dp`.
    On,
    /// `h = e₀` and Lebesgue measure.
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Intervals per axis at the coarsest level; doubled per refinement.
    pub initial_intervals: usize,
    pub tolerance: f64,
    pub max_levels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { initial_intervals: 64, tolerance: 1e-9, max_levels: 6 }
    }
}

/// `∫ f(h) a dλ_ε` over the support box of a (tensor trapezoid, refined by
/// doubling until two levels agree within the tolerance).
pub fn phase_space_integral(
    model: &dyn SymbolModel,
    f: &dyn EnergyFunction,
    a: &dyn Observable,
    epsilon: f64,
    corrections: Corrections,
    band: &BandOptions,
    opts: &QuadratureOptions,
) -> Result<f64> {
    if model.slow_dim() != 1 {
        return Err(Error::InvalidInput("phase-space quadrature supports n = 1".into()));
    }
    let (center, radius) = a
        .support()
        .ok_or_else(|| Error::InvalidInput(format!("observable '{}' has no bounded support", a.name())))?;
    let integrand = |q: f64, p: f64| -> Result<f64> {
        let z = PhasePoint::qp(q, p);
        let av = a.value(&z);
        if av == 0.0 {
            return Ok(0.0);
        }
        match corrections {
            Corrections::Off => {
                let e0 = crate::band::effective_h(model, &z, 0.0, band)?;
                Ok(f.value(e0) * av)
            }
            Corrections::On => {
                let bp = band_point(model, &z, band)?;
                let fh = f.value(bp.h(epsilon));
                if fh == 0.0 {
                    return Ok(0.0);
                }
                Ok(fh * av * (1.0 + epsilon * bp.omega.qp(0, 0)))
            }
        }
    };
    let mut previous: Option<f64> = None;
    let mut change = f64::INFINITY;
    for level in 0..=opts.max_levels {
        let intervals = opts.initial_intervals << level;
        let h = 2.0 * radius / intervals as f64;
        let rows = exec::try_map_range(intervals + 1, |i| {
            let q = center[0] - radius + i as f64 * h;
            let wq = if i == 0 || i == intervals { 0.5 } else { 1.0 };
            let mut s = 0.0;
            for k in 0..=intervals {
                let p = center[1] - radius + k as f64 * h;
                let wp = if k == 0 || k == intervals { 0.5 } else { 1.0 };
                s += wp * integrand(q, p)?;
            }
            Ok(wq * s)
        })?;
        let value = rows.iter().sum::<f64>() * h * h;
        if let Some(prev) = previous {
            change = (value - prev).abs();
            if change <= opts.tolerance {
                return Ok(value);
            }
        }
        previous = Some(value);
    }
    Err(Error::QuadratureNotConverged { change })
}

/// `Tr(π̂ f(Ĥ) Op(a))` from the spectral decomposition.
pub fn equilibrium_trace(setup: &QuantumSetup, f: &dyn EnergyFunction, a_op: &QuantumOperator) -> Result<f64> {
    let spec = &setup.spectrum;
    let pi = &setup.projector().matrix;
    let terms: Vec<(usize, f64)> =
        spec.values.iter().enumerate().map(|(i, l)| (i, f.value(*l))).filter(|(_, w)| *w != 0.0).collect();
    let parts = exec::map_slice(&terms, |&(i, w)| {
        let v = spec.eigenvector(i);
        let av = matvec(a_op.matrix.as_ref(), &v);
        let pv = matvec(pi.as_ref(), &v);
        w * av.iter().zip(&pv).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
    });
    Ok(parts.iter().sum())
}

/// `(2πε)·|Tr(π̂ f(Ĥ) â) − (2πε)⁻¹ ∫ f(h) a dλ_ε|`.
pub fn equilibrium_error(
    setup: &QuantumSetup,
    f: &dyn EnergyFunction,
    a: &dyn Observable,
    corrections: Corrections,
    opts: &QuadratureOptions,
) -> Result<f64> {
    let eps = setup.epsilon();
    let lhs = equilibrium_trace(setup, f, &setup.quantize_observable(a)?)?;
    let rhs = phase_space_integral(setup.model.as_ref(), f, a, eps, corrections, &setup.band, opts)?;
    Ok((2.0 * std::f64::consts::PI * eps * lhs - rhs).abs())
}

/// `|⟨ψ(t), âψ(t)⟩ − ∫ (w∘φ^{−t}) a dλ_ε|` for `ψ = π̂ψ₀/‖π̂ψ₀‖`; the right
/// side is evaluated as `Σ w·ρ·(a∘φ^t)` on the lattice.
pub fn wigner_transport_error(
    setup: &QuantumSetup,
    psi0: &WaveFunction,
    a_op: &QuantumOperator,
    pulled: &[f64],
    t: f64,
) -> Result<f64> {
    let psi = setup.projector().apply(psi0)?.normalized()?;
    let psi_t = propagate(&setup.spectrum, &psi, t)?;
    let lhs = a_op.expectation(&psi_t, &psi_t)?.re;
    let w = band_wigner(&wigner(&psi), &setup.lattice)?;
    let rho = setup.lattice.density();
    let rhs: f64 = w.iter().zip(&rho).zip(pulled).map(|((w, r), a)| w * r * a).sum::<f64>() * setup.grid.cell_weight();
    Ok((lhs - rhs).abs())
}

/// `‖[π̂, e^{−iĤt/ε}]‖`, or `‖[π̂, e^{−iĤt/ε}]χ(Ĥ)‖` with an energy window.
pub fn projector_invariance(setup: &QuantumSetup, t: f64, window: Option<&EnergyWindow>) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let eps = setup.epsilon();
    let pi = &setup.projector().matrix;
    match window {
        None => {
            let u = crate::quantum::evolution_operator(&setup.spectrum, t).matrix;
            let c = pi * &u - &u * pi;
            Ok(operator_norm(c.as_ref()))
        }
        Some(w) => {
            // [π̂, U] V_c χ = π̂V_c e^{−iΛt/ε}χ − V e^{−iΛt/ε} V†(π̂V_c χ)
            let (vc, lambdas, weights) = setup.window_columns(w);
            let p = pi * &vc;
            let phase = |l: f64| C64::from_polar(1.0, -l * t / eps);
            let first = Mat::from_fn(p.nrows(), p.ncols(), |r, c| p[(r, c)] * phase(lambdas[c]) * weights[c]);
            let y = Mat::from_fn(p.nrows(), p.ncols(), |r, c| p[(r, c)] * weights[c]);
            let v = &setup.spectrum.vectors;
            let coeff = v.adjoint() * &y;
            let coeff = Mat::from_fn(coeff.nrows(), coeff.ncols(), |r, c| coeff[(r, c)] * phase(setup.spectrum.values[r]));
            let second = v * &coeff;
            Ok(rect_norm((&first - &second).as_ref()))
        }
    }
}

/// `‖π̂(Op(h) − Ĥ)π̂‖` (windowed: `‖χ(Ĥ)π̂(Op(h) − Ĥ)π̂χ(Ĥ)‖`).
pub fn effective_hamiltonian_residual(
    setup: &QuantumSetup,
    include_m: bool,
    window: Option<&EnergyWindow>,
) -> Result<f64> {
    let h = setup.lattice.effective_h(include_m);
    let op_h = weyl_quantize(&SymbolSamples::from_scalar_values(setup.grid, setup.d(), &h))?;
    let diff = op_h.sub(&setup.hamiltonian)?.matrix;
    let pi = &setup.projector().matrix;
    match window {
        None => {
            let x = pi * (&diff * pi);
            Ok(operator_norm(x.as_ref()))
        }
        Some(w) => {
            let (vc, _, weights) = setup.window_columns(w);
            let p = pi * &vc;
            let y = Mat::from_fn(p.nrows(), p.ncols(), |r, c| p[(r, c)] * weights[c]);
            let x = y.adjoint() * (&diff * &y);
            let x = Mat::from_fn(x.nrows(), x.ncols(), |i, j| 0.5 * (x[(i, j)] + x[(j, i)].conj()));
            Ok(hermitian_norm(x.as_ref()))
        }
    }
}

/// Remainder measured by the Moyal experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoyalKind {
    /// `‖[Op(a), Op(b)] + iε Op({a,b})‖` for scalar a, b.
    Commutator,
    /// `‖Op(a)Op(b) − Op(ab + ε(ab)₁)‖` for scalar a, b.
    Product,
    /// `‖Op(π₀)Op(a)Op(π₀) − Op(π₀aπ₀ + ε(π₀aπ₀)₁)‖` with the model's π₀.
    Triple,
}

pub fn moyal_error(
    kind: MoyalKind,
    model: &dyn SymbolModel,
    a: &dyn Observable,
    b: &dyn Observable,
    grid: Grid,
    band: &BandOptions,
) -> Result<f64> {
    let eps = grid.epsilon;
    let jet_scalar = |o: &dyn Observable, x: f64, p: f64, d: usize| o.jet(&PhasePoint::qp(x, p), d);
    match kind {
        MoyalKind::Commutator | MoyalKind::Product => {
            let sa = SymbolSamples::scalar(grid, 1, |x, p| a.value(&PhasePoint::qp(x, p)));
            let sb = SymbolSamples::scalar(grid, 1, |x, p| b.value(&PhasePoint::qp(x, p)));
            let oa = weyl_quantize(&sa)?;
            let ob = weyl_quantize(&sb)?;
            let reference = SymbolSamples::from_fn(grid, 1, |x, p| {
                let ja = jet_scalar(a, x, p, 1);
                let jb = jet_scalar(b, x, p, 1);
                Ok(match kind {
                    MoyalKind::Commutator => poisson_bracket(&ja, &jb)?.scale(C64::new(0.0, -eps)),
                    _ => {
                        let mut v = ja.value.matmul(&jb.value);
                        v.axpy(C64::new(eps, 0.0), &moyal_subprincipal_pair(&ja, &jb)?);
                        v
                    }
                })
            })?;
            let lhs = match kind {
                MoyalKind::Commutator => oa.commutator(&ob)?,
                _ => oa.mul(&ob)?,
            };
            let diff = lhs.sub(&weyl_quantize(&reference)?)?;
            Ok(operator_norm(diff.matrix.as_ref()))
        }
        MoyalKind::Triple => {
            if model.slow_dim() != 1 {
                return Err(Error::InvalidInput("the grid reference supports one slow dimension".into()));
            }
            let d = model.fast_dim();
            let parts = SymbolSamples::from_fn(grid, d, |x, p| {
                let bp = band_point(model, &PhasePoint::qp(x, p), band)?;
                Ok(bp.pi0)
            })?;
            let reference = SymbolSamples::from_fn(grid, d, |x, p| {
                let z = PhasePoint::qp(x, p);
                let bp = band_point(model, &z, band)?;
                let jp = projector_jet(&bp.pi0, &bp.dpi0, 1);
                let ja = a.jet(&z, d);
                let mut v: CMatrix = bp.pi0.matmul(&ja.value).matmul(&bp.pi0);
                v.axpy(C64::new(eps, 0.0), &moyal_subprincipal_triple(&jp, &ja, &jp)?);
                Ok(v)
            })?;
            let op_pi = weyl_quantize(&parts)?;
            let op_a = weyl_quantize_scalar(grid, d, |x, p| a.value(&PhasePoint::qp(x, p)))?;
            let lhs = op_pi.mul(&op_a)?.mul(&op_pi)?;
            let diff = lhs.sub(&weyl_quantize(&reference)?)?;
            Ok(operator_norm(diff.matrix.as_ref()))
        }
    }
}

/// Liouville defect `|ρ_ε(φ^t z₀) det Dφ^t − ρ_ε(z₀)|` at each ε.
pub fn liouville_sweep(
    model: &dyn SymbolModel,
    z0: &PhasePoint,
    t: f64,
    epsilons: &[f64],
    base: &FlowConfig,
) -> Result<Vec<(f64, f64)>> {
    exec::try_map_slice(epsilons, |&eps| {
        let mut cfg = *base;
        cfg.epsilon = eps;
        cfg.jacobian = true;
        Ok((eps, liouville_invariance_defect(model, z0, t, &cfg)?))
    })
}
