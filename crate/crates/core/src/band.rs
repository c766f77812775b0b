//! Per-point band data: the isolated eigenvalue e₀ and its projection π₀,
//! derivatives of π₀, the energy correction M, Berry curvature Ω, the
//! Liouville density and the subprincipal projector π₁.

use crate::error::{Error, Location, Result};
use crate::linalg::{eigh, CMatrix, I};
use crate::symbols::{
    evaluate_jet, fd_step, poisson_bracket, principal_checked, PhasePoint, SymbolJet,
    SymbolModel,
};
use num_complex::Complex64 as C64;

/// Tolerances and switches shared by all band computations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandOptions {
    /// Smallest admissible distance from e₀ to the rest of the spectrum.
    pub gap_min: f64,
    /// Phase applied to the eigenvector before forming π₀ (gauge-invariance checks).
    pub gauge_phase: f64,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            gap_min: 0.1,
            gauge_phase: 0.0,
        }
    }
}

/// Isolated eigenvalue with its projection and reduced resolvent.
#[derive(Clone, Debug)]
pub struct SpectralBand {
    pub e0: f64,
    pub gap: f64,
    pub pi0: CMatrix,
    /// `(H₀ − e₀)⁻¹π₀⊥`.
    pub resolvent: CMatrix,
}

/// Eigen-decomposition of `h0` restricted to band `band_index`.
pub fn spectral_band(h0: &CMatrix, band_index: usize, opts: &BandOptions) -> Result<SpectralBand> {
    spectral_band_at(h0, band_index, opts, &Location::default())
}

pub(crate) fn spectral_band_at(
    h0: &CMatrix,
    band_index: usize,
    opts: &BandOptions,
    at: &Location,
) -> Result<SpectralBand> {
    let d = h0.dim();
    if band_index >= d {
        return Err(Error::InvalidInput(format!("band index {band_index} out of range for d = {d}")));
    }
    let eig = eigh(h0);
    let e0 = eig.values[band_index];
    let mut gap = f64::INFINITY;
    if band_index > 0 {
        gap = gap.min(e0 - eig.values[band_index - 1]);
    }
    if band_index + 1 < d {
        gap = gap.min(eig.values[band_index + 1] - e0);
    }
    if gap < opts.gap_min {
        return Err(Error::GapViolation {
            gap,
            gap_min: opts.gap_min,
            at: at.clone(),
        });
    }
    let phase = C64::from_polar(1.0, opts.gauge_phase);
    let outer = |k: usize, scale: f64| {
        CMatrix::from_fn(d, |i, j| (eig.vectors[(i, k)] * phase) * (eig.vectors[(j, k)] * phase).conj() * scale)
    };
    let pi0 = outer(band_index, 1.0);
    let mut resolvent = CMatrix::zeros(d);
    for k in (0..d).filter(|&k| k != band_index) {
        resolvent += &outer(k, 1.0 / (eig.values[k] - e0));
    }
    Ok(SpectralBand {
        e0,
        gap,
        pi0,
        resolvent,
    })
}

/// `∂π₀ = −R ∂H₀ π₀ − π₀ ∂H₀ R` for each coordinate derivative of H₀.
pub fn resolvent_derivatives(band: &SpectralBand, dh0: &[&CMatrix]) -> Vec<CMatrix> {
    dh0.iter()
        .map(|dh| {
            let a = band.resolvent.matmul(dh).matmul(&band.pi0);
            let b = band.pi0.matmul(dh).matmul(&band.resolvent);
            -&(&a + &b)
        })
        .collect()
}

fn jet_partials(jet: &SymbolJet) -> Vec<&CMatrix> {
    (0..jet.coord_count()).map(|a| jet.partial(a)).collect()
}

/// Derivatives of π₀ by the reduced-resolvent formula.
pub fn projector_derivatives(model: &dyn SymbolModel, z: &PhasePoint, opts: &BandOptions) -> Result<Vec<CMatrix>> {
    let jet = evaluate_jet(model, z, 1)?;
    let band = spectral_band_at(&jet.value, model.band_index(), opts, &z.location())?;
    Ok(resolvent_derivatives(&band, &jet_partials(&jet)))
}

/// Derivatives of π₀ by central differences of the gauge-invariant map z ↦ π₀(z).
pub fn projector_derivatives_fd(model: &dyn SymbolModel, z: &PhasePoint, opts: &BandOptions) -> Result<Vec<CMatrix>> {
    let scales = model.coordinate_scales();
    (0..model.coord_count())
        .map(|a| {
            let h = fd_step(scales[a]);
            let pi = |s: f64| -> Result<CMatrix> {
                let zs = z.shifted(a, s * h);
                let h0 = principal_checked(model, &zs)?;
                Ok(spectral_band_at(&h0, model.band_index(), opts, &zs.location())?.pi0)
            };
            Ok((&pi(1.0)? - &pi(-1.0)?).scale_re(0.5 / h))
        })
        .collect()
}

/// Both derivative methods, cross-validated at 1e-6.
pub fn projector_derivatives_checked(
    model: &dyn SymbolModel,
    z: &PhasePoint,
    opts: &BandOptions,
) -> Result<Vec<CMatrix>> {
    let fast = projector_derivatives(model, z, opts)?;
    let slow = projector_derivatives_fd(model, z, opts)?;
    let discrepancy = fast
        .iter()
        .zip(&slow)
        .map(|(a, b)| (a - b).max_abs())
        .fold(0.0, f64::max);
    if discrepancy > 1e-6 {
        return Err(Error::MethodDisagreement { discrepancy });
    }
    Ok(fast)
}

/// Jet of π₀ built from its value and (q, p, t) derivatives.
pub fn projector_jet(pi0: &CMatrix, dpi0: &[CMatrix], n: usize) -> SymbolJet {
    SymbolJet {
        value: pi0.clone(),
        dq: dpi0[..n].to_vec(),
        dp: dpi0[n..2 * n].to_vec(),
        dt: dpi0.get(2 * n).cloned(),
        second: None,
        sub: None,
    }
}

/// Energy correction M with its two formulas.
#[derive(Clone, Copy, Debug)]
pub struct EnergyCorrection {
    /// `(i/2) tr({π₀|H₀|π₀})`, real part.
    pub value: f64,
    /// `−(i/2) tr(π₀{π₀, H₀ − e₀})`, real part.
    pub alternative: f64,
    /// Largest imaginary residue of either formula.
    pub imaginary_residue: f64,
}

/// Both M formulas, unchecked: `(i/2) tr({π₀|H₀|π₀})` and `−(i/2) tr(π₀{π₀, H₀ − e₀})`.
pub fn energy_correction_pair(jet: &SymbolJet, pi0: &CMatrix, dpi0: &[CMatrix]) -> Result<(C64, C64)> {
    let n = jet.n();
    if dpi0.len() < 2 * n || !jet.has_first() {
        return Err(Error::DimensionMismatch {
            context: "energy_correction_m",
            expected: 2 * n,
            found: dpi0.len(),
        });
    }
    let mut a = C64::new(0.0, 0.0);
    let mut b = C64::new(0.0, 0.0);
    for j in 0..n {
        let (dq_pi, dp_pi) = (&dpi0[j], &dpi0[n + j]);
        let (dq_h, dp_h) = (&jet.dq[j], &jet.dp[j]);
        // {π₀|H₀|π₀}
        a += dp_pi.matmul(&jet.value).trace_product(dq_pi) - dq_pi.matmul(&jet.value).trace_product(dp_pi);
        // π₀{π₀, H₀ − e₀} with ∂e₀ = tr(π₀∂H₀)
        let de_q = pi0.trace_product(dq_h).re;
        let de_p = pi0.trace_product(dp_h).re;
        let pp = pi0.matmul(dp_pi);
        let pq = pi0.matmul(dq_pi);
        b += pp.trace_product(dq_h) - pp.trace() * de_q - pq.trace_product(dp_h) + pq.trace() * de_p;
    }
    Ok((0.5 * I * a, -0.5 * I * b))
}

/// `M = (i/2) tr({π₀|H₀|π₀})`, checked against `−(i/2) tr(π₀{π₀, H₀ − e₀})`.
/// Constant shifts of H₀ drop out of both brackets, so e₀ is not needed.
pub fn energy_correction_m(jet: &SymbolJet, pi0: &CMatrix, dpi0: &[CMatrix]) -> Result<EnergyCorrection> {
    let (a, b) = energy_correction_pair(jet, pi0, dpi0)?;
    let scale = a.norm().max(1.0);
    let discrepancy = (a - b).norm();
    if discrepancy > 1e-9 * scale {
        return Err(Error::FormulaDisagreement {
            quantity: "energy correction M",
            discrepancy,
        });
    }
    let imaginary_residue = a.im.abs().max(b.im.abs());
    if imaginary_residue > 1e-10 * scale {
        return Err(Error::FormulaDisagreement {
            quantity: "imaginary part of M",
            discrepancy: imaginary_residue,
        });
    }
    Ok(EnergyCorrection {
        value: a.re,
        alternative: b.re,
        imaginary_residue,
    })
}

/// Berry curvature `Ω_{αβ} = −i tr(π₀[∂_απ₀, ∂_βπ₀])`, stored as a strict upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Curvature {
    /// Slow dimension n.
    pub n: usize,
    /// Number of coordinates (2n, or 2n + 1 with time).
    pub m: usize,
    upper: Vec<f64>,
}

impl Curvature {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            upper: vec![0.0; m * (m - 1) / 2],
        }
    }

    fn idx(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < b);
        a * (2 * self.m - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        use std::cmp::Ordering::*;
        match a.cmp(&b) {
            Less => self.upper[self.idx(a, b)],
            Greater => -self.upper[self.idx(b, a)],
            Equal => 0.0,
        }
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        assert!(a < b, "only the strict upper triangle is stored");
        let k = self.idx(a, b);
        self.upper[k] = v;
    }

    pub fn has_time(&self) -> bool {
        self.m > 2 * self.n
    }

    /// Ω(q_i, p_j).
    pub fn qp(&self, i: usize, j: usize) -> f64 {
        self.get(i, self.n + j)
    }
    /// Ω(p_i, q_j).
    pub fn pq(&self, i: usize, j: usize) -> f64 {
        self.get(self.n + i, j)
    }
    /// Ω(p_i, p_j).
    pub fn pp(&self, i: usize, j: usize) -> f64 {
        self.get(self.n + i, self.n + j)
    }
    /// Ω(q_i, q_j).
    pub fn qq(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
    /// Ω(p_i, t); zero for autonomous models.
    pub fn pt(&self, i: usize) -> f64 {
        if self.has_time() {
            self.get(self.n + i, 2 * self.n)
        } else {
            0.0
        }
    }
    /// Ω(q_i, t); zero for autonomous models.
    pub fn qt(&self, i: usize) -> f64 {
        if self.has_time() {
            self.get(i, 2 * self.n)
        } else {
            0.0
        }
    }

    /// Dense m×m row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        for a in 0..self.m {
            for b in 0..self.m {
                out[a * self.m + b] = self.get(a, b);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Curvature from π₀ and its derivatives; errors if any entry has imaginary residue above 1e-10.
pub fn berry_curvature(pi0: &CMatrix, dpi0: &[CMatrix], n: usize) -> Result<Curvature> {
    let m = dpi0.len();
    let mut omega = Curvature::zeros(n, m);
    for a in 0..m {
        for b in a + 1..m {
            let c = pi0.matmul(&dpi0[a].commutator(&dpi0[b])).trace();
            let val = -I * c;
            if val.im.abs() > 1e-10 * val.re.abs().max(1.0) {
                return Err(Error::FormulaDisagreement {
                    quantity: "imaginary part of Berry curvature",
                    discrepancy: val.im.abs(),
                });
            }
            omega.set(a, b, val.re);
        }
    }
    Ok(omega)
}

/// Both Liouville density formulas: `1 + (ε/2)Σ_j(Ω^{qp}_jj − Ω^{pq}_jj)` and
/// `1 + iε tr(π₀{π₀,π₀})` (complex, for the residue check).
pub fn liouville_density_pair(pi0: &CMatrix, dpi0: &[CMatrix], omega: &Curvature, epsilon: f64) -> Result<(f64, C64)> {
    let n = omega.n;
    let sum: f64 = (0..n).map(|j| omega.qp(j, j) - omega.pq(j, j)).sum();
    let rho = 1.0 + 0.5 * epsilon * sum;
    let pj = projector_jet(pi0, dpi0, n);
    let alt = C64::new(1.0, 0.0) + I * epsilon * pi0.matmul(&poisson_bracket(&pj, &pj)?).trace();
    Ok((rho, alt))
}

/// Liouville density, checked between its two formulas at 1e-9.
pub fn liouville_density(pi0: &CMatrix, dpi0: &[CMatrix], omega: &Curvature, epsilon: f64) -> Result<f64> {
    let (rho, alt) = liouville_density_pair(pi0, dpi0, omega, epsilon)?;
    let discrepancy = (alt - rho).norm();
    if discrepancy > 1e-9 {
        return Err(Error::FormulaDisagreement {
            quantity: "Liouville density",
            discrepancy,
        });
    }
    if rho <= 0.0 {
        return Err(Error::NonPositiveDensity { density: rho });
    }
    Ok(rho)
}

/// Band quantities at one point, without the gradient of h.
#[derive(Clone, Debug)]
pub struct BandPoint {
    pub e0: f64,
    pub gap: f64,
    pub pi0: CMatrix,
    pub dpi0: Vec<CMatrix>,
    pub m: f64,
    pub e1: f64,
    pub omega: Curvature,
    pub jet: SymbolJet,
    pub resolvent: CMatrix,
}

impl BandPoint {
    /// `h = e₀ + ε e₁ + ε M`.
    pub fn h(&self, epsilon: f64) -> f64 {
        self.e0 + epsilon * (self.e1 + self.m)
    }
}

pub fn band_point(model: &dyn SymbolModel, z: &PhasePoint, opts: &BandOptions) -> Result<BandPoint> {
    let jet = evaluate_jet(model, z, 1)?;
    let band = spectral_band_at(&jet.value, model.band_index(), opts, &z.location())?;
    let dpi0 = resolvent_derivatives(&band, &jet_partials(&jet));
    let m = energy_correction_m(&jet, &band.pi0, &dpi0)?.value;
    let e1 = jet.sub.as_ref().map_or(0.0, |h1| h1.trace_product(&band.pi0).re);
    let omega = berry_curvature(&band.pi0, &dpi0, model.slow_dim())?;
    Ok(BandPoint {
        e0: band.e0,
        gap: band.gap,
        pi0: band.pi0,
        dpi0,
        m,
        e1,
        omega,
        jet,
        resolvent: band.resolvent,
    })
}

/// Scalar effective Hamiltonian `h(z) = e₀ + ε tr(H₁π₀) + εM`.
pub fn effective_h(model: &dyn SymbolModel, z: &PhasePoint, epsilon: f64, opts: &BandOptions) -> Result<f64> {
    if epsilon == 0.0 {
        let h0 = principal_checked(model, z)?;
        return Ok(spectral_band_at(&h0, model.band_index(), opts, &z.location())?.e0);
    }
    Ok(band_point(model, z, opts)?.h(epsilon))
}

/// Central-difference gradient of h over the 2n phase-space coordinates.
pub fn grad_h(model: &dyn SymbolModel, z: &PhasePoint, epsilon: f64, opts: &BandOptions) -> Result<Vec<f64>> {
    let scales = model.coordinate_scales();
    (0..2 * model.slow_dim())
        .map(|a| {
            let h = fd_step(scales[a]);
            let plus = effective_h(model, &z.shifted(a, h), epsilon, opts)?;
            let minus = effective_h(model, &z.shifted(a, -h), epsilon, opts)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `(h, ∇h)` at z.
pub fn effective_hamiltonian(
    model: &dyn SymbolModel,
    z: &PhasePoint,
    epsilon: f64,
    opts: &BandOptions,
) -> Result<(f64, Vec<f64>)> {
    Ok((effective_h(model, z, epsilon, opts)?, grad_h(model, z, epsilon, opts)?))
}

/// Full per-point band package.
#[derive(Clone, Debug)]
pub struct BandData {
    pub epsilon: f64,
    pub e0: f64,
    pub gap: f64,
    pub pi0: CMatrix,
    pub dpi0: Vec<CMatrix>,
    pub m: f64,
    pub e1: f64,
    pub h: f64,
    pub grad_h: Vec<f64>,
    pub omega: Curvature,
    pub liouville_density: f64,
}

pub fn band_data(model: &dyn SymbolModel, z: &PhasePoint, epsilon: f64, opts: &BandOptions) -> Result<BandData> {
    let bp = band_point(model, z, opts)?;
    let rho = liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, epsilon)?;
    let grad_h = grad_h(model, z, epsilon, opts)?;
    Ok(BandData {
        epsilon,
        e0: bp.e0,
        gap: bp.gap,
        h: bp.h(epsilon),
        pi0: bp.pi0,
        dpi0: bp.dpi0,
        m: bp.m,
        e1: bp.e1,
        grad_h,
        omega: bp.omega,
        liouville_density: rho,
    })
}

/// Order-ε projector correction π₁, split into blocks.
#[derive(Clone, Debug)]
pub struct SubprincipalProjector {
    pub pi1: CMatrix,
    /// `π₀π₁π₀ + π₀⊥π₁π₀⊥`.
    pub diagonal: CMatrix,
    /// `π₀⊥π₁π₀ + π₀π₁π₀⊥`.
    pub off_diagonal: CMatrix,
    /// Order-ε residual of `π#π − π`.
    pub residual: f64,
}

/// π₁ at z from the band point and the subprincipal symbol H₁.
pub fn subprincipal_projector_from(bp: &BandPoint) -> Result<SubprincipalProjector> {
    let n = bp.jet.n();
    let d = bp.pi0.dim();
    let id = CMatrix::identity(d);
    let pi0 = &bp.pi0;
    let perp = &id - pi0;
    let pj = projector_jet(pi0, &bp.dpi0, n);
    let pp = poisson_bracket(&pj, &pj)?;
    let half_i = 0.5 * I;
    let mut diagonal = pi0.matmul(&pp).matmul(pi0).scale(half_i);
    diagonal.axpy(-half_i, &perp.matmul(&pp).matmul(&perp));
    // (H₀ − e₀)X = π₀⊥[−H₁ − (i/2)({π₀,H₀} − {H₀,π₀})]π₀ with X = π₀⊥π₁π₀.
    let h_jet = SymbolJet {
        value: bp.jet.value.clone(),
        dq: bp.jet.dq.clone(),
        dp: bp.jet.dp.clone(),
        dt: None,
        second: None,
        sub: None,
    };
    let mut rhs = &poisson_bracket(&pj, &h_jet)? - &poisson_bracket(&h_jet, &pj)?;
    rhs = rhs.scale(-half_i);
    if let Some(h1) = &bp.jet.sub {
        rhs -= h1;
    }
    let x = bp.resolvent.matmul(&rhs).matmul(pi0);
    let off_diagonal = &x + &x.adjoint();
    let pi1 = &diagonal + &off_diagonal;
    let mut r = &pi0.matmul(&pi1) + &pi1.matmul(pi0);
    r.axpy(-half_i, &pp);
    r -= &pi1;
    let residual = r.max_abs();
    if residual > 1e-8 {
        return Err(Error::ResidualTooLarge { residual });
    }
    Ok(SubprincipalProjector {
        pi1,
        diagonal,
        off_diagonal,
        residual,
    })
}

pub fn subprincipal_projector(model: &dyn SymbolModel, z: &PhasePoint, opts: &BandOptions) -> Result<SubprincipalProjector> {
    subprincipal_projector_from(&band_point(model, z, opts)?)
}

/// Order-ε coefficient of `π#H − H#π` with `π = π₀ + επ₁`, `H = H₀ + εH₁` (max-abs entry).
pub fn projector_commutator_residual(bp: &BandPoint, pi1: &CMatrix) -> Result<f64> {
    let n = bp.jet.n();
    let mut pj = projector_jet(&bp.pi0, &bp.dpi0, n);
    pj.dt = None;
    pj.sub = Some(pi1.clone());
    let mut hj = bp.jet.clone();
    hj.dt = None;
    let a = crate::symbols::moyal_subprincipal_pair(&pj, &hj)?;
    let b = crate::symbols::moyal_subprincipal_pair(&hj, &pj)?;
    Ok((&a - &b).max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{bloch_matrix, ONE, ZERO};
    use crate::models::{AvoidedCrossing, DecoupledDiag, FnModel};

    #[test]
    fn diagonal_band() {
        let b = spectral_band(&CMatrix::from_real_diag(&[0.0, 1.0]), 0, &BandOptions::default()).unwrap();
        assert_eq!(b.e0, 0.0);
        assert_eq!(b.gap, 1.0);
        assert_eq!(b.pi0, CMatrix::from_slice(2, &[ONE, ZERO, ZERO, ZERO]));
    }

    #[test]
    fn pauli_z_band() {
        let delta = 0.8;
        let b = spectral_band(&bloch_matrix([0.0, 0.0, delta], 0.0), 0, &BandOptions::default()).unwrap();
        assert!((b.e0 + delta).abs() < 1e-15);
        assert!((b.gap - 2.0 * delta).abs() < 1e-15);
        assert!((&b.pi0 - &CMatrix::from_real_diag(&[0.0, 1.0])).max_abs() < 1e-15);
    }

    #[test]
    fn avoided_crossing_gap_closed_form() {
        let m = AvoidedCrossing::default();
        let h0 = m.principal(&PhasePoint::qp(1.0, 1.0));
        let b = spectral_band(&h0, 0, &BandOptions::default()).unwrap();
        assert!((b.gap - 3f64.sqrt()).abs() < 1e-12);
        assert!((b.e0 - m.lower_energy(1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gap_violation_reports_location() {
        let m = FnModel::new("deg", 1, 2, |z| bloch_matrix([z.q[0], 0.0, 0.0], 0.0));
        match band_point(&m, &PhasePoint::qp(0.01, 0.0), &BandOptions::default()) {
            Err(Error::GapViolation { gap, at, .. }) => {
                assert!((gap - 0.02).abs() < 1e-12);
                assert_eq!(at.coords, vec![0.01, 0.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dual_derivative_methods_agree_at_origin() {
        let m = AvoidedCrossing::default();
        let z = PhasePoint::qp(0.0, 0.0);
        let a = projector_derivatives(&m, &z, &BandOptions::default()).unwrap();
        let b = projector_derivatives_fd(&m, &z, &BandOptions::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).max_abs() < 1e-7);
        }
        projector_derivatives_checked(&m, &z, &BandOptions::default()).unwrap();
    }

    #[test]
    fn constant_projector_gives_trivial_geometry() {
        let m = DecoupledDiag {
            quartic: 0.2,
            ..Default::default()
        };
        let z = PhasePoint::qp(0.7, -0.4);
        let bd = band_data(&m, &z, 0.3, &BandOptions::default()).unwrap();
        assert!(bd.dpi0.iter().all(|x| x.max_abs() == 0.0));
        assert_eq!(bd.m, 0.0);
        assert_eq!(bd.omega.max_abs(), 0.0);
        assert_eq!(bd.liouville_density, 1.0);
        assert!((bd.h - m.f(0.7, -0.4)).abs() < 1e-15);
        let sp = subprincipal_projector(&m, &z, &BandOptions::default()).unwrap();
        assert_eq!(sp.pi1.max_abs(), 0.0);
    }

    // Closed forms for the lower band of the avoided crossing (R = √(q²+p²+δ²)):
    // Ω_qp = −δ/(2R³) and M = −θδ/(2R²).
    #[test]
    fn avoided_crossing_closed_forms() {
        let m = AvoidedCrossing::default();
        for &(q, p) in &[(0.0, 0.0), (0.3, -1.1), (2.0, 0.5)] {
            let z = PhasePoint::qp(q, p);
            let bp = band_point(&m, &z, &BandOptions::default()).unwrap();
            let r = m.radius(q, p);
            assert!((bp.omega.qp(0, 0) + m.delta / (2.0 * r.powi(3))).abs() < 1e-12);
            assert!((bp.m + m.theta * m.delta / (2.0 * r * r)).abs() < 1e-12);
        }
        let bp = band_point(&m, &PhasePoint::qp(0.0, 0.0), &BandOptions::default()).unwrap();
        assert!((bp.omega.qp(0, 0) + 0.5).abs() < 1e-12);
        assert!((bp.m + 0.25).abs() < 1e-12);
    }

    #[test]
    fn density_formulas_agree() {
        let m = AvoidedCrossing::default();
        let bp = band_point(&m, &PhasePoint::qp(0.0, 0.0), &BandOptions::default()).unwrap();
        let rho = liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, 0.1).unwrap();
        assert!((rho - 0.95).abs() < 1e-12);
        assert_eq!(liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, 0.0).unwrap(), 1.0);
        assert!(matches!(
            liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, 3.0),
            Err(Error::NonPositiveDensity { .. })
        ));
    }

    #[test]
    fn grad_h_matches_closed_form_at_zero_epsilon() {
        let m = AvoidedCrossing::default();
        let (q, p) = (0.6, -0.3);
        let (h, g) = effective_hamiltonian(&m, &PhasePoint::qp(q, p), 0.0, &BandOptions::default()).unwrap();
        let r = m.radius(q, p);
        assert!((h - m.lower_energy(q, p)).abs() < 1e-12);
        assert!((g[0] - (q - m.theta * q / r)).abs() < 1e-7);
        assert!((g[1] - (p - m.theta * p / r)).abs() < 1e-7);
    }

    #[test]
    fn h_assembly_is_exact() {
        let m = AvoidedCrossing {
            h1_z: 0.4,
            ..Default::default()
        };
        let eps = 0.07;
        let bd = band_data(&m, &PhasePoint::qp(0.2, 0.9), eps, &BandOptions::default()).unwrap();
        assert!((bd.h - bd.e0 - eps * bd.e1 - eps * bd.m).abs() < 1e-12);
        assert!(bd.e1 != 0.0);
    }

    #[test]
    fn subprincipal_projector_solves_commutator_equation() {
        let m = AvoidedCrossing {
            h1_z: 0.3,
            ..Default::default()
        };
        for &(q, p) in &[(0.0, 0.0), (0.8, -0.5), (-1.5, 2.0)] {
            let bp = band_point(&m, &PhasePoint::qp(q, p), &BandOptions::default()).unwrap();
            let sp = subprincipal_projector_from(&bp).unwrap();
            assert!(projector_commutator_residual(&bp, &sp.pi1).unwrap() < 1e-8);
            assert!(sp.pi1.hermiticity_residual() < 1e-12);
        }
    }
}
