//! κ-periodic band structures: pump currents, Chern numbers, the Piezo
//! cancellation identity and the weak-field equations of motion.
//!
//! A Bloch model is any [`SymbolModel`] that does not depend on q and is
//! 2π-periodic in every momentum, read as crystal momentum κ = p.
//!
//! Orientation: plaquettes of the (κ, t) torus (or of the (κ₁, κ₂) torus)
//! are traversed counterclockwise with the first listed axis horizontal.
//! With this choice the plaquette flux approximates `Ω(κ, t)` (resp.
//! `Ω(κ₁, κ₂)`) times the cell area, so `chern_number` and
//! `pumped_charge` carry the same sign.

use crate::band::{band_point, spectral_band_at, BandOptions, BandPoint};
use crate::error::{Error, Result};
use crate::exec;
use crate::flow::Trajectory;
use crate::linalg::eigh;
use crate::ode::{self, Integrator};
use crate::symbols::{evaluate_jet, principal_checked, PhasePoint, SymbolModel};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Uniform nodes on `[0, 2π)^m × [0, T)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusGrid {
    /// Nodes per κ axis.
    pub kappa_points: usize,
    /// Nodes over one pump period.
    pub time_points: usize,
}

impl TorusGrid {
    pub fn new(kappa_points: usize, time_points: usize) -> Result<Self> {
        let g = Self { kappa_points, time_points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa_points < 16 || self.time_points < 16 {
            return Err(Error::InvalidInput(format!(
                "torus grids need at least 16 nodes per axis, got {} × {}",
                self.kappa_points, self.time_points
            )));
        }
        Ok(())
    }

    pub fn kappa(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.kappa_points as f64
    }
}

fn check_bloch(model: &dyn SymbolModel) -> Result<usize> {
    let m = model.slow_dim();
    if !(1..=3).contains(&m) {
        return Err(Error::InvalidInput(format!("Bloch models need 1 ≤ m ≤ 3, got {m}")));
    }
    let periods = model.periods();
    if (0..m).any(|i| periods.get(m + i).copied().flatten().map_or(true, |p| (p - 2.0 * PI).abs() > 1e-12)) {
        return Err(Error::InvalidInput(format!("model '{}' is not 2π-periodic in every momentum", model.name())));
    }
    Ok(m)
}

/// Pump period of a time-dependent Bloch model (from its declared periods).
pub fn pump_period(model: &dyn SymbolModel) -> Option<f64> {
    if !model.is_time_dependent() {
        return None;
    }
    model.periods().last().copied().flatten()
}

fn point(kappa: &[f64], t: f64, time_dependent: bool) -> PhasePoint {
    let q = vec![0.0; kappa.len()];
    if time_dependent {
        PhasePoint::with_time(&q, kappa, t)
    } else {
        PhasePoint::new(&q, kappa)
    }
}

/// Magnetic field as a skew m×m matrix, row-major; for m = 3 the vector
/// form is `B_jk = ε_jkl B⃗_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakField {
    pub m: usize,
    pub matrix: Vec<f64>,
}

impl WeakField {
    pub fn zero(m: usize) -> Self {
        Self { m, matrix: vec![0.0; m * m] }
    }

    pub fn from_vector(b: [f64; 3]) -> Self {
        Self { m: 3, matrix: axial_to_skew(b).to_vec() }
    }

    /// Two-dimensional field `B_12 = −B_21 = b`.
    pub fn planar(b: f64) -> Self {
        Self { m: 2, matrix: vec![0.0, b, -b, 0.0] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.m + j]
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }
}

fn axial_to_skew(v: [f64; 3]) -> [f64; 9] {
    [0.0, v[2], -v[1], -v[2], 0.0, v[0], v[1], -v[0], 0.0]
}

/// `(Ω⃗)_i = ½ ε_ijk Ω_jk` of a skew 3×3 matrix.
pub fn skew_to_axial(w: &[f64]) -> [f64; 3] {
    [0.5 * (w[5] - w[7]), 0.5 * (w[6] - w[2]), 0.5 * (w[1] - w[3])]
}

/// Curvature blocks of a Bloch band at (t, κ).
#[derive(Clone, Debug, PartialEq)]
pub struct MixedCurvature {
    /// `Ω^{pt}_i = −i tr(π₀[∂_{κ_i}π₀, ∂_tπ₀])`.
    pub pt: Vec<f64>,
    /// `Ω^{pp}`, skew, row-major.
    pub pp: Vec<f64>,
}

impl MixedCurvature {
    pub fn m(&self) -> usize {
        self.pt.len()
    }

    /// `Ω^{pq} = ½ Ω^{pp} B`.
    pub fn pq(&self, b: &WeakField) -> Vec<f64> {
        let m = self.m();
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = 0.5 * (0..m).map(|k| self.pp[i * m + k] * b.get(k, j)).sum::<f64>();
            }
        }
        out
    }

    /// `Ω^{qq} = −¼ B Ω^{pp} B`.
    pub fn qq(&self, b: &WeakField) -> Vec<f64> {
        let m = self.m();
        let pq = self.pq(b);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = -0.5 * (0..m).map(|k| b.get(i, k) * pq[k * m + j]).sum::<f64>();
            }
        }
        out
    }

    /// `Ω^{qp} = −(Ω^{pq})ᵀ`.
    pub fn qp(&self, b: &WeakField) -> Vec<f64> {
        let m = self.m();
        let pq = self.pq(b);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = -pq[j * m + i];
            }
        }
        out
    }

    /// Axial vector of `Ω^{pp}` (m = 3).
    pub fn axial(&self) -> Option<[f64; 3]> {
        (self.m() == 3).then(|| skew_to_axial(&self.pp))
    }
}

pub fn mixed_curvature_from(bp: &BandPoint) -> MixedCurvature {
    let m = bp.omega.n;
    let pt = (0..m).map(|i| if bp.omega.has_time() { bp.omega.pt(i) } else { 0.0 }).collect();
    let mut pp = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            pp[i * m + j] = bp.omega.pp(i, j);
        }
    }
    MixedCurvature { pt, pp }
}

pub fn mixed_curvature(model: &dyn SymbolModel, t: f64, kappa: &[f64], opts: &BandOptions) -> Result<MixedCurvature> {
    check_bloch(model)?;
    let bp = band_point(model, &point(kappa, t, model.is_time_dependent()), opts)?;
    Ok(mixed_curvature_from(&bp))
}

/// Weight of the weak-field Liouville measure, `1 − (ε/2) tr(Ω^{pp}B)`
/// (equal to `1 + εΩ⃗·B⃗` for m = 3).
pub fn bloch_density(curv: &MixedCurvature, b: &WeakField, epsilon: f64) -> f64 {
    let m = curv.m();
    let mut tr = 0.0;
    for i in 0..m {
        for k in 0..m {
            tr += curv.pp[i * m + k] * b.get(k, i);
        }
    }
    1.0 - 0.5 * epsilon * tr
}

/// Flat index → κ multi-index (axis 0 slowest).
fn kappa_at(grid: &TorusGrid, m: usize, mut idx: usize) -> Vec<f64> {
    let n = grid.kappa_points;
    let mut k = vec![0.0; m];
    for a in (0..m).rev() {
        k[a] = grid.kappa(idx % n);
        idx /= n;
    }
    k
}

/// `j(t) = ∫ Ω^{pt}(t, κ) dκ/(2π)^m` (periodic trapezoid).
pub fn pump_current(model: &dyn SymbolModel, t: f64, grid: &TorusGrid, opts: &BandOptions) -> Result<Vec<f64>> {
    let m = check_bloch(model)?;
    grid.validate()?;
    if !model.is_time_dependent() {
        return Ok(vec![0.0; m]);
    }
    let total = grid.kappa_points.pow(m as u32);
    let values = exec::try_map_range(total, |idx| Ok(mixed_curvature(model, t, &kappa_at(grid, m, idx), opts)?.pt))?;
    let mut j = vec![0.0; m];
    for v in &values {
        for (ji, vi) in j.iter_mut().zip(v) {
            *ji += vi;
        }
    }
    Ok(j.into_iter().map(|x| x / total as f64).collect())
}

/// Current and cumulative charge over one period.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpResult {
    pub times: Vec<f64>,
    pub currents: Vec<Vec<f64>>,
    /// Charge pumped up to (but excluding) each node.
    pub cumulative: Vec<Vec<f64>>,
    pub charge: Vec<f64>,
}

impl PumpResult {
    pub fn to_csv(&self) -> String {
        let m = self.charge.len();
        let mut s = String::from("t");
        for i in 1..=m {
            s.push_str(&format!(",j_{i}"));
        }
        for i in 1..=m {
            s.push_str(&format!(",cumulative_charge_{i}"));
        }
        s.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t:.17e}"));
            for v in self.currents[k].iter().chain(&self.cumulative[k]) {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// `Q = ∫₀^T j(t) dt` (periodic trapezoid in t).
pub fn pump(model: &dyn SymbolModel, grid: &TorusGrid, opts: &BandOptions) -> Result<PumpResult> {
    let m = check_bloch(model)?;
    grid.validate()?;
    let Some(period) = pump_period(model) else {
        return Ok(PumpResult {
            times: vec![0.0],
            currents: vec![vec![0.0; m]],
            cumulative: vec![vec![0.0; m]],
            charge: vec![0.0; m],
        });
    };
    let dt = period / grid.time_points as f64;
    let times: Vec<f64> = (0..grid.time_points).map(|k| k as f64 * dt).collect();
    let currents = times.iter().map(|t| pump_current(model, *t, grid, opts)).collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; m];
    let mut cumulative = Vec::with_capacity(times.len());
    for j in &currents {
        cumulative.push(acc.clone());
        for (a, v) in acc.iter_mut().zip(j) {
            *a += v * dt;
        }
    }
    Ok(PumpResult { times, currents, cumulative, charge: acc })
}

pub fn pumped_charge(model: &dyn SymbolModel, grid: &TorusGrid, opts: &BandOptions) -> Result<Vec<f64>> {
    Ok(pump(model, grid, opts)?.charge)
}

/// Integer Chern number with diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChernResult {
    pub grid: [usize; 2],
    pub integer: i64,
    pub max_plaquette_flux: f64,
    /// Unrounded `Σ flux / 2π`.
    pub raw: f64,
}

fn band_vector(model: &dyn SymbolModel, z: &PhasePoint, opts: &BandOptions) -> Result<Vec<C64>> {
    let h0 = principal_checked(model, z)?;
    let idx = model.band_index();
    spectral_band_at(&h0, idx, opts, &z.location())?;
    let e = eigh(&h0);
    Ok(e.vector(idx))
}

/// Plaquette (link-overlap) Chern number of the band on a 2-torus.
///
/// Axes: `(κ, t)` for m = 1 pumps (`grid.kappa_points × grid.time_points`),
/// `(κ₁, κ₂)` for time-independent m = 2 models at fixed `t`.
pub fn chern_number(model: &dyn SymbolModel, grid: &TorusGrid, t_fixed: f64, opts: &BandOptions) -> Result<ChernResult> {
    let m = check_bloch(model)?;
    grid.validate()?;
    let (n1, n2, coord): (usize, usize, Box<dyn Fn(usize, usize) -> PhasePoint + Sync + Send>) =
        match (m, pump_period(model)) {
            (1, Some(period)) => {
                let nk = grid.kappa_points;
                let nt = grid.time_points;
                let g = grid.clone();
                (nk, nt, Box::new(move |i, j| PhasePoint::with_time(&[0.0], &[g.kappa(i)], period * j as f64 / nt as f64)))
            }
            (2, _) => {
                let n = grid.kappa_points;
                let g = grid.clone();
                let td = model.is_time_dependent();
                (n, n, Box::new(move |i, j| point(&[g.kappa(i), g.kappa(j)], t_fixed, td)))
            }
            _ => {
                return Err(Error::InvalidInput(
                    "chern_number needs a time-periodic m = 1 pump or an m = 2 κ-torus".into(),
                ))
            }
        };
    let vectors = exec::try_map_range(n1 * n2, |k| band_vector(model, &coord(k / n2, k % n2), opts))?;
    let at = |i: usize, j: usize| &vectors[(i % n1) * n2 + (j % n2)];
    let link = |a: &[C64], b: &[C64]| -> C64 {
        let s: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        s / s.norm()
    };
    let fluxes = exec::map_range(n1 * n2, |k| {
        let (i, j) = (k / n2, k % n2);
        let u1 = link(at(i, j), at(i + 1, j));
        let u2 = link(at(i + 1, j), at(i + 1, j + 1));
        let u3 = link(at(i, j + 1), at(i + 1, j + 1));
        let u4 = link(at(i, j), at(i, j + 1));
        (u1 * u2 * u3.conj() * u4.conj()).arg()
    });
    let max_flux = fluxes.iter().fold(0.0f64, |a, f| a.max(f.abs()));
    if max_flux >= PI - 1e-9 {
        return Err(Error::VortexOnPlaquette { flux: max_flux });
    }
    // The plaquette angle is −(standard Berry flux) = Ω(axis 1, axis 2)·area.
    let raw = fluxes.iter().sum::<f64>() / (2.0 * PI);
    Ok(ChernResult { grid: [n1, n2], integer: raw.round() as i64, max_plaquette_flux: max_flux, raw })
}

/// Partial-integration diagnostics of the leading weak-field current.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiezoResult {
    /// `B⃗ ∫ Ω⃗·∇e₀ dκ/(2π)³`.
    pub term1: Vec<f64>,
    /// `B⃗ ∫ e₀ ∇·Ω⃗ dκ/(2π)³` (minus term1 after partial integration).
    pub term2: Vec<f64>,
    /// `max |∇·Ω⃗|` over the nodes.
    pub max_divergence: f64,
}

/// Step of the central differences used for `∇·Ω⃗`.
const DIVERGENCE_STEP: f64 = 1e-4;

fn axial_curvature(model: &dyn SymbolModel, kappa: &[f64], t: f64, opts: &BandOptions) -> Result<[f64; 3]> {
    let bp = band_point(model, &point(kappa, t, model.is_time_dependent()), opts)?;
    Ok(skew_to_axial(&mixed_curvature_from(&bp).pp))
}

pub fn piezo_cancellation(
    model: &dyn SymbolModel,
    b: [f64; 3],
    t: f64,
    grid: &TorusGrid,
    opts: &BandOptions,
) -> Result<PiezoResult> {
    let m = check_bloch(model)?;
    if m != 3 {
        return Err(Error::InvalidInput("piezo_cancellation needs m = 3".into()));
    }
    grid.validate()?;
    let total = grid.kappa_points.pow(3);
    let td = model.is_time_dependent();
    let nodes = exec::try_map_range(total, |idx| {
        let k = kappa_at(grid, 3, idx);
        let z = point(&k, t, td);
        let bp = band_point(model, &z, opts)?;
        let omega = skew_to_axial(&mixed_curvature_from(&bp).pp);
        // ∂_κ e₀ = tr(π₀ ∂_κ H₀).
        let grad: Vec<f64> = (0..3).map(|i| bp.jet.partial(3 + i).trace_product(&bp.pi0).re).collect();
        let mut div = 0.0;
        for i in 0..3 {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp[i] += DIVERGENCE_STEP;
            km[i] -= DIVERGENCE_STEP;
            let op = axial_curvature(model, &kp, t, opts)?;
            let om = axial_curvature(model, &km, t, opts)?;
            div += (op[i] - om[i]) / (2.0 * DIVERGENCE_STEP);
        }
        let dot: f64 = (0..3).map(|i| omega[i] * grad[i]).sum();
        Ok((dot, bp.e0 * div, div))
    })?;
    let (mut s1, mut s2, mut max_div) = (0.0, 0.0, 0.0f64);
    for (dot, ediv, div) in &nodes {
        s1 += dot;
        s2 += ediv;
        max_div = max_div.max(div.abs());
    }
    let (s1, s2) = (s1 / total as f64, s2 / total as f64);
    Ok(PiezoResult {
        term1: b.iter().map(|bi| bi * s1).collect(),
        term2: b.iter().map(|bi| bi * s2).collect(),
        max_divergence: max_div,
    })
}

/// `(q̇, κ̇)` of the weak-field band dynamics at (t, κ).
pub fn bloch_velocity(
    model: &dyn SymbolModel,
    t: f64,
    kappa: &[f64],
    epsilon: f64,
    b: &WeakField,
    opts: &BandOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = check_bloch(model)?;
    if b.m != m {
        return Err(Error::DimensionMismatch { context: "weak field", expected: m, found: b.m });
    }
    let z = point(kappa, t, model.is_time_dependent());
    let grad = crate::band::grad_h(model, &z, epsilon, opts)?;
    let dk = &grad[m..];
    let mut qd = dk.to_vec();
    if epsilon != 0.0 {
        let curv = mixed_curvature(model, t, kappa, opts)?;
        for i in 0..m {
            let mut acc = curv.pt[i];
            for j in 0..m {
                let ob: f64 = (0..m).map(|k| curv.pp[i * m + k] * b.get(k, j)).sum();
                acc += ob * dk[j];
            }
            qd[i] += epsilon * acc;
        }
    }
    let kd = (0..m).map(|i| (0..m).map(|j| b.get(i, j) * qd[j]).sum()).collect();
    Ok((qd, kd))
}

/// Integrates `q̇ = (1 + εΩ^{pp}B)∂_κh + εΩ^{pt}`, `κ̇ = Bq̇`.
pub fn bloch_flow(
    model: &dyn SymbolModel,
    q0: &[f64],
    kappa0: &[f64],
    t0: f64,
    t1: f64,
    epsilon: f64,
    b: &WeakField,
    integrator: &Integrator,
    opts: &BandOptions,
) -> Result<Trajectory> {
    let m = check_bloch(model)?;
    if q0.len() != m || kappa0.len() != m {
        return Err(Error::DimensionMismatch { context: "initial point", expected: m, found: q0.len().min(kappa0.len()) });
    }
    integrator.validate()?;
    let mut states: Vec<(f64, Vec<f64>)> = Vec::new();
    let y0: Vec<f64> = q0.iter().chain(kappa0).copied().collect();
    ode::solve(
        integrator,
        epsilon.max(1e-2),
        |t, y, dy| {
            let (qd, kd) = bloch_velocity(model, t, &y[m..], epsilon, b, opts)?;
            dy[..m].copy_from_slice(&qd);
            dy[m..].copy_from_slice(&kd);
            Ok(())
        },
        t0,
        &y0,
        t1,
        |t, y| states.push((t, y.to_vec())),
    )?;
    let td = model.is_time_dependent();
    let mut traj = Trajectory {
        times: Vec::with_capacity(states.len()),
        points: Vec::with_capacity(states.len()),
        jacobians: None,
        h_values: Vec::with_capacity(states.len()),
        densities: Vec::with_capacity(states.len()),
    };
    for (t, y) in states {
        let z = if td { PhasePoint::with_time(&y[..m], &y[m..], t) } else { PhasePoint::new(&y[..m], &y[m..]) };
        let bp = band_point(model, &z, opts).map_err(|e| e.at_time(t))?;
        traj.h_values.push(bp.h(epsilon));
        traj.densities.push(bloch_density(&mixed_curvature_from(&bp), b, epsilon));
        traj.times.push(t);
        traj.points.push(z);
    }
    Ok(traj)
}

/// Smallest gap over the (t, κ) nodes of the grid.
pub fn minimum_gap(model: &dyn SymbolModel, grid: &TorusGrid, opts: &BandOptions) -> Result<f64> {
    let m = check_bloch(model)?;
    grid.validate()?;
    let period = pump_period(model);
    let nt = if period.is_some() { grid.time_points } else { 1 };
    let total = grid.kappa_points.pow(m as u32);
    let gaps = exec::try_map_range(total * nt, |idx| {
        let t = period.map_or(0.0, |p| p * (idx / total) as f64 / nt as f64);
        let z = point(&kappa_at(grid, m, idx % total), t, model.is_time_dependent());
        let jet = evaluate_jet(model, &z, 0)?;
        let lenient = BandOptions { gap_min: 0.0, ..*opts };
        Ok(spectral_band_at(&jet.value, model.band_index(), &lenient, &z.location())?.gap)
    })?;
    Ok(gaps.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::liouville_density;
    use crate::models::{AvoidedCrossing, RiceMele, TwoBand3D};

    fn opts() -> BandOptions {
        BandOptions::default()
    }

    #[test]
    fn static_models_have_no_pump_current() {
        let m = TwoBand3D::default();
        let c = mixed_curvature(&m, 0.0, &[0.3, 0.2, 0.1], &opts()).unwrap();
        assert_eq!(c.pt, vec![0.0; 3]);
        assert_eq!(pump_current(&m, 0.0, &TorusGrid::new(16, 16).unwrap(), &opts()).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rice_mele_curvature_matches_two_level_formula() {
        let rm = RiceMele::default();
        let (t, k) = (0.13 * rm.period, 1.0);
        let c = mixed_curvature(&rm, t, &[k], &opts()).unwrap();
        // Lower band of b·σ, π₀ = (1 − b̂·σ)/2: Ω(κ, t) = −½ b̂·(∂_κb̂ × ∂_tb̂).
        let b = rm.bvec(t, k);
        let (dk, dt) = rm.bvec_derivs(t, k);
        let r = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        let cross = [dk[1] * dt[2] - dk[2] * dt[1], dk[2] * dt[0] - dk[0] * dt[2], dk[0] * dt[1] - dk[1] * dt[0]];
        let want = -0.5 * (b[0] * cross[0] + b[1] * cross[1] + b[2] * cross[2]) / (r * r * r);
        assert!((c.pt[0] - want).abs() < 1e-7, "{} vs {want}", c.pt[0]);
    }

    #[test]
    fn standard_pump_moves_one_charge() {
        let rm = RiceMele::default();
        let g = TorusGrid::new(64, 64).unwrap();
        let q = pumped_charge(&rm, &g, &opts()).unwrap()[0];
        assert!((q.abs() - 1.0).abs() < 1e-3, "{q}");
        let c = chern_number(&rm, &g, 0.0, &opts()).unwrap();
        assert_eq!(c.integer as f64, q.round());
        let g2 = TorusGrid::new(96, 96).unwrap();
        assert_eq!(chern_number(&rm, &g2, 0.0, &opts()).unwrap().integer, c.integer);
    }

    #[test]
    fn small_loop_pumps_nothing() {
        let rm = RiceMele { center_t1: 1.5, radius: 0.05, ..Default::default() };
        let g = TorusGrid::new(32, 32).unwrap();
        assert!(pumped_charge(&rm, &g, &opts()).unwrap()[0].abs() < 1e-3);
        assert_eq!(chern_number(&rm, &g, 0.0, &opts()).unwrap().integer, 0);
    }

    #[test]
    fn pump_current_converges_spectrally() {
        let rm = RiceMele::default();
        let j = |n| pump_current(&rm, 0.21, &TorusGrid::new(n, 16).unwrap(), &opts()).unwrap()[0];
        let (a, b, c) = (j(64), j(128), j(256));
        assert!((a - b).abs() < 1e-6);
        assert!((b - c).abs() < 1e-10, "{b} {c}");
    }

    #[test]
    fn curvature_relations_and_density() {
        let m = TwoBand3D::default();
        let c = mixed_curvature(&m, 0.0, &[0.4, -1.1, 2.0], &opts()).unwrap();
        let bv = [0.3, -0.2, 0.5];
        let b = WeakField::from_vector(bv);
        let pq = c.pq(&b);
        for i in 0..3 {
            for j in 0..3 {
                let want = 0.5 * (0..3).map(|k| c.pp[i * 3 + k] * b.get(k, j)).sum::<f64>();
                assert_eq!(pq[i * 3 + j], want);
            }
        }
        let eps = 0.1;
        let om = c.axial().unwrap();
        let rho = bloch_density(&c, &b, eps);
        assert!((rho - (1.0 + eps * (om[0] * bv[0] + om[1] * bv[1] + om[2] * bv[2]))).abs() < 1e-12);
        // The general density formula with the derived blocks.
        let qp = c.qp(&b);
        let general = 1.0 + 0.5 * eps * (0..3).map(|j| qp[j * 3 + j] - pq[j * 3 + j]).sum::<f64>();
        assert!((rho - general).abs() < 1e-12);
        // Time-independent band with no weak field: the band-module density is 1.
        let bp = band_point(&m, &PhasePoint::new(&[0.0; 3], &[0.4, -1.1, 2.0]), &opts()).unwrap();
        let band_rho = liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, eps).unwrap();
        assert!((band_rho - bloch_density(&c, &WeakField::zero(3), eps)).abs() < 1e-10);
    }

    #[test]
    fn axial_round_trip() {
        let v = [0.3, -1.2, 2.5];
        assert_eq!(skew_to_axial(&axial_to_skew(v)), v);
    }

    #[test]
    fn piezo_terms_vanish() {
        let m = TwoBand3D::default();
        let r = piezo_cancellation(&m, [0.0; 3], 0.0, &TorusGrid::new(16, 16).unwrap(), &opts()).unwrap();
        assert_eq!(r.term1, vec![0.0; 3]);
        let r = piezo_cancellation(&m, [0.2, -0.1, 0.3], 0.0, &TorusGrid::new(24, 16).unwrap(), &opts()).unwrap();
        assert!(r.term1.iter().all(|v| v.abs() < 1e-8), "{:?}", r.term1);
        assert!(r.max_divergence < 1e-6, "{}", r.max_divergence);
    }

    #[test]
    fn band_transport_without_field() {
        let rm = RiceMele::default();
        let static_rm = crate::models::FnModel::new("static_rice_mele", 1, 2, move |z| {
            rm.principal(&PhasePoint::with_time(&z.q, &z.p, 0.0))
        })
        .with_periods(vec![None, Some(2.0 * PI)]);
        let k0 = 0.8;
        let rk4 = Integrator::Rk4Fixed { dt: Some(1e-3) };
        let traj = bloch_flow(&static_rm, &[0.2], &[k0], 0.0, 1.0, 0.0, &WeakField::zero(1), &rk4, &opts()).unwrap();
        let v = crate::band::grad_h(&static_rm, &PhasePoint::qp(0.0, k0), 0.0, &opts()).unwrap()[1];
        let end = traj.last();
        assert!((end.p[0] - k0).abs() < 1e-14);
        assert!((end.q[0] - (0.2 + v)).abs() < 1e-8);
    }

    #[test]
    fn cyclotron_motion_converges_at_order_four() {
        let m = TwoBand3D::default();
        let b = WeakField::from_vector([0.0, 0.0, 0.8]);
        let run = |dt: f64| {
            let tr = bloch_flow(&m, &[0.0; 3], &[0.5, -0.3, 0.2], 0.0, 1.0, 0.0, &b, &Integrator::Rk4Fixed { dt: Some(dt) }, &opts())
                .unwrap();
            tr.last().p.to_vec()
        };
        let (a, b2, c) = (run(0.1), run(0.05), run(0.025));
        let d1: f64 = a.iter().zip(&b2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d2: f64 = b2.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (d1 / d2).log2();
        assert!((3.5..4.6).contains(&order), "{order}");
    }

    #[test]
    fn non_bloch_models_are_rejected() {
        assert!(mixed_curvature(&AvoidedCrossing::default(), 0.0, &[0.1], &opts()).is_err());
    }

    #[test]
    fn homotopy_keeps_the_integer() {
        let g = TorusGrid::new(48, 48).unwrap();
        let base = chern_number(&RiceMele::default(), &g, 0.0, &opts()).unwrap().integer;
        for k in 0..5 {
            let s = k as f64 / 4.0;
            let rm = RiceMele { center_t1: 1.0 + 0.1 * s, center_delta: -0.05 * s, radius: 0.3 + 0.1 * s, period: 1.0 + s };
            assert!(minimum_gap(&rm, &TorusGrid::new(32, 32).unwrap(), &opts()).unwrap() > 0.1);
            assert_eq!(chern_number(&rm, &g, 0.0, &opts()).unwrap().integer, base);
        }
    }
}
