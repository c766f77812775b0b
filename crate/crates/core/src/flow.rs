//! Corrected classical dynamics of a band: vector fields, trajectories,
//! observable pullbacks and Liouville-measure checks.
//!
//! With `J₀ = [[0, 1], [−1, 0]]` (blocks over q and p) the truncated field is
//! `X = J₀∇h + εJ₀ΩJ₀∇h + εJ₀Ω_{·t}`; the exact field solves
//! `(1 − εJ₀Ω)X = J₀(∇h + εΩ_{·t})`.

use crate::band::{band_point, grad_h, liouville_density, BandOptions, Curvature};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{det_real, solve_real};
use crate::observables::Observable;
use crate::ode::{self, Integrator};
use crate::symbols::{PhasePoint, SymbolModel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// Equations of motion truncated at first order in ε.
    #[default]
    CorrectedTruncated,
    /// Hamiltonian field of h for the corrected symplectic form, solved exactly.
    CorrectedExact,
    /// Plain Hamilton equations for e₀.
    Uncorrected,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub epsilon: f64,
    pub mode: FlowMode,
    pub integrator: Integrator,
    pub jacobian: bool,
    pub band: BandOptions,
}

impl FlowConfig {
    pub fn new(epsilon: f64, mode: FlowMode) -> Self {
        Self {
            epsilon,
            mode,
            integrator: Integrator::default(),
            jacobian: false,
            band: BandOptions::default(),
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_jacobian(mut self) -> Self {
        self.jacobian = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        self.integrator.validate()
    }

    /// ε entering h (zero in uncorrected mode).
    fn h_epsilon(&self) -> f64 {
        match self.mode {
            FlowMode::Uncorrected => 0.0,
            _ => self.epsilon,
        }
    }
}

fn point_at(model: &dyn SymbolModel, coords: &[f64], t: f64) -> PhasePoint {
    PhasePoint::from_coords(coords, model.is_time_dependent().then_some(t))
}

/// Applies J₀ to a 2n-vector: `(a, b) ↦ (b, −a)`.
fn apply_j0(v: &[f64]) -> Vec<f64> {
    let n = v.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
    out
}

/// 2n×2n block of Ω over (q, p), row-major.
fn omega_zz(omega: &Curvature) -> Vec<f64> {
    let m = 2 * omega.n;
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            out[a * m + b] = omega.get(a, b);
        }
    }
    out
}

/// Time column `(Ω(q_i, t), Ω(p_i, t))`.
fn omega_zt(omega: &Curvature) -> Vec<f64> {
    let n = omega.n;
    (0..n).map(|i| omega.qt(i)).chain((0..n).map(|i| omega.pt(i))).collect()
}

/// Corrected vector field at z (time taken from `z.t` for time-dependent models).
pub fn vector_field(model: &dyn SymbolModel, z: &PhasePoint, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let g = grad_h(model, z, cfg.h_epsilon(), &cfg.band)?;
    let n = model.slow_dim();
    let m = 2 * n;
    let eps = cfg.epsilon;
    if cfg.mode == FlowMode::Uncorrected || eps == 0.0 {
        return Ok(apply_j0(&g));
    }
    let omega = band_point(model, z, &cfg.band)?.omega;
    let w = omega_zz(&omega);
    let wt = omega_zt(&omega);
    match cfg.mode {
        FlowMode::CorrectedTruncated => {
            // Written out as the component equations (Ω^{ab}_{ij} = Ω(a_i, b_j)).
            let (hq, hp) = g.split_at(n);
            let mut x = vec![0.0; m];
            for i in 0..n {
                let mut qd = hp[i] + eps * omega.pt(i);
                let mut pd = -hq[i] - eps * omega.qt(i);
                for j in 0..n {
                    qd += eps * omega.pq(i, j) * hp[j] - eps * omega.pp(i, j) * hq[j];
                    pd += eps * omega.qp(i, j) * hq[j] - eps * omega.qq(i, j) * hp[j];
                }
                x[i] = qd;
                x[n + i] = pd;
            }
            Ok(x)
        }
        FlowMode::CorrectedExact => {
            // (1 − εJ₀Ω) X = J₀(∇h + εΩ_{·t})
            let mut a = vec![0.0; m * m];
            for col in 0..m {
                let column: Vec<f64> = (0..m).map(|r| w[r * m + col]).collect();
                let jc = apply_j0(&column);
                for r in 0..m {
                    a[r * m + col] = f64::from(u8::from(r == col)) - eps * jc[r];
                }
            }
            let rhs: Vec<f64> = g.iter().zip(&wt).map(|(gi, wi)| gi + eps * wi).collect();
            solve_real(&a, &apply_j0(&rhs), m).ok_or_else(|| Error::SingularForm { at: z.location() })
        }
        FlowMode::Uncorrected => unreachable!(),
    }
}

/// Solution of the corrected equations of motion.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// `D_zφ^t` as row-major 2n×2n matrices.
    pub jacobians: Option<Vec<Vec<f64>>>,
    pub h_values: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectory has at least one point")
    }

    pub fn det_jacobians(&self) -> Option<Vec<f64>> {
        let m = 2 * self.points[0].n();
        self.jacobians
            .as_ref()
            .map(|js| js.iter().map(|j| det_real(j, m)).collect())
    }

    /// CSV with columns `t, q_1..q_n, p_1..p_n, h, density[, det_jacobian]`.
    pub fn to_csv(&self) -> String {
        let n = self.points[0].n();
        let mut s = String::from("t");
        for i in 1..=n {
            s.push_str(&format!(",q_{i}"));
        }
        for i in 1..=n {
            s.push_str(&format!(",p_{i}"));
        }
        s.push_str(",h,density");
        let dets = self.det_jacobians();
        if dets.is_some() {
            s.push_str(",det_jacobian");
        }
        s.push('\n');
        for (k, z) in self.points.iter().enumerate() {
            s.push_str(&format!("{:.17e}", self.times[k]));
            for v in z.coords() {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push_str(&format!(",{:.17e},{:.17e}", self.h_values[k], self.densities[k]));
            if let Some(d) = &dets {
                s.push_str(&format!(",{:.17e}", d[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Right-hand side over the state `(z, J)`; J present when `cfg.jacobian`.
fn rhs(model: &dyn SymbolModel, cfg: &FlowConfig, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let m = 2 * model.slow_dim();
    let z = point_at(model, &y[..m], t);
    let x = vector_field(model, &z, cfg)?;
    dy[..m].copy_from_slice(&x);
    if cfg.jacobian {
        // d/dt J = DX·J via central directional differences along each column of J.
        for col in 0..m {
            let dir: Vec<f64> = (0..m).map(|r| y[m + r * m + col]).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let h = 1e-5 / norm;
            let shifted = |s: f64| -> Result<Vec<f64>> {
                let c: Vec<f64> = (0..m).map(|r| y[r] + s * h * dir[r]).collect();
                vector_field(model, &point_at(model, &c, t), cfg)
            };
            let plus = shifted(1.0)?;
            let minus = shifted(-1.0)?;
            for r in 0..m {
                dy[m + r * m + col] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
    }
    Ok(())
}

fn initial_state(z0: &PhasePoint, jacobian: bool) -> Vec<f64> {
    let m = 2 * z0.n();
    let mut y = z0.coords();
    if jacobian {
        for r in 0..m {
            for c in 0..m {
                y.push(if r == c { 1.0 } else { 0.0 });
            }
        }
    }
    y
}

fn check_start(model: &dyn SymbolModel, z0: &PhasePoint) -> Result<()> {
    if z0.n() != model.slow_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial point",
            expected: model.slow_dim(),
            found: z0.n(),
        });
    }
    Ok(())
}

/// Full trajectory from `t0` to `t1` (time of a time-dependent `z0` is ignored).
pub fn integrate(model: &dyn SymbolModel, z0: &PhasePoint, t0: f64, t1: f64, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_start(model, z0)?;
    let m = 2 * model.slow_dim();
    let mut states: Vec<(f64, Vec<f64>)> = Vec::new();
    ode::solve(
        &cfg.integrator,
        cfg.epsilon,
        |t, y, dy| rhs(model, cfg, t, y, dy),
        t0,
        &initial_state(z0, cfg.jacobian),
        t1,
        |t, y| states.push((t, y.to_vec())),
    )?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(states.len()),
        points: Vec::with_capacity(states.len()),
        jacobians: cfg.jacobian.then(Vec::new),
        h_values: Vec::with_capacity(states.len()),
        densities: Vec::with_capacity(states.len()),
    };
    for (t, y) in states {
        let z = point_at(model, &y[..m], t);
        let (h, rho) = h_and_density(model, &z, cfg).map_err(|e| e.at_time(t))?;
        traj.times.push(t);
        traj.points.push(z);
        traj.h_values.push(h);
        traj.densities.push(rho);
        if let Some(js) = traj.jacobians.as_mut() {
            js.push(y[m..].to_vec());
        }
    }
    Ok(traj)
}

fn h_and_density(model: &dyn SymbolModel, z: &PhasePoint, cfg: &FlowConfig) -> Result<(f64, f64)> {
    let bp = band_point(model, z, &cfg.band)?;
    match cfg.mode {
        FlowMode::Uncorrected => Ok((bp.e0, 1.0)),
        _ => Ok((
            bp.h(cfg.epsilon),
            liouville_density(&bp.pi0, &bp.dpi0, &bp.omega, cfg.epsilon)?,
        )),
    }
}

/// Endpoint `φ^{t1,t0}(z0)` without storing the path.
pub fn flow_map(model: &dyn SymbolModel, z0: &PhasePoint, t0: f64, t1: f64, cfg: &FlowConfig) -> Result<PhasePoint> {
    check_start(model, z0)?;
    let mut c = *cfg;
    c.jacobian = false;
    let y = ode::solve(
        &c.integrator,
        c.epsilon,
        |t, y, dy| rhs(model, &c, t, y, dy),
        t0,
        &z0.coords(),
        t1,
        |_, _| {},
    )?;
    Ok(point_at(model, &y, t1))
}

/// `a(φ^{t,t0}(z))` for every target z.
pub fn pullback(
    model: &dyn SymbolModel,
    a: &dyn Observable,
    targets: &[PhasePoint],
    t: f64,
    t0: f64,
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if let Some(c) = a.constant_value() {
        return Ok(vec![c; targets.len()]);
    }
    exec::try_map_slice(targets, |z| {
        let end = flow_map(model, z, t0, t, cfg)?;
        Ok(a.value(&PhasePoint::new(&end.q, &end.p)))
    })
}

/// `|ρ_ε(φ^t(z0))·det(D_zφ^t) − ρ_ε(z0)|` along the flow from `t0 = 0`.
pub fn liouville_invariance_defect(model: &dyn SymbolModel, z0: &PhasePoint, t: f64, cfg: &FlowConfig) -> Result<f64> {
    if !cfg.jacobian {
        return Err(Error::InvalidInput("liouville_invariance_defect needs jacobian propagation".into()));
    }
    let traj = integrate(model, z0, 0.0, t, cfg)?;
    let det = *traj.det_jacobians().unwrap().last().unwrap();
    Ok((traj.densities.last().unwrap() * det - traj.densities[0]).abs())
}

/// Tuning of the lattice pullback.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeOptions {
    /// Initial spacing of the node lattice on which the flow map is computed.
    pub node_spacing: f64,
    /// Largest admissible interpolation deviation of `a∘φ` at validation points.
    pub tolerance: f64,
    /// Number of spacing halvings before giving up.
    pub max_refinements: usize,
    /// Number of validation targets integrated exactly.
    pub validation_points: usize,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        Self {
            node_spacing: 0.2,
            tolerance: 1e-9,
            max_refinements: 3,
            validation_points: 48,
        }
    }
}

const STENCIL: usize = 8;

/// Lagrange weights on a uniform lattice `x_k = x0 + k·h`, `k ∈ [0, len)`;
/// returns the first stencil index and the 8 weights for abscissa x.
fn lagrange_weights(x0: f64, h: f64, len: usize, x: f64) -> (usize, [f64; STENCIL]) {
    let u = (x - x0) / h;
    let half = STENCIL as isize / 2;
    let start = (u.floor() as isize - half + 1).clamp(0, len as isize - STENCIL as isize) as usize;
    let mut w = [0.0; STENCIL];
    for (i, wi) in w.iter_mut().enumerate() {
        let ui = (start + i) as f64;
        if (u - ui).abs() < 1e-14 {
            *wi = 0.0;
            let mut exact = [0.0; STENCIL];
            exact[i] = 1.0;
            return (start, exact);
        }
        let mut num = 1.0;
        let mut den = 1.0;
        for j in 0..STENCIL {
            if j != i {
                let uj = (start + j) as f64;
                num *= u - uj;
                den *= ui - uj;
            }
        }
        *wi = num / den;
    }
    (start, w)
}

/// `a∘φ^{t1,t0}` on the tensor lattice `xs × ps` (row-major, x outer), for n = 1.
///
/// The flow map is computed on a node lattice covering the backward image of
/// the observable's support and interpolated (degree 7 per axis) to the
/// targets; a set of targets is integrated exactly to validate the result.
pub fn pullback_lattice(
    model: &dyn SymbolModel,
    a: &dyn Observable,
    xs: &[f64],
    ps: &[f64],
    t0: f64,
    t1: f64,
    cfg: &FlowConfig,
    opts: &LatticeOptions,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if model.slow_dim() != 1 {
        return Err(Error::InvalidInput("lattice pullback supports n = 1".into()));
    }
    let (nx, np) = (xs.len(), ps.len());
    if let Some(c) = a.constant_value() {
        return Ok(vec![c; nx * np]);
    }
    let eval_exact = |q: f64, p: f64| -> Result<f64> {
        let end = flow_map(model, &point_at(model, &[q, p], t0), t0, t1, cfg)?;
        Ok(a.value(&PhasePoint::new(&end.q, &end.p)))
    };
    let x_range = (xs[0].min(xs[nx - 1]), xs[0].max(xs[nx - 1]));
    let p_range = (ps[0].min(ps[np - 1]), ps[0].max(ps[np - 1]));
    // Bounding box of the backward image of the support disk.
    let bbox = match a.support() {
        None => [x_range.0, x_range.1, p_range.0, p_range.1],
        Some((c, r)) => {
            let k = 256;
            let boundary: Vec<[f64; 2]> = (0..=k)
                .map(|i| {
                    if i == k {
                        [c[0], c[1]]
                    } else {
                        let th = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                        [c[0] + r * th.cos(), c[1] + r * th.sin()]
                    }
                })
                .collect();
            let images = exec::try_map_slice(&boundary, |b| {
                let end = flow_map(model, &point_at(model, b, t1), t1, t0, cfg)?;
                Ok([end.q[0], end.p[0]])
            })?;
            let mut bb = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
            for im in &images {
                bb[0] = bb[0].min(im[0]);
                bb[1] = bb[1].max(im[0]);
                bb[2] = bb[2].min(im[1]);
                bb[3] = bb[3].max(im[1]);
            }
            let pad = 0.05 * ((bb[1] - bb[0]).max(bb[3] - bb[2])) + 2.0 * r * std::f64::consts::PI / k as f64;
            [bb[0] - pad, bb[1] + pad, bb[2] - pad, bb[3] + pad]
        }
    };
    let box_ = [
        bbox[0].max(x_range.0),
        bbox[1].min(x_range.1),
        bbox[2].max(p_range.0),
        bbox[3].min(p_range.1),
    ];
    let mut out = vec![0.0; nx * np];
    if box_[0] > box_[1] || box_[2] > box_[3] {
        return Ok(out);
    }
    let inside_x: Vec<usize> = (0..nx).filter(|&i| xs[i] >= box_[0] && xs[i] <= box_[1]).collect();
    let inside_p: Vec<usize> = (0..np).filter(|&k| ps[k] >= box_[2] && ps[k] <= box_[3]).collect();
    let n_targets = inside_x.len() * inside_p.len();
    if n_targets == 0 {
        return Ok(out);
    }
    let mut spacing = opts.node_spacing;
    for _refinement in 0..=opts.max_refinements {
        let nodes_x = ((box_[1] - box_[0]) / spacing).ceil() as usize + 1 + STENCIL;
        let nodes_p = ((box_[3] - box_[2]) / spacing).ceil() as usize + 1 + STENCIL;
        if nodes_x * nodes_p >= n_targets {
            // Direct integration is cheaper than interpolation.
            let vals = exec::try_map_range(n_targets, |k| {
                let i = inside_x[k / inside_p.len()];
                let j = inside_p[k % inside_p.len()];
                eval_exact(xs[i], ps[j])
            })?;
            for (k, v) in vals.into_iter().enumerate() {
                out[inside_x[k / inside_p.len()] * np + inside_p[k % inside_p.len()]] = v;
            }
            return Ok(out);
        }
        let gx0 = box_[0] - (STENCIL / 2) as f64 * spacing;
        let gp0 = box_[2] - (STENCIL / 2) as f64 * spacing;
        let ends = exec::try_map_range(nodes_x * nodes_p, |k| {
            let q = gx0 + (k / nodes_p) as f64 * spacing;
            let p = gp0 + (k % nodes_p) as f64 * spacing;
            let end = flow_map(model, &point_at(model, &[q, p], t0), t0, t1, cfg)?;
            Ok([end.q[0], end.p[0]])
        })?;
        let wx: Vec<(usize, [f64; STENCIL])> = inside_x
            .iter()
            .map(|&i| lagrange_weights(gx0, spacing, nodes_x, xs[i]))
            .collect();
        let wp: Vec<(usize, [f64; STENCIL])> = inside_p
            .iter()
            .map(|&k| lagrange_weights(gp0, spacing, nodes_p, ps[k]))
            .collect();
        let interp = |ix: usize, ip: usize| -> f64 {
            let (sx, ref w1) = wx[ix];
            let (sp, ref w2) = wp[ip];
            let mut qp = [0.0; 2];
            for (a, wa) in w1.iter().enumerate() {
                let mut acc = [0.0; 2];
                let row = (sx + a) * nodes_p;
                for (b, wb) in w2.iter().enumerate() {
                    let e = ends[row + sp + b];
                    acc[0] += wb * e[0];
                    acc[1] += wb * e[1];
                }
                qp[0] += wa * acc[0];
                qp[1] += wa * acc[1];
            }
            a.value(&PhasePoint::qp(qp[0], qp[1]))
        };
        // Validation on a deterministic low-discrepancy subset of the targets.
        let nv = opts.validation_points.min(n_targets);
        let golden = 0.618_033_988_749_894_9;
        let picks: Vec<(usize, usize)> = (0..nv)
            .map(|k| {
                let u = (k as f64 + 0.5) / nv as f64;
                let v = ((k as f64 + 0.5) * golden).fract();
                (
                    ((u * inside_x.len() as f64) as usize).min(inside_x.len() - 1),
                    ((v * inside_p.len() as f64) as usize).min(inside_p.len() - 1),
                )
            })
            .collect();
        let exact = exec::try_map_slice(&picks, |&(ix, ip)| eval_exact(xs[inside_x[ix]], ps[inside_p[ip]]))?;
        let deviation = picks
            .iter()
            .zip(&exact)
            .map(|(&(ix, ip), e)| (interp(ix, ip) - e).abs())
            .fold(0.0, f64::max);
        if deviation <= opts.tolerance {
            let rows = exec::map_range(inside_x.len(), |ix| {
                (0..inside_p.len()).map(|ip| interp(ix, ip)).collect::<Vec<f64>>()
            });
            for (ix, row) in rows.into_iter().enumerate() {
                for (ip, v) in row.into_iter().enumerate() {
                    out[inside_x[ix] * np + inside_p[ip]] = v;
                }
            }
            return Ok(out);
        }
        if _refinement == opts.max_refinements {
            return Err(Error::InterpolationFailure { deviation });
        }
        spacing *= 0.5;
    }
    unreachable!()
}
