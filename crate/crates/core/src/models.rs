//! Built-in symbol models and the string-keyed registry.

use crate::error::{Error, Result};
use crate::linalg::{bloch_matrix, CMatrix};
use crate::symbols::{PhasePoint, SymbolModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

type Evaluator = dyn Fn(&PhasePoint) -> CMatrix + Send + Sync;

/// Model backed by closures; handy for tests and ad-hoc symbols.
pub struct FnModel {
    name: String,
    n: usize,
    d: usize,
    time_dependent: bool,
    h0: Box<Evaluator>,
    h1: Option<Box<Evaluator>>,
    grad: Option<Box<dyn Fn(&PhasePoint) -> Vec<CMatrix> + Send + Sync>>,
    band: usize,
    gap: f64,
    periods: Option<Vec<Option<f64>>>,
}

impl FnModel {
    pub fn new(
        name: &str,
        n: usize,
        d: usize,
        h0: impl Fn(&PhasePoint) -> CMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            n,
            d,
            time_dependent: false,
            h0: Box::new(h0),
            h1: None,
            grad: None,
            band: 0,
            gap: 0.1,
            periods: None,
        }
    }

    pub fn time_dependent(mut self) -> Self {
        self.time_dependent = true;
        self
    }

    pub fn with_subprincipal(mut self, h1: impl Fn(&PhasePoint) -> CMatrix + Send + Sync + 'static) -> Self {
        self.h1 = Some(Box::new(h1));
        self
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(&PhasePoint) -> Vec<CMatrix> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Box::new(g));
        self
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.band = band;
        self
    }

    pub fn with_gap_promise(mut self, gap: f64) -> Self {
        self.gap = gap;
        self
    }

    /// Periods of (q, p[, t]); unset means aperiodic.
    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Self {
        self.periods = Some(periods);
        self
    }
}

impl SymbolModel for FnModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn slow_dim(&self) -> usize {
        self.n
    }
    fn fast_dim(&self) -> usize {
        self.d
    }
    fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix {
        (self.h0)(z)
    }
    fn subprincipal(&self, z: &PhasePoint) -> Option<CMatrix> {
        self.h1.as_ref().map(|f| f(z))
    }
    fn principal_gradient(&self, z: &PhasePoint) -> Option<Vec<CMatrix>> {
        self.grad.as_ref().map(|g| g(z))
    }
    fn gap_promise(&self) -> f64 {
        self.gap
    }
    fn band_index(&self) -> usize {
        self.band
    }
    fn periods(&self) -> Vec<Option<f64>> {
        match &self.periods {
            Some(p) => p.clone(),
            None => vec![None; 2 * self.n + usize::from(self.time_dependent)],
        }
    }
}

/// `H₀ = diag(f, f + gap)` with `f = ω(q² + p²)/2 + λq⁴/4`, `H₁ = c·σx`.
#[derive(Clone, Debug)]
pub struct DecoupledDiag {
    pub omega: f64,
    pub quartic: f64,
    pub gap: f64,
    pub coupling: f64,
}

impl Default for DecoupledDiag {
    fn default() -> Self {
        Self {
            omega: 1.0,
            quartic: 0.0,
            gap: 1.0,
            coupling: 0.0,
        }
    }
}

impl DecoupledDiag {
    pub fn f(&self, q: f64, p: f64) -> f64 {
        0.5 * self.omega * (q * q + p * p) + 0.25 * self.quartic * q.powi(4)
    }
}

impl SymbolModel for DecoupledDiag {
    fn name(&self) -> &str {
        "decoupled_diag"
    }
    fn slow_dim(&self) -> usize {
        1
    }
    fn fast_dim(&self) -> usize {
        2
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix {
        let f = self.f(z.q[0], z.p[0]);
        CMatrix::from_real_diag(&[f, f + self.gap])
    }
    fn subprincipal(&self, _z: &PhasePoint) -> Option<CMatrix> {
        (self.coupling != 0.0).then(|| bloch_matrix([self.coupling, 0.0, 0.0], 0.0))
    }
    fn principal_gradient(&self, z: &PhasePoint) -> Option<Vec<CMatrix>> {
        let (q, p) = (z.q[0], z.p[0]);
        let fq = self.omega * q + self.quartic * q.powi(3);
        let fp = self.omega * p;
        Some(vec![CMatrix::from_real_diag(&[fq, fq]), CMatrix::from_real_diag(&[fp, fp])])
    }
    fn gap_promise(&self) -> f64 {
        self.gap
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("omega".into(), self.omega),
            ("quartic".into(), self.quartic),
            ("gap".into(), self.gap),
            ("coupling".into(), self.coupling),
        ])
    }
}

/// `H₀ = c(p² + ω²q²)/2·1 + θ(qσx + pσy + δσz)`, `H₁ = h1_z·σz`; lower band tracked.
#[derive(Clone, Debug)]
pub struct AvoidedCrossing {
    pub theta: f64,
    pub delta: f64,
    pub omega: f64,
    pub confinement: f64,
    pub h1_z: f64,
}

impl Default for AvoidedCrossing {
    fn default() -> Self {
        Self {
            theta: 0.5,
            delta: 1.0,
            omega: 1.0,
            confinement: 1.0,
            h1_z: 0.0,
        }
    }
}

impl AvoidedCrossing {
    /// Radius `|b|/θ = √(q² + p² + δ²)`.
    pub fn radius(&self, q: f64, p: f64) -> f64 {
        (q * q + p * p + self.delta * self.delta).sqrt()
    }

    /// Closed-form lower band energy.
    pub fn lower_energy(&self, q: f64, p: f64) -> f64 {
        0.5 * self.confinement * (p * p + self.omega * self.omega * q * q) - self.theta.abs() * self.radius(q, p)
    }
}

impl SymbolModel for AvoidedCrossing {
    fn name(&self) -> &str {
        "avoided_crossing"
    }
    fn slow_dim(&self) -> usize {
        1
    }
    fn fast_dim(&self) -> usize {
        2
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix {
        let (q, p) = (z.q[0], z.p[0]);
        let s = 0.5 * self.confinement * (p * p + self.omega * self.omega * q * q);
        bloch_matrix([self.theta * q, self.theta * p, self.theta * self.delta], s)
    }
    fn subprincipal(&self, _z: &PhasePoint) -> Option<CMatrix> {
        (self.h1_z != 0.0).then(|| bloch_matrix([0.0, 0.0, self.h1_z], 0.0))
    }
    fn principal_gradient(&self, z: &PhasePoint) -> Option<Vec<CMatrix>> {
        let (q, p) = (z.q[0], z.p[0]);
        let c = self.confinement;
        Some(vec![
            bloch_matrix([self.theta, 0.0, 0.0], c * self.omega * self.omega * q),
            bloch_matrix([0.0, self.theta, 0.0], c * p),
        ])
    }
    fn gap_promise(&self) -> f64 {
        2.0 * (self.theta * self.delta).abs()
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("theta".into(), self.theta),
            ("delta".into(), self.delta),
            ("omega".into(), self.omega),
            ("confinement".into(), self.confinement),
            ("h1_z".into(), self.h1_z),
        ])
    }
}

/// Rice–Mele pump as a time-dependent symbol with crystal momentum κ = p:
/// `b = (t₁(s) + cos κ, sin κ, Δ(s))`, `t₁ = c₁ + r cos 2πs`, `Δ = c₂ + r sin 2πs`, `s = t/T`.
#[derive(Clone, Debug)]
pub struct RiceMele {
    pub center_t1: f64,
    pub center_delta: f64,
    pub radius: f64,
    pub period: f64,
}

impl Default for RiceMele {
    fn default() -> Self {
        Self {
            center_t1: 1.0,
            center_delta: 0.0,
            radius: 0.3,
            period: 1.0,
        }
    }
}

impl RiceMele {
    pub fn bvec(&self, t: f64, kappa: f64) -> [f64; 3] {
        let phase = 2.0 * PI * t / self.period;
        [
            self.center_t1 + self.radius * phase.cos() + kappa.cos(),
            kappa.sin(),
            self.center_delta + self.radius * phase.sin(),
        ]
    }

    /// ∂_κ b and ∂_t b.
    pub fn bvec_derivs(&self, t: f64, kappa: f64) -> ([f64; 3], [f64; 3]) {
        let w = 2.0 * PI / self.period;
        let phase = w * t;
        (
            [-kappa.sin(), kappa.cos(), 0.0],
            [-self.radius * w * phase.sin(), 0.0, self.radius * w * phase.cos()],
        )
    }
}

impl SymbolModel for RiceMele {
    fn name(&self) -> &str {
        "rice_mele"
    }
    fn slow_dim(&self) -> usize {
        1
    }
    fn fast_dim(&self) -> usize {
        2
    }
    fn is_time_dependent(&self) -> bool {
        true
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix {
        bloch_matrix(self.bvec(z.t.unwrap_or(0.0), z.p[0]), 0.0)
    }
    fn principal_gradient(&self, z: &PhasePoint) -> Option<Vec<CMatrix>> {
        let (dk, dt) = self.bvec_derivs(z.t.unwrap_or(0.0), z.p[0]);
        Some(vec![CMatrix::zeros(2), bloch_matrix(dk, 0.0), bloch_matrix(dt, 0.0)])
    }
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None, Some(2.0 * PI), Some(self.period)]
    }
    fn gap_promise(&self) -> f64 {
        // |b| ≥ distance of the (t₁, Δ) loop from the gap-closing points (±1, 0).
        let d1 = ((self.center_t1 - 1.0).powi(2) + self.center_delta.powi(2)).sqrt();
        let d2 = ((self.center_t1 + 1.0).powi(2) + self.center_delta.powi(2)).sqrt();
        2.0 * (d1 - self.radius).abs().min((d2 - self.radius).abs())
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("center_t1".into(), self.center_t1),
            ("center_delta".into(), self.center_delta),
            ("radius".into(), self.radius),
            ("period".into(), self.period),
        ])
    }
}

/// Three-dimensional two-band insulator on the κ-torus:
/// `b = (sin κ₁, sin κ₂, m₀ − cos κ₁ − cos κ₂ − cos κ₃)`.
#[derive(Clone, Debug)]
pub struct TwoBand3D {
    pub m0: f64,
}

impl Default for TwoBand3D {
    fn default() -> Self {
        Self { m0: 3.5 }
    }
}

impl TwoBand3D {
    pub fn bvec(&self, k: &[f64]) -> [f64; 3] {
        [k[0].sin(), k[1].sin(), self.m0 - k[0].cos() - k[1].cos() - k[2].cos()]
    }
}

impl SymbolModel for TwoBand3D {
    fn name(&self) -> &str {
        "two_band_3d"
    }
    fn slow_dim(&self) -> usize {
        3
    }
    fn fast_dim(&self) -> usize {
        2
    }
    fn principal(&self, z: &PhasePoint) -> CMatrix {
        bloch_matrix(self.bvec(&z.p), 0.0)
    }
    fn principal_gradient(&self, z: &PhasePoint) -> Option<Vec<CMatrix>> {
        let k = &z.p;
        let mut g = vec![CMatrix::zeros(2); 3];
        g.push(bloch_matrix([k[0].cos(), 0.0, k[0].sin()], 0.0));
        g.push(bloch_matrix([0.0, k[1].cos(), k[1].sin()], 0.0));
        g.push(bloch_matrix([0.0, 0.0, k[2].sin()], 0.0));
        Some(g)
    }
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None, None, None, Some(2.0 * PI), Some(2.0 * PI), Some(2.0 * PI)]
    }
    fn gap_promise(&self) -> f64 {
        // |b_z| ≥ min |m₀ − c| over the values c ∈ {−3, −1, 1, 3} reachable at b_x = b_y = 0.
        2.0 * [-3.0, -1.0, 1.0, 3.0].iter().map(|c| (self.m0 - c).abs()).fold(f64::INFINITY, f64::min)
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("m0".into(), self.m0)])
    }
}

/// Registry reference: name plus parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Catalog entry for `list-models`.
#[derive(Clone, Debug)]
pub struct ModelInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub summary: &'static str,
    pub params: Vec<(&'static str, f64)>,
}

pub fn symbol_catalog() -> Vec<ModelInfo> {
    let dd = DecoupledDiag::default();
    let ac = AvoidedCrossing::default();
    let rm = RiceMele::default();
    vec![
        ModelInfo {
            name: "decoupled_diag",
            kind: "symbol",
            summary: "H0 = diag(f, f + gap), f = omega (q^2 + p^2)/2 + quartic q^4/4; H1 = coupling sigma_x",
            params: vec![
                ("omega", dd.omega),
                ("quartic", dd.quartic),
                ("gap", dd.gap),
                ("coupling", dd.coupling),
            ],
        },
        ModelInfo {
            name: "avoided_crossing",
            kind: "symbol",
            summary: "H0 = confinement (p^2 + omega^2 q^2)/2 + theta (q sigma_x + p sigma_y + delta sigma_z); H1 = h1_z sigma_z",
            params: vec![
                ("theta", ac.theta),
                ("delta", ac.delta),
                ("omega", ac.omega),
                ("confinement", ac.confinement),
                ("h1_z", ac.h1_z),
            ],
        },
        ModelInfo {
            name: "rice_mele",
            kind: "symbol+bloch",
            summary: "b = (t1(s) + cos k, sin k, Delta(s)), (t1, Delta) on a circle of given radius, s = t/period",
            params: vec![
                ("center_t1", rm.center_t1),
                ("center_delta", rm.center_delta),
                ("radius", rm.radius),
                ("period", rm.period),
            ],
        },
        ModelInfo {
            name: "two_band_3d",
            kind: "symbol+bloch",
            summary: "b = (sin k1, sin k2, m0 - cos k1 - cos k2 - cos k3), three crystal momenta",
            params: vec![("m0", TwoBand3D::default().m0)],
        },
    ]
}

/// Resolves `spec.params` against the catalog defaults, rejecting unknown keys.
pub(crate) fn resolve_params(info: &ModelInfo, spec: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = info.params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in spec {
        if !out.contains_key(k) {
            let known: Vec<&str> = info.params.iter().map(|(k, _)| *k).collect();
            return Err(Error::Config(format!(
                "unknown parameter `{k}` for model `{}` (known: {})",
                info.name,
                known.join(", ")
            )));
        }
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter `{k}` must be finite")));
        }
        out.insert(k.clone(), *v);
    }
    Ok(out)
}

pub fn build_model(spec: &ModelSpec) -> Result<Arc<dyn SymbolModel>> {
    let catalog = symbol_catalog();
    let Some(info) = catalog.iter().find(|m| m.name == spec.name) else {
        let names: Vec<&str> = catalog.iter().map(|m| m.name).collect();
        return Err(Error::Config(format!(
            "unknown model `{}`; registered symbol models: {}",
            spec.name,
            names.join(", ")
        )));
    };
    let p = resolve_params(info, &spec.params)?;
    let model: Arc<dyn SymbolModel> = match info.name {
        "decoupled_diag" => {
            if p["gap"] <= 0.0 {
                return Err(Error::Config("decoupled_diag: gap must be positive".into()));
            }
            Arc::new(DecoupledDiag {
                omega: p["omega"],
                quartic: p["quartic"],
                gap: p["gap"],
                coupling: p["coupling"],
            })
        }
        "avoided_crossing" => {
            if p["theta"] * p["delta"] == 0.0 {
                return Err(Error::Config("avoided_crossing: theta and delta must be nonzero".into()));
            }
            Arc::new(AvoidedCrossing {
                theta: p["theta"],
                delta: p["delta"],
                omega: p["omega"],
                confinement: p["confinement"],
                h1_z: p["h1_z"],
            })
        }
        "rice_mele" => {
            if p["period"] <= 0.0 {
                return Err(Error::Config("rice_mele: period must be positive".into()));
            }
            Arc::new(RiceMele {
                center_t1: p["center_t1"],
                center_delta: p["center_delta"],
                radius: p["radius"],
                period: p["period"],
            })
        }
        "two_band_3d" => Arc::new(TwoBand3D { m0: p["m0"] }),
        _ => unreachable!(),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{evaluate_jet, evaluate_jet_fd};

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let models: Vec<Arc<dyn SymbolModel>> = vec![
            build_model(&ModelSpec::new("decoupled_diag").with("quartic", 0.3)).unwrap(),
            build_model(&ModelSpec::new("avoided_crossing").with("omega", 1.3)).unwrap(),
            build_model(&ModelSpec::new("rice_mele")).unwrap(),
            build_model(&ModelSpec::new("two_band_3d")).unwrap(),
        ];
        for m in models {
            let z = if m.slow_dim() == 3 {
                PhasePoint::new(&[0.1, 0.2, 0.3], &[0.4, -0.9, 2.1])
            } else if m.is_time_dependent() {
                PhasePoint::with_time(&[0.4], &[-0.9], 0.37)
            } else {
                PhasePoint::qp(0.4, -0.9)
            };
            let a = evaluate_jet(m.as_ref(), &z, 1).unwrap();
            let f = evaluate_jet_fd(m.as_ref(), &z).unwrap();
            for k in 0..m.coord_count() {
                assert!((a.partial(k) - f.partial(k)).max_abs() < 1e-8, "{} coord {k}", m.name());
            }
        }
    }

    #[test]
    fn unknown_names_and_params_are_rejected() {
        let e = build_model(&ModelSpec::new("nope")).err().unwrap().to_string();
        assert!(e.contains("avoided_crossing") && e.contains("decoupled_diag") && e.contains("rice_mele"));
        assert!(build_model(&ModelSpec::new("avoided_crossing").with("thetta", 1.0)).is_err());
    }

    #[test]
    fn rice_mele_is_periodic() {
        let m = RiceMele::default();
        let a = m.principal(&PhasePoint::with_time(&[0.0], &[0.7], 0.2));
        let b = m.principal(&PhasePoint::with_time(&[0.0], &[0.7 + 2.0 * PI], 0.2 + m.period));
        assert!((&a - &b).max_abs() < 1e-12);
    }
}
