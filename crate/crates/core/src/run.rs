//! Configuration-driven experiment runs: schema, validation, execution and
//! the `results.csv` / `manifest.json` outputs.

use crate::band::{band_data, BandOptions};
use crate::bloch::{chern_number, piezo_cancellation, pump, TorusGrid};
use crate::error::{Error, Result};
use crate::exec;
use crate::experiments::{
    effective_hamiltonian_residual, egorov_error_for, equilibrium_error, fit_order, moyal_error,
    projector_invariance, wigner_transport_error, Corrections, EnergyWindow, ErrorCurve, MoyalKind,
    QuadratureOptions, QuantumSetup,
};
use crate::flow::{integrate, FlowConfig, FlowMode, LatticeOptions};
use crate::models::{build_model, ModelSpec};
use crate::observables::{build_energy_function, build_observable, Selector};
use crate::ode::Integrator;
use crate::quantum::{Grid, WaveFunction};
use crate::symbols::{PhasePoint, SymbolModel};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BandInfo,
    Flow,
    Egorov,
    Equilibrium,
    Wigner,
    Projector,
    Residual,
    Moyal,
    Pump,
    Chern,
    Piezo,
}

pub const EXPERIMENTS: [ExperimentKind; 11] = [
    ExperimentKind::BandInfo,
    ExperimentKind::Flow,
    ExperimentKind::Egorov,
    ExperimentKind::Equilibrium,
    ExperimentKind::Wigner,
    ExperimentKind::Projector,
    ExperimentKind::Residual,
    ExperimentKind::Moyal,
    ExperimentKind::Pump,
    ExperimentKind::Chern,
    ExperimentKind::Piezo,
];

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BandInfo => "band-info",
            Self::Flow => "flow",
            Self::Egorov => "egorov",
            Self::Equilibrium => "equilibrium",
            Self::Wigner => "wigner",
            Self::Projector => "projector",
            Self::Residual => "residual",
            Self::Moyal => "moyal",
            Self::Pump => "pump",
            Self::Chern => "chern",
            Self::Piezo => "piezo",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        EXPERIMENTS.iter().copied().find(|e| e.name() == name)
    }

    /// Required and optional config fields (besides `experiment`, `model`, `output`).
    fn fields(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Self::BandInfo => (&["epsilon", "points"], &["gap_min"]),
            Self::Flow => (&["epsilon", "points", "time"], &["modes", "integrator", "gap_min"]),
            Self::Egorov => (&["sweep", "grid", "time", "observable"], &["modes", "integrator", "lattice", "gap_min"]),
            Self::Equilibrium => {
                (&["sweep", "grid", "observable", "energy_function"], &["corrections", "quadrature", "gap_min"])
            }
            Self::Wigner => (
                &["sweep", "grid", "time", "observable", "packet"],
                &["modes", "integrator", "lattice", "gap_min"],
            ),
            Self::Projector => (&["sweep", "grid", "time"], &["window", "gap_min"]),
            Self::Residual => (&["sweep", "grid"], &["window", "gap_min"]),
            Self::Moyal => (&["sweep", "grid", "observable"], &["second_observable", "moyal", "gap_min"]),
            Self::Pump => (&["torus"], &["gap_min"]),
            Self::Chern => (&["torus"], &["time", "gap_min"]),
            Self::Piezo => (&["torus", "field"], &["time", "gap_min"]),
        }
    }

    /// What the experiment measures, as formulas.
    pub fn description(&self) -> &'static str {
        match self {
            Self::BandInfo => {
                "Band data at given phase-space points: e0, gap, e1 = tr(H1 pi0), M = (i/2) tr({pi0|H0|pi0}),\n\
                 h = e0 + eps (e1 + M), Berry curvature Omega_ab = -i tr(pi0 [d_a pi0, d_b pi0]) and the\n\
                 Liouville density rho = 1 + i eps tr(pi0 {pi0, pi0})."
            }
            Self::Flow => {
                "Trajectories of the corrected band dynamics: the Hamiltonian field of h for the\n\
                 symplectic form omega_eps = omega_0 - eps Omega, X = J0 grad h + eps J0 Omega J0 grad h\n\
                 + eps J0 Omega_t (truncated) or the exact solve; uncorrected mode uses h = e0."
            }
            Self::Egorov => {
                "Egorov error || pi (e^{iHt/eps} Op(a) e^{-iHt/eps} - Op(a o phi^t_eps)) pi ||, with\n\
                 pi the super-adiabatic projector. The corrected flow gives O(eps^2), the plain\n\
                 Hamilton flow of e0 only O(eps). Columns: one per flow mode."
            }
            Self::Equilibrium => {
                "Equilibrium expectations: (2 pi eps) Tr(pi f(H) Op(a)) against\n\
                 int f(h) a rho dq dp / (2 pi eps)^n, i.e. error = |2 pi eps Tr(...) - int f(h) a drho|.\n\
                 With M, the Liouville density and e1 on the error is O(eps^2); off, O(eps)."
            }
            Self::Wigner => {
                "Wigner transport: <psi(t), Op(a) psi(t)> against int (w o phi^{-t}) a d lambda_eps for a\n\
                 band-projected coherent state psi = pi psi0 / |pi psi0|, w its band Wigner function."
            }
            Self::Projector => {
                "Almost invariance of the super-adiabatic projector: || [pi, e^{-iHt/eps}] ||\n\
                 (optionally on the energy window chi(H)); expected O(eps^2)."
            }
            Self::Residual => {
                "Effective Hamiltonian residual || pi (Op(h) - H) pi || with h = e0 + eps e1 + eps M\n\
                 (columns with and without M); expected O(eps^2) with M and O(eps) without."
            }
            Self::Moyal => {
                "Moyal remainders: || [Op(a), Op(b)] + i eps Op({a, b}) || = O(eps^3) (commutator),\n\
                 || Op(a) Op(b) - Op(ab + eps (ab)_1) || = O(eps^2) (product) and the triple product\n\
                 Op(pi0) Op(a) Op(pi0)."
            }
            Self::Pump => {
                "Pump current j(t) = int Omega^{pt}(t, k) dk / (2 pi)^m with\n\
                 Omega^{pt} = -i tr(pi0 [grad_k pi0, d_t pi0]), and the pumped charge Q = int_0^T j dt."
            }
            Self::Chern => {
                "Integer Chern number of the band over the (k, t) or (k1, k2) torus from link-variable\n\
                 plaquette fluxes; agrees with the pumped charge."
            }
            Self::Piezo => {
                "Partial-integration identity of the weak-field current: B int Omega_vec . grad e0 dk\n\
                 vanishes because div Omega_vec = 0, (Omega_vec)_i = (1/2) eps_ijk Omega^{pp}_jk."
            }
        }
    }
}

/// Position grid for the quantum experiments; the half-width follows
/// `min(max_half_width, √(πεN/2))` at each ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub max_half_width: f64,
}

impl GridSpec {
    pub fn at(&self, epsilon: f64) -> Result<Grid> {
        Grid::balanced(self.max_half_width, self.points, epsilon)
    }
}

/// Coherent initial state of width √ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    pub q0: f64,
    pub p0: f64,
    /// Real spinor components (normalized on use).
    pub spinor: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus: Option<TorusGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<FlowMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_observable: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_function: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrections: Option<Vec<Corrections>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<EnergyWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moyal: Option<MoyalKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<Integrator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Integrator used when a flow-based config names none.
pub const DEFAULT_INTEGRATOR: Integrator = Integrator::Rk45Adaptive { rtol: 1e-10, atol: 1e-12 };

impl RunConfig {
    /// Minimal config for `experiment` on `model`; everything else unset.
    pub fn new(experiment: ExperimentKind, model: ModelSpec) -> Self {
        Self {
            experiment,
            model,
            epsilon: None,
            sweep: None,
            grid: None,
            torus: None,
            time: None,
            modes: None,
            points: None,
            observable: None,
            second_observable: None,
            energy_function: None,
            corrections: None,
            packet: None,
            window: None,
            moyal: None,
            field: None,
            integrator: None,
            lattice: None,
            quadrature: None,
            gap_min: None,
            output: None,
        }
    }

    /// Parses a config, or the `config` of a manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let cfg: Self = if value.get("config").is_some() && value.get("version").is_some() {
            let m: Manifest = serde_json::from_value(value).map_err(|e| Error::Config(format!("manifest: {e}")))?;
            m.config
        } else {
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut f = |name, set: bool| {
            if set {
                v.push(name)
            }
        };
        f("epsilon", self.epsilon.is_some());
        f("sweep", self.sweep.is_some());
        f("grid", self.grid.is_some());
        f("torus", self.torus.is_some());
        f("time", self.time.is_some());
        f("modes", self.modes.is_some());
        f("points", self.points.is_some());
        f("observable", self.observable.is_some());
        f("second_observable", self.second_observable.is_some());
        f("energy_function", self.energy_function.is_some());
        f("corrections", self.corrections.is_some());
        f("packet", self.packet.is_some());
        f("window", self.window.is_some());
        f("moyal", self.moyal.is_some());
        f("field", self.field.is_some());
        f("integrator", self.integrator.is_some());
        f("lattice", self.lattice.is_some());
        f("quadrature", self.quadrature.is_some());
        f("gap_min", self.gap_min.is_some());
        v
    }

    /// Checks field presence and values without building anything expensive.
    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment.name();
        let (required, optional) = self.experiment.fields();
        let present = self.present();
        for r in required {
            if !present.contains(r) {
                return Err(Error::Config(format!("experiment `{exp}` needs field `{r}`")));
            }
        }
        for p in &present {
            if !required.contains(p) && !optional.contains(p) {
                return Err(Error::Config(format!("field `{p}` is not used by experiment `{exp}`")));
            }
        }
        let model = build_model(&self.model)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be positive and finite, got {v}")))
            }
        };
        if let Some(e) = self.epsilon {
            positive("epsilon", e)?;
        }
        if let Some(s) = &self.sweep {
            if s.is_empty() {
                return Err(Error::Config("`sweep` is empty".into()));
            }
            for e in s {
                positive("sweep entry", *e)?;
            }
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config("`sweep` has repeated entries".into()));
            }
        }
        if let Some(g) = &self.grid {
            positive("grid.max_half_width", g.max_half_width)?;
            if g.points < 4 || !g.points.is_power_of_two() {
                return Err(Error::Config(format!("grid.points must be a power of two ≥ 4, got {}", g.points)));
            }
        }
        if let Some(t) = &self.torus {
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(t) = self.time {
            if !t.is_finite() {
                return Err(Error::Config("`time` must be finite".into()));
            }
        }
        if let Some(m) = &self.modes {
            if m.is_empty() {
                return Err(Error::Config("`modes` is empty".into()));
            }
        }
        if let Some(c) = &self.corrections {
            if c.is_empty() {
                return Err(Error::Config("`corrections` is empty".into()));
            }
        }
        if let Some(pts) = &self.points {
            let want = model.coord_count();
            if pts.is_empty() {
                return Err(Error::Config("`points` is empty".into()));
            }
            if let Some(p) = pts.iter().find(|p| p.len() != want) {
                return Err(Error::Config(format!(
                    "points need {want} coordinates (q, p{}) for model `{}`, got {}",
                    if model.is_time_dependent() { ", t" } else { "" },
                    model.name(),
                    p.len()
                )));
            }
        }
        if let Some(sel) = &self.observable {
            build_observable(sel)?;
        }
        if let Some(sel) = &self.second_observable {
            build_observable(sel)?;
        }
        if let Some(sel) = &self.energy_function {
            build_energy_function(sel)?;
        }
        if self.experiment == ExperimentKind::Moyal
            && self.moyal.unwrap_or(MoyalKind::Commutator) != MoyalKind::Triple
            && self.second_observable.is_none()
        {
            return Err(Error::Config("moyal commutator/product needs `second_observable`".into()));
        }
        if let Some(p) = &self.packet {
            if p.spinor.len() != model.fast_dim() || p.spinor.iter().all(|c| *c == 0.0) {
                return Err(Error::Config(format!(
                    "packet.spinor needs {} components, not all zero",
                    model.fast_dim()
                )));
            }
        }
        if let Some(w) = &self.window {
            if !w.cutoff.is_finite() {
                return Err(Error::Config("window.cutoff must be finite".into()));
            }
        }
        if let Some(i) = &self.integrator {
            i.validate()?;
        }
        if let Some(g) = self.gap_min {
            if !(g >= 0.0) {
                return Err(Error::Config(format!("gap_min must be nonnegative, got {g}")));
            }
        }
        Ok(())
    }

    /// The config with every defaultable field filled in, as recorded in manifests.
    pub fn resolved(&self) -> Self {
        let (required, optional) = self.experiment.fields();
        let uses = |f: &str| required.contains(&f) || optional.contains(&f);
        let mut c = self.clone();
        if uses("modes") && c.modes.is_none() {
            c.modes = Some(match self.experiment {
                ExperimentKind::Egorov => vec![FlowMode::CorrectedTruncated, FlowMode::Uncorrected],
                _ => vec![FlowMode::CorrectedTruncated],
            });
        }
        if uses("integrator") && c.integrator.is_none() {
            c.integrator = Some(DEFAULT_INTEGRATOR);
        }
        if uses("lattice") && c.lattice.is_none() {
            c.lattice = Some(LatticeOptions::default());
        }
        if uses("quadrature") && c.quadrature.is_none() {
            c.quadrature = Some(QuadratureOptions::default());
        }
        if uses("corrections") && c.corrections.is_none() {
            c.corrections = Some(vec![Corrections::On, Corrections::Off]);
        }
        if uses("moyal") && c.moyal.is_none() {
            c.moyal = Some(MoyalKind::Commutator);
        }
        if uses("time") && c.time.is_none() {
            c.time = Some(0.0);
        }
        if c.gap_min.is_none() {
            c.gap_min = Some(BandOptions::default().gap_min);
        }
        c
    }

    fn band(&self) -> BandOptions {
        BandOptions { gap_min: self.gap_min.unwrap_or(BandOptions::default().gap_min), ..Default::default() }
    }
}

/// In-memory result of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub csv: String,
    pub summary: Value,
}

/// Failure details recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestError {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl ManifestError {
    pub fn from_error(e: &Error) -> Self {
        let kind = if e.is_numerical_guard() {
            "numerical_guard"
        } else if e.is_validation() {
            "validation"
        } else {
            "failure"
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
            coords: e.location().map(|l| l.coords.clone()),
            time: e.location().and_then(|l| l.time),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: RunConfig,
    pub version: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub summary: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ManifestError>,
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// A sweep table: one row per ε (decreasing), one column per variant.
fn sweep_table(
    cfg: &RunConfig,
    columns: &[String],
    mut eval: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<RunOutput> {
    let mut eps = cfg.sweep.clone().unwrap_or_default();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        rows.push(eval(e)?);
    }
    let mut csv = String::from("epsilon");
    for c in columns {
        write!(csv, ",{c}").unwrap();
    }
    csv.push('\n');
    for (e, row) in eps.iter().zip(&rows) {
        csv.push_str(&fmt(*e));
        for v in row {
            write!(csv, ",{}", fmt(*v)).unwrap();
        }
        csv.push('\n');
    }
    let points = cfg.grid.map_or(0, |g| g.points);
    let t = cfg.time.unwrap_or(0.0);
    let mut fits = serde_json::Map::new();
    for (k, c) in columns.iter().enumerate() {
        let pts: Vec<(f64, f64)> = eps.iter().zip(&rows).map(|(e, r)| (*e, r[k])).collect();
        let entry = match ErrorCurve::new(cfg.experiment.name(), &cfg.model.name, c, t, points, pts) {
            Ok(curve) => match fit_order(&curve) {
                Ok(f) => json!({
                    "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared,
                    "monotone": curve.is_monotone()
                }),
                Err(e) => json!({ "error": e.to_string() }),
            },
            Err(e) => json!({ "error": e.to_string() }),
        };
        fits.insert(c.clone(), entry);
    }
    Ok(RunOutput { csv, summary: json!({ "fits": fits }) })
}

fn mode_name(m: FlowMode) -> &'static str {
    match m {
        FlowMode::CorrectedTruncated => "corrected_truncated",
        FlowMode::CorrectedExact => "corrected_exact",
        FlowMode::Uncorrected => "uncorrected",
    }
}

fn flow_config(cfg: &RunConfig, eps: f64, mode: FlowMode) -> FlowConfig {
    let mut fc = FlowConfig::new(eps, mode).with_integrator(cfg.integrator.unwrap_or(DEFAULT_INTEGRATOR));
    fc.band = cfg.band();
    fc
}

/// Executes a validated config (defaults are resolved internally).
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let cfg = &cfg.resolved();
    let model = build_model(&cfg.model)?;
    let band = cfg.band();
    let setup = |eps: f64| QuantumSetup::new(model.clone(), cfg.grid.unwrap().at(eps)?, band);
    match cfg.experiment {
        ExperimentKind::BandInfo => band_info(cfg, model.as_ref(), &band),
        ExperimentKind::Flow => flow_run(cfg, model.as_ref()),
        ExperimentKind::Egorov => {
            let modes = cfg.modes.clone().unwrap();
            let a = build_observable(cfg.observable.as_ref().unwrap())?;
            let lattice = cfg.lattice.unwrap();
            let t = cfg.time.unwrap();
            let cols: Vec<String> = modes.iter().map(|m| mode_name(*m).to_string()).collect();
            sweep_table(cfg, &cols, |eps| {
                let s = setup(eps)?;
                modes.iter().map(|m| egorov_error_for(&s, a.as_ref(), t, &flow_config(cfg, eps, *m), &lattice)).collect()
            })
        }
        ExperimentKind::Equilibrium => {
            let corr = cfg.corrections.clone().unwrap();
            let a = build_observable(cfg.observable.as_ref().unwrap())?;
            let f = build_energy_function(cfg.energy_function.as_ref().unwrap())?;
            let quad = cfg.quadrature.unwrap();
            let cols: Vec<String> = corr
                .iter()
                .map(|c| match c {
                    Corrections::On => "corrections_on".to_string(),
                    Corrections::Off => "corrections_off".to_string(),
                })
                .collect();
            sweep_table(cfg, &cols, |eps| {
                let s = setup(eps)?;
                corr.iter().map(|c| equilibrium_error(&s, f.as_ref(), a.as_ref(), *c, &quad)).collect()
            })
        }
        ExperimentKind::Wigner => {
            let modes = cfg.modes.clone().unwrap();
            let a = build_observable(cfg.observable.as_ref().unwrap())?;
            let lattice = cfg.lattice.unwrap();
            let t = cfg.time.unwrap();
            let packet = cfg.packet.clone().unwrap();
            let spinor: Vec<C64> = packet.spinor.iter().map(|c| C64::new(*c, 0.0)).collect();
            let cols: Vec<String> = modes.iter().map(|m| mode_name(*m).to_string()).collect();
            sweep_table(cfg, &cols, |eps| {
                let s = setup(eps)?;
                let psi0 = WaveFunction::gaussian(s.grid, packet.q0, packet.p0, eps.sqrt(), &spinor)?;
                let a_op = s.quantize_observable(a.as_ref())?;
                modes
                    .iter()
                    .map(|m| {
                        let pulled = s.pullback(a.as_ref(), t, &flow_config(cfg, eps, *m), &lattice)?;
                        wigner_transport_error(&s, &psi0, &a_op, &pulled, t)
                    })
                    .collect()
            })
        }
        ExperimentKind::Projector => {
            let t = cfg.time.unwrap();
            sweep_table(cfg, &["commutator_norm".to_string()], |eps| {
                Ok(vec![projector_invariance(&setup(eps)?, t, cfg.window.as_ref())?])
            })
        }
        ExperimentKind::Residual => {
            sweep_table(cfg, &["with_m".to_string(), "without_m".to_string()], |eps| {
                let s = setup(eps)?;
                Ok(vec![
                    effective_hamiltonian_residual(&s, true, cfg.window.as_ref())?,
                    effective_hamiltonian_residual(&s, false, cfg.window.as_ref())?,
                ])
            })
        }
        ExperimentKind::Moyal => {
            let kind = cfg.moyal.unwrap();
            let a = build_observable(cfg.observable.as_ref().unwrap())?;
            let b = match &cfg.second_observable {
                Some(sel) => build_observable(sel)?,
                None => a.clone(),
            };
            let col = match kind {
                MoyalKind::Commutator => "commutator_remainder",
                MoyalKind::Product => "product_remainder",
                MoyalKind::Triple => "triple_remainder",
            };
            sweep_table(cfg, &[col.to_string()], |eps| {
                Ok(vec![moyal_error(kind, model.as_ref(), a.as_ref(), b.as_ref(), cfg.grid.unwrap().at(eps)?, &band)?])
            })
        }
        ExperimentKind::Pump => {
            let r = pump(model.as_ref(), cfg.torus.as_ref().unwrap(), &band)?;
            Ok(RunOutput { csv: r.to_csv(), summary: json!({ "pumped_charge": r.charge }) })
        }
        ExperimentKind::Chern => {
            let r = chern_number(model.as_ref(), cfg.torus.as_ref().unwrap(), cfg.time.unwrap(), &band)?;
            let csv = format!(
                "grid_1,grid_2,integer,max_plaquette_flux,raw\n{},{},{},{},{}\n",
                r.grid[0],
                r.grid[1],
                r.integer,
                fmt(r.max_plaquette_flux),
                fmt(r.raw)
            );
            Ok(RunOutput {
                csv,
                summary: json!({ "grid": r.grid, "integer": r.integer, "max_plaquette_flux": r.max_plaquette_flux }),
            })
        }
        ExperimentKind::Piezo => {
            let r = piezo_cancellation(model.as_ref(), cfg.field.unwrap(), cfg.time.unwrap(), cfg.torus.as_ref().unwrap(), &band)?;
            let mut csv = String::from("component,term1,term2\n");
            for i in 0..3 {
                writeln!(csv, "{},{},{}", i + 1, fmt(r.term1[i]), fmt(r.term2[i])).unwrap();
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(RunOutput {
                csv,
                summary: json!({
                    "term1_norm": norm(&r.term1), "term2_norm": norm(&r.term2), "max_divergence": r.max_divergence
                }),
            })
        }
    }
}

fn point_from(model: &dyn SymbolModel, c: &[f64]) -> PhasePoint {
    let n = model.slow_dim();
    PhasePoint::from_coords(&c[..2 * n], model.is_time_dependent().then(|| c[2 * n]))
}

fn band_info(cfg: &RunConfig, model: &dyn SymbolModel, band: &BandOptions) -> Result<RunOutput> {
    let eps = cfg.epsilon.unwrap();
    let n = model.slow_dim();
    let m = model.coord_count();
    let mut csv = String::from("point");
    for i in 1..=n {
        write!(csv, ",q_{i}").unwrap();
    }
    for i in 1..=n {
        write!(csv, ",p_{i}").unwrap();
    }
    if model.is_time_dependent() {
        csv.push_str(",t");
    }
    csv.push_str(",e0,gap,e1,m,h,density");
    for a in 0..m {
        for b in a + 1..m {
            write!(csv, ",omega_{a}_{b}").unwrap();
        }
    }
    csv.push('\n');
    let pts = cfg.points.as_ref().unwrap();
    let rows = exec::try_map_slice(pts, |c| band_data(model, &point_from(model, c), eps, band))?;
    for (k, (c, bd)) in pts.iter().zip(&rows).enumerate() {
        write!(csv, "{k}").unwrap();
        for v in c {
            write!(csv, ",{}", fmt(*v)).unwrap();
        }
        for v in [bd.e0, bd.gap, bd.e1, bd.m, bd.h, bd.liouville_density] {
            write!(csv, ",{}", fmt(v)).unwrap();
        }
        for a in 0..m {
            for b in a + 1..m {
                write!(csv, ",{}", fmt(bd.omega.get(a, b))).unwrap();
            }
        }
        csv.push('\n');
    }
    Ok(RunOutput { csv, summary: json!({ "points": pts.len() }) })
}

fn flow_run(cfg: &RunConfig, model: &dyn SymbolModel) -> Result<RunOutput> {
    let eps = cfg.epsilon.unwrap();
    let t1 = cfg.time.unwrap();
    let mut csv = String::new();
    let mut finals = Vec::new();
    for (k, c) in cfg.points.as_ref().unwrap().iter().enumerate() {
        let z0 = point_from(model, c);
        let t0 = z0.t.unwrap_or(0.0);
        for mode in cfg.modes.as_ref().unwrap() {
            let traj = integrate(model, &z0, t0, t0 + t1, &flow_config(cfg, eps, *mode))?;
            let body = traj.to_csv();
            let (header, rows) = body.split_once('\n').unwrap();
            if csv.is_empty() {
                writeln!(csv, "point,mode,{header}").unwrap();
            }
            for row in rows.lines() {
                writeln!(csv, "{k},{},{row}", mode_name(*mode)).unwrap();
            }
            finals.push(json!({ "point": k, "mode": mode_name(*mode), "final": traj.last().coords() }));
        }
    }
    Ok(RunOutput { csv, summary: json!({ "final_points": finals }) })
}

/// Result of [`run_to_dir`].
#[derive(Debug)]
pub struct RunReport {
    pub manifest: Manifest,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs `cfg`, writing `results.csv` (on success) and `manifest.json` (always) into `dir`.
/// On failure the manifest records the error and the error is returned.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> std::result::Result<RunReport, (Error, Option<PathBuf>)> {
    cfg.validate().map_err(|e| (e, None))?;
    std::fs::create_dir_all(dir).map_err(|e| (e.into(), None))?;
    let start = Instant::now();
    let outcome = execute(cfg);
    let mut manifest = Manifest {
        config: cfg.resolved(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: exec::worker_count(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        summary: Value::Null,
        error: None,
    };
    let results_path = dir.join("results.csv");
    let manifest_path = dir.join("manifest.json");
    let write_manifest = |m: &Manifest| -> Result<()> {
        std::fs::write(&manifest_path, serde_json::to_string_pretty(m)? + "\n")?;
        Ok(())
    };
    match outcome {
        Ok(out) => {
            std::fs::write(&results_path, &out.csv).map_err(|e| (e.into(), None))?;
            manifest.summary = out.summary;
            write_manifest(&manifest).map_err(|e| (e, None))?;
            Ok(RunReport { manifest, results_path, manifest_path })
        }
        Err(e) => {
            manifest.error = Some(ManifestError::from_error(&e));
            let written = write_manifest(&manifest).ok().map(|_| manifest_path.clone());
            Err((e, written))
        }
    }
}

/// Loads a config from a file and resolves its output directory
/// (`override_dir` wins over the config's `output`).
pub fn output_dir(cfg: &RunConfig, override_dir: Option<&Path>) -> Result<PathBuf> {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: set `output` in the config or pass --out".into()))
}

/// The built-in Egorov sweep (avoided crossing, Gaussian observable, t = 1, N = 1024).
pub fn flagship_config() -> RunConfig {
    let mut c = RunConfig::new(ExperimentKind::Egorov, ModelSpec::new("avoided_crossing"));
    c.sweep = Some(vec![0.125, 0.0625, 0.03125, 0.015625]);
    c.grid = Some(GridSpec { points: 1024, max_half_width: 8.0 });
    c.time = Some(1.0);
    c.observable = Some(Selector::new("gaussian").with("q0", 1.5).with("p0", 0.0).with("width", 0.7));
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pump_config() -> RunConfig {
        let mut c = RunConfig::new(ExperimentKind::Pump, ModelSpec::new("rice_mele"));
        c.torus = Some(TorusGrid { kappa_points: 16, time_points: 16 });
        c
    }

    #[test]
    fn unknown_keys_and_models_are_rejected() {
        let e = RunConfig::from_json(r#"{"experiment":"pump","model":{"name":"rice_mele"},"torus":{"kappa_points":16,"time_points":16},"bogus":1}"#)
            .unwrap_err();
        assert!(e.is_validation() && e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_json(r#"{"experiment":"pump","model":{"name":"nope"},"torus":{"kappa_points":16,"time_points":16}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("rice_mele") && e.to_string().contains("avoided_crossing"));
    }

    #[test]
    fn required_and_unused_fields() {
        let mut c = pump_config();
        c.torus = None;
        assert!(c.validate().unwrap_err().to_string().contains("torus"));
        let mut c = pump_config();
        c.epsilon = Some(0.1);
        assert!(c.validate().unwrap_err().to_string().contains("not used"));
        let mut c = flagship_config();
        c.sweep = None;
        assert!(c.validate().unwrap_err().to_string().contains("sweep"));
        flagship_config().validate().unwrap();
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in EXPERIMENTS {
            assert_eq!(ExperimentKind::parse(e.name()), Some(e));
            let s = serde_json::to_string(&e).unwrap();
            assert_eq!(s, format!("\"{}\"", e.name()));
        }
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_to_dir(&pump_config(), dir.path()).unwrap();
        let text = std::fs::read_to_string(&rep.manifest_path).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, pump_config().resolved());
        let first = std::fs::read(&rep.results_path).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let rep2 = run_to_dir(&back, dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(&rep2.results_path).unwrap());
    }

    #[test]
    fn guard_failures_are_recorded() {
        let mut c = RunConfig::new(ExperimentKind::BandInfo, ModelSpec::new("avoided_crossing"));
        c.epsilon = Some(0.1);
        c.points = Some(vec![vec![0.0, 0.0]]);
        c.gap_min = Some(5.0);
        let dir = tempfile::tempdir().unwrap();
        let (e, path) = run_to_dir(&c, dir.path()).unwrap_err();
        assert!(e.is_numerical_guard());
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path.unwrap()).unwrap()).unwrap();
        let err = m.error.unwrap();
        assert_eq!(err.kind, "numerical_guard");
        assert_eq!(err.coords, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn band_info_rows() {
        let mut c = RunConfig::new(ExperimentKind::BandInfo, ModelSpec::new("avoided_crossing"));
        c.epsilon = Some(0.1);
        c.points = Some(vec![vec![0.0, 0.0], vec![1.0, -0.5]]);
        let out = execute(&c).unwrap();
        let lines: Vec<&str> = out.csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("point,q_1,p_1,e0,gap"));
        // Ω_qp(0, 0) = −1/2 for the default avoided crossing.
        let omega: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
        assert!((omega + 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_sweep_reports_fits() {
        let mut c = RunConfig::new(ExperimentKind::Moyal, ModelSpec::new("avoided_crossing"));
        c.sweep = Some(vec![0.25, 0.125, 0.0625]);
        c.grid = Some(GridSpec { points: 128, max_half_width: 8.0 });
        c.observable = Some(Selector::new("gaussian").with("q0", 0.5).with("width", 0.8));
        c.second_observable = Some(Selector::new("gaussian").with("p0", -0.4).with("width", 0.9));
        let out = execute(&c).unwrap();
        assert_eq!(out.csv.lines().count(), 4);
        let slope = out.summary["fits"]["commutator_remainder"]["slope"].as_f64().unwrap();
        assert!(slope > 2.0, "{slope}");
    }
}
