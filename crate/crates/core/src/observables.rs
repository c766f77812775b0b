//! Scalar phase-space observables and energy cut-off functions.

use crate::error::{Error, Result};
use crate::models::{resolve_params, ModelInfo};
use crate::symbols::{fd_step, PhasePoint, SymbolJet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Scalar symbol a(q, p).
pub trait Observable: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, z: &PhasePoint) -> f64;
    /// Gradient `(∂_q a, ∂_p a)`, by central differences unless overridden.
    fn gradient(&self, z: &PhasePoint) -> Vec<f64> {
        let n = z.n();
        (0..2 * n)
            .map(|a| {
                let h = fd_step(1.0);
                (self.value(&z.shifted(a, h)) - self.value(&z.shifted(a, -h))) / (2.0 * h)
            })
            .collect()
    }
    /// Disk `(center coords, radius)` outside which |a| < 1e-16·max|a|.
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
    fn constant_value(&self) -> Option<f64> {
        None
    }
    /// Jet of `a·1_d`.
    fn jet(&self, z: &PhasePoint, d: usize) -> SymbolJet {
        let g = self.gradient(z);
        let n = z.n();
        SymbolJet::scalar(self.value(z), &g[..n], &g[n..], d)
    }
}

/// `A·exp(−|z − z₀|²/(2w²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl Gaussian {
    pub fn new(q0: f64, p0: f64, width: f64) -> Self {
        Self {
            center: vec![q0, p0],
            width,
            amplitude: 1.0,
        }
    }
}

impl Observable for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn value(&self, z: &PhasePoint) -> f64 {
        let c = z.coords();
        let r2: f64 = c.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
    fn gradient(&self, z: &PhasePoint) -> Vec<f64> {
        let v = self.value(z);
        let w2 = self.width * self.width;
        z.coords()
            .iter()
            .zip(&self.center)
            .map(|(a, b)| -(a - b) / w2 * v)
            .collect()
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), self.width * (2.0 * 1e16f64.ln()).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn value(&self, _z: &PhasePoint) -> f64 {
        self.0
    }
    fn gradient(&self, z: &PhasePoint) -> Vec<f64> {
        vec![0.0; 2 * z.n()]
    }
    fn constant_value(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// Coordinate function `z_α` (α in q, p order).
#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate(pub usize);

impl Observable for Coordinate {
    fn name(&self) -> &str {
        "coordinate"
    }
    fn value(&self, z: &PhasePoint) -> f64 {
        z.coord(self.0)
    }
    fn gradient(&self, z: &PhasePoint) -> Vec<f64> {
        let mut g = vec![0.0; 2 * z.n()];
        g[self.0] = 1.0;
        g
    }
}

/// Observable applied through closures.
pub struct FnObservable<F: Fn(&PhasePoint) -> f64 + Send + Sync>(pub F);

impl<F: Fn(&PhasePoint) -> f64 + Send + Sync> Observable for FnObservable<F> {
    fn name(&self) -> &str {
        "function"
    }
    fn value(&self, z: &PhasePoint) -> f64 {
        (self.0)(z)
    }
}

/// Real function of energy used in spectral calculus.
pub trait EnergyFunction: Send + Sync {
    fn value(&self, e: f64) -> f64;
}

/// Smooth bump `exp(1 − 1/(1 − u²))` on `[lo, hi]`, `u` the rescaled energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyFunction for Bump {
    fn value(&self, e: f64) -> f64 {
        let u = (2.0 * e - self.lo - self.hi) / (self.hi - self.lo);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Zero;

impl EnergyFunction for Zero {
    fn value(&self, _e: f64) -> f64 {
        0.0
    }
}

/// Registry selector for observables and energy functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Selector {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

pub fn observable_catalog() -> Vec<ModelInfo> {
    vec![
        ModelInfo {
            name: "gaussian",
            kind: "observable",
            summary: "amplitude exp(-((q - q0)^2 + (p - p0)^2) / (2 width^2))",
            params: vec![("q0", 0.0), ("p0", 0.0), ("width", 1.0), ("amplitude", 1.0)],
        },
        ModelInfo {
            name: "constant",
            kind: "observable",
            summary: "a = value",
            params: vec![("value", 1.0)],
        },
        ModelInfo {
            name: "position",
            kind: "observable",
            summary: "a = q",
            params: vec![],
        },
        ModelInfo {
            name: "momentum",
            kind: "observable",
            summary: "a = p",
            params: vec![],
        },
    ]
}

pub fn energy_function_catalog() -> Vec<ModelInfo> {
    vec![
        ModelInfo {
            name: "bump",
            kind: "energy function",
            summary: "smooth compactly supported bump on [lo, hi]",
            params: vec![("lo", -1.0), ("hi", 1.0)],
        },
        ModelInfo {
            name: "zero",
            kind: "energy function",
            summary: "f = 0",
            params: vec![],
        },
    ]
}

fn lookup<'a>(catalog: &'a [ModelInfo], name: &str, what: &str) -> Result<&'a ModelInfo> {
    catalog.iter().find(|m| m.name == name).ok_or_else(|| {
        let names: Vec<&str> = catalog.iter().map(|m| m.name).collect();
        Error::Config(format!("unknown {what} `{name}`; registered: {}", names.join(", ")))
    })
}

pub fn build_observable(sel: &Selector) -> Result<Arc<dyn Observable>> {
    let cat = observable_catalog();
    let info = lookup(&cat, &sel.name, "observable")?;
    let p = resolve_params(info, &sel.params)?;
    Ok(match info.name {
        "gaussian" => {
            if p["width"] <= 0.0 {
                return Err(Error::Config("gaussian: width must be positive".into()));
            }
            Arc::new(Gaussian {
                center: vec![p["q0"], p["p0"]],
                width: p["width"],
                amplitude: p["amplitude"],
            })
        }
        "constant" => Arc::new(Constant(p["value"])),
        "position" => Arc::new(Coordinate(0)),
        "momentum" => Arc::new(Coordinate(1)),
        _ => unreachable!(),
    })
}

pub fn build_energy_function(sel: &Selector) -> Result<Arc<dyn EnergyFunction>> {
    let cat = energy_function_catalog();
    let info = lookup(&cat, &sel.name, "energy function")?;
    let p = resolve_params(info, &sel.params)?;
    Ok(match info.name {
        "bump" => {
            if p["hi"] <= p["lo"] {
                return Err(Error::Config("bump: need lo < hi".into()));
            }
            Arc::new(Bump { lo: p["lo"], hi: p["hi"] })
        }
        "zero" => Arc::new(Zero),
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_gradient_matches_differences() {
        let g = Gaussian::new(0.5, -0.2, 0.7);
        let z = PhasePoint::qp(0.9, 0.3);
        let an = g.gradient(&z);
        let h = 1e-6;
        let fq = (g.value(&z.shifted(0, h)) - g.value(&z.shifted(0, -h))) / (2.0 * h);
        let fp = (g.value(&z.shifted(1, h)) - g.value(&z.shifted(1, -h))) / (2.0 * h);
        assert!((an[0] - fq).abs() < 1e-9 && (an[1] - fp).abs() < 1e-9);
        let (c, r) = g.support().unwrap();
        let edge = PhasePoint::qp(c[0] + r, c[1]);
        assert!(g.value(&edge) <= 1.0001e-16);
    }

    #[test]
    fn bump_is_compact_and_peaks_at_midpoint() {
        let b = Bump { lo: -1.5, hi: 1.0 };
        assert_eq!(b.value(-1.5), 0.0);
        assert_eq!(b.value(1.2), 0.0);
        assert_eq!(b.value(-0.25), 1.0);
    }

    #[test]
    fn registry_rejects_unknown_entries() {
        assert!(build_observable(&Selector::new("nope")).is_err());
        assert!(build_observable(&Selector::new("gaussian").with("sigma", 1.0)).is_err());
        assert!(build_energy_function(&Selector::new("bump").with("lo", 2.0).with("hi", 1.0)).is_err());
    }
}
