//! Pointwise algebraic identities of the band calculus, evaluated at random
//! points of a model's working region.

use crate::band::{
    band_point, energy_correction_pair, liouville_density_pair, projector_jet, subprincipal_projector_from,
    BandOptions, BandPoint,
};
use crate::bloch::{mixed_curvature_from, WeakField};
use crate::error::Result;
use crate::linalg::{CMatrix, I};
use crate::symbols::{poisson_bracket, PhasePoint, SymbolModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

/// Half-width of the sampling box along non-periodic coordinates.
pub const SAMPLE_HALF_WIDTH: f64 = 2.5;

/// Uniform points: periodic coordinates over one period, the rest over
/// `[−SAMPLE_HALF_WIDTH, SAMPLE_HALF_WIDTH]`.
pub fn sample_points(model: &dyn SymbolModel, count: usize, seed: u64) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods = model.periods();
    let n = model.slow_dim();
    (0..count)
        .map(|_| {
            let c: Vec<f64> = periods
                .iter()
                .map(|p| match p {
                    Some(p) => rng.gen_range(0.0..*p),
                    None => rng.gen_range(-SAMPLE_HALF_WIDTH..SAMPLE_HALF_WIDTH),
                })
                .collect();
            let t = model.is_time_dependent().then(|| c[2 * n]);
            PhasePoint::from_coords(&c[..2 * n], t)
        })
        .collect()
}

/// Worst residual of each identity over a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IdentityReport {
    pub model: String,
    pub points: usize,
    /// `|tr{A,A}|` for A = H₀ and A = π₀.
    pub bracket_trace: f64,
    /// `π₀(∂π₀)π₀` and `π₀⊥(∂π₀)π₀⊥`.
    pub off_diagonal: f64,
    /// Difference of the two M formulas.
    pub m_formulas: f64,
    /// Difference of the two order-ε Liouville density coefficients.
    pub density_formulas: f64,
    /// `π₀π₁π₀ − (i/2)π₀{π₀,π₀}π₀`.
    pub pi1_block: f64,
    /// Derived weak-field curvature blocks against direct products (Bloch models).
    pub curvature_relations: f64,
    /// Largest change of any band output under a random eigenvector phase.
    pub gauge: f64,
}

/// Tolerances per identity, in field order.
pub const IDENTITY_TOLERANCES: [(&str, f64); 7] = [
    ("bracket_trace", 1e-10),
    ("off_diagonal", 1e-9),
    ("m_formulas", 1e-9),
    ("density_formulas", 1e-9),
    ("pi1_block", 1e-10),
    ("curvature_relations", 1e-13),
    ("gauge", 1e-12),
];

impl IdentityReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.bracket_trace,
            self.off_diagonal,
            self.m_formulas,
            self.density_formulas,
            self.pi1_block,
            self.curvature_relations,
            self.gauge,
        ]
    }

    /// Names of the identities exceeding their tolerance.
    pub fn failures(&self) -> Vec<&'static str> {
        IDENTITY_TOLERANCES
            .iter()
            .zip(self.values())
            .filter(|((_, tol), v)| !(*v <= *tol))
            .map(|((name, _), _)| *name)
            .collect()
    }
}

fn is_bloch(model: &dyn SymbolModel) -> bool {
    let n = model.slow_dim();
    let periods = model.periods();
    (0..n).all(|i| periods.get(n + i).copied().flatten().is_some_and(|p| (p - 2.0 * PI).abs() < 1e-12))
}

fn outputs_distance(a: &BandPoint, b: &BandPoint, pi1a: &CMatrix, pi1b: &CMatrix) -> f64 {
    let mut d = (a.e0 - b.e0).abs().max((a.m - b.m).abs()).max((a.e1 - b.e1).abs());
    d = d.max((&a.pi0 - &b.pi0).max_abs()).max((pi1a - pi1b).max_abs());
    for (x, y) in a.dpi0.iter().zip(&b.dpi0) {
        d = d.max((x - y).max_abs());
    }
    for (x, y) in a.omega.to_dense().iter().zip(b.omega.to_dense()) {
        d = d.max((x - y).abs());
    }
    d
}

fn curvature_relation_residual(bp: &BandPoint, rng: &mut ChaCha8Rng) -> f64 {
    let curv = mixed_curvature_from(bp);
    let m = curv.m();
    let field = match m {
        3 => WeakField::from_vector([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
        2 => WeakField::planar(rng.gen_range(-1.0..1.0)),
        _ => WeakField::zero(m),
    };
    let (pq, qq) = (curv.pq(&field), curv.qq(&field));
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let mut ob = 0.0;
            let mut bob = 0.0;
            for k in 0..m {
                ob += curv.pp[i * m + k] * field.get(k, j);
                for l in 0..m {
                    bob += field.get(i, k) * curv.pp[k * m + l] * field.get(l, j);
                }
            }
            worst = worst.max((pq[i * m + j] - 0.5 * ob).abs()).max((qq[i * m + j] + 0.25 * bob).abs());
        }
    }
    worst
}

/// Evaluates every identity at `points`; the gauge phases come from `seed`.
pub fn identity_suite(
    model: &dyn SymbolModel,
    points: &[PhasePoint],
    seed: u64,
    opts: &BandOptions,
) -> Result<IdentityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.slow_dim();
    let bloch = is_bloch(model);
    let mut r = IdentityReport { model: model.name().to_string(), points: points.len(), ..Default::default() };
    for z in points {
        let bp = band_point(model, z, opts)?;
        let pi0 = &bp.pi0;
        let perp = &CMatrix::identity(pi0.dim()) - pi0;
        let pj = projector_jet(pi0, &bp.dpi0, n);
        let hb = poisson_bracket(&bp.jet, &bp.jet)?;
        let pb = poisson_bracket(&pj, &pj)?;
        r.bracket_trace = r.bracket_trace.max(hb.trace().norm()).max(pb.trace().norm());
        for x in &bp.dpi0 {
            let a = pi0.matmul(x).matmul(pi0).max_abs();
            let b = perp.matmul(x).matmul(&perp).max_abs();
            r.off_diagonal = r.off_diagonal.max(a).max(b);
        }
        let (ma, mb) = energy_correction_pair(&bp.jet, pi0, &bp.dpi0)?;
        r.m_formulas = r.m_formulas.max((ma - mb).norm());
        let (rho, alt) = liouville_density_pair(pi0, &bp.dpi0, &bp.omega, 1.0)?;
        r.density_formulas = r.density_formulas.max((alt - rho).norm());
        let sp = subprincipal_projector_from(&bp)?;
        let want = pi0.matmul(&pb).matmul(pi0).scale(0.5 * I);
        r.pi1_block = r.pi1_block.max((&pi0.matmul(&sp.pi1).matmul(pi0) - &want).max_abs());
        if bloch {
            r.curvature_relations = r.curvature_relations.max(curvature_relation_residual(&bp, &mut rng));
        }
        let phased = BandOptions { gauge_phase: rng.gen_range(0.0..2.0 * PI), ..*opts };
        let bq = band_point(model, z, &phased)?;
        let sq = subprincipal_projector_from(&bq)?;
        r.gauge = r.gauge.max(outputs_distance(&bp, &bq, &sp.pi1, &sq.pi1));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, symbol_catalog, ModelSpec};

    #[test]
    fn samples_are_reproducible_and_respect_periods() {
        let m = build_model(&ModelSpec::new("rice_mele")).unwrap();
        let a = sample_points(m.as_ref(), 20, 7);
        assert_eq!(a, sample_points(m.as_ref(), 20, 7));
        assert!(a.iter().all(|z| (0.0..2.0 * PI).contains(&z.p[0]) && z.t.is_some()));
    }

    #[test]
    fn registry_models_satisfy_identities() {
        for info in symbol_catalog() {
            let m = build_model(&ModelSpec::new(info.name)).unwrap();
            let pts = sample_points(m.as_ref(), 10, 1);
            let r = identity_suite(m.as_ref(), &pts, 2, &BandOptions::default()).unwrap();
            assert!(r.failures().is_empty(), "{r:?}");
        }
    }
}
