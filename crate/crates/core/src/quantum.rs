//! Exact reference solver on a periodic position grid (one slow dimension).
//!
//! Symbols are sampled on the midpoint lattice `x_s = x_min + sΔx/2`,
//! `s ∈ [0, 2N)`, times the momentum grid. The Weyl kernel of the entry
//! `(j, l)` is taken at the torus midpoint of `x_j` and `x_l`: with the
//! wrapped displacement `n = j − l ∈ [−N/2, N/2)` the midpoint index is
//! `s = 2l + n (mod 2N)`. Near-diagonal entries coincide with the plain
//! average `(x_j + x_l)/2`; far entries stay Hermitian instead of picking up
//! a spurious midpoint on the other side of the torus.

use crate::band::{band_point, subprincipal_projector_from, BandOptions};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::CMatrix;
use crate::symbols::{principal_checked, PhasePoint, SymbolModel};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

const HERMITIAN_TOLERANCE: f64 = 1e-10;
const RECONSTRUCTION_TOLERANCE: f64 = 1e-9;

/// Uniform periodic grid on `[x_min, x_max)` with N points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    pub epsilon: f64,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, points: usize, epsilon: f64) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidInput(format!("empty grid interval [{x_min}, {x_max}]")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidInput(format!("grid size {points} is not a power of two ≥ 4")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { x_min, x_max, points, epsilon })
    }

    /// Symmetric grid whose half-width equals the momentum cut-off
    /// `πεN/L`, capped at `max_half_width`.
    pub fn balanced(max_half_width: f64, points: usize, epsilon: f64) -> Result<Self> {
        let half = (PI * epsilon * points as f64 / 2.0).sqrt().min(max_half_width);
        Self::new(-half, half, points, epsilon)
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.points as f64
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI * self.epsilon / self.length()
    }

    pub fn p_max(&self) -> f64 {
        self.dp() * (self.points / 2) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    /// Midpoint lattice coordinate, `s ∈ [0, 2N)`.
    pub fn midpoint(&self, s: usize) -> f64 {
        self.x_min + s as f64 * 0.5 * self.dx()
    }

    /// Momentum of FFT index `m ∈ [0, N)` (k = m, or m − N above N/2).
    pub fn momentum(&self, m: usize) -> f64 {
        self.dp() * self.wave_number(m) as f64
    }

    pub fn wave_number(&self, m: usize) -> i64 {
        let n = self.points as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x(j)).collect()
    }

    /// Momenta in FFT order.
    pub fn momenta(&self) -> Vec<f64> {
        (0..self.points).map(|m| self.momentum(m)).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..2 * self.points).map(|s| self.midpoint(s)).collect()
    }

    /// Phase-space weight of one midpoint-lattice cell, `(Δx/2)Δp/(2πε) = 1/(2N)`.
    pub fn cell_weight(&self) -> f64 {
        0.5 / self.points as f64
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// Vector-valued wave function, fast index fastest.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    pub grid: Grid,
    pub d: usize,
    pub values: Vec<C64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, d: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.points * d {
            return Err(Error::DimensionMismatch {
                context: "wave function",
                expected: grid.points * d,
                found: values.len(),
            });
        }
        Ok(Self { grid, d, values })
    }

    pub fn from_fn(grid: Grid, d: usize, f: impl Fn(f64) -> Vec<C64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.points * d);
        for j in 0..grid.points {
            let v = f(grid.x(j));
            if v.len() != d {
                return Err(Error::DimensionMismatch { context: "wave function", expected: d, found: v.len() });
            }
            values.extend(v);
        }
        Self::new(grid, d, values)
    }

    /// `exp(−(x−q₀)²/(2w²) + ip₀x/ε)·spinor`, normalized.
    pub fn gaussian(grid: Grid, q0: f64, p0: f64, width: f64, spinor: &[C64]) -> Result<Self> {
        let eps = grid.epsilon;
        let psi = Self::from_fn(grid, spinor.len(), |x| {
            let env = (-(x - q0).powi(2) / (2.0 * width * width)).exp();
            let phase = C64::from_polar(env, p0 * x / eps);
            spinor.iter().map(|c| c * phase).collect()
        })?;
        psi.normalized()
    }

    pub fn at(&self, j: usize, a: usize) -> C64 {
        self.values[j * self.d + a]
    }

    pub fn inner(&self, other: &WaveFunction) -> Result<C64> {
        self.grid.check_same(&other.grid)?;
        let s: C64 = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.dx())
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()).sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("cannot normalize a zero or non-finite state".into()));
        }
        self.values.iter_mut().for_each(|z| *z /= n);
        Ok(self)
    }
}

/// Symbol values on the midpoint lattice, layout `[s][m][a][b]`.
#[derive(Clone, Debug)]
pub struct SymbolSamples {
    pub grid: Grid,
    pub d: usize,
    pub data: Vec<C64>,
}

impl SymbolSamples {
    pub fn from_fn<F>(grid: Grid, d: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Result<CMatrix> + Sync + Send,
    {
        let n = grid.points;
        let rows = exec::try_map_range(2 * n, |s| {
            let x = grid.midpoint(s);
            let mut row = Vec::with_capacity(n * d * d);
            for m in 0..n {
                let v = f(x, grid.momentum(m))?;
                if v.dim() != d {
                    return Err(Error::DimensionMismatch { context: "symbol sample", expected: d, found: v.dim() });
                }
                row.extend_from_slice(v.as_slice());
            }
            Ok(row)
        })?;
        Ok(Self { grid, d, data: rows.concat() })
    }

    /// Scalar symbol times the d×d identity.
    pub fn scalar<F>(grid: Grid, d: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        let values = scalar_lattice(grid, f);
        Self::from_scalar_values(grid, d, &values)
    }

    /// Scalar lattice values (layout `[s][m]`) times the identity.
    pub fn from_scalar_values(grid: Grid, d: usize, values: &[f64]) -> Self {
        let mut data = vec![C64::default(); values.len() * d * d];
        for (i, v) in values.iter().enumerate() {
            for a in 0..d {
                data[i * d * d + a * d + a] = C64::new(*v, 0.0);
            }
        }
        Self { grid, d, data }
    }

    /// Principal symbol `H₀` of a model.
    pub fn principal(model: &dyn SymbolModel, grid: Grid) -> Result<Self> {
        check_model(model)?;
        Self::from_fn(grid, model.fast_dim(), |x, p| principal_checked(model, &PhasePoint::qp(x, p)))
    }

    /// Full symbol `H₀ + εH₁`.
    pub fn hamiltonian(model: &dyn SymbolModel, grid: Grid) -> Result<Self> {
        check_model(model)?;
        let eps = grid.epsilon;
        Self::from_fn(grid, model.fast_dim(), |x, p| {
            let z = PhasePoint::qp(x, p);
            let mut h = principal_checked(model, &z)?;
            if let Some(h1) = model.subprincipal(&z) {
                h.axpy(C64::new(eps, 0.0), &h1);
            }
            Ok(h)
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.d * self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, s: usize, m: usize) -> CMatrix {
        let dd = self.d * self.d;
        let i = (s * self.grid.points + m) * dd;
        CMatrix::from_slice(self.d, &self.data[i..i + dd])
    }

    /// Pointwise product `A·B` of two sampled symbols.
    pub fn product(&self, other: &SymbolSamples) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let d = self.d;
        let dd = d * d;
        let mut data = vec![C64::default(); self.data.len()];
        for (i, out) in data.chunks_mut(dd).enumerate() {
            let a = &self.data[i * dd..(i + 1) * dd];
            let b = &other.data[i * dd..(i + 1) * dd];
            for r in 0..d {
                for c in 0..d {
                    out[r * d + c] = (0..d).map(|k| a[r * d + k] * b[k * d + c]).sum();
                }
            }
        }
        Ok(Self { grid: self.grid, d, data })
    }

    /// Largest `|A − A†|` over the lattice, relative to `max(1, max|A|)`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.d;
        let mut res: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for blk in self.data.chunks(d * d) {
            for a in 0..d {
                for b in 0..d {
                    scale = scale.max(blk[a * d + b].norm());
                    res = res.max((blk[a * d + b] - blk[b * d + a].conj()).norm());
                }
            }
        }
        res / scale
    }
}

fn check_model(model: &dyn SymbolModel) -> Result<()> {
    if model.slow_dim() != 1 {
        return Err(Error::InvalidInput(format!(
            "the grid reference supports one slow dimension, model '{}' has {}",
            model.name(),
            model.slow_dim()
        )));
    }
    if model.is_time_dependent() {
        return Err(Error::InvalidInput(format!(
            "the grid reference propagates autonomous Hamiltonians only, model '{}' is time dependent",
            model.name()
        )));
    }
    Ok(())
}

/// Evaluates `f` on the midpoint lattice, layout `[s][m]`.
pub fn scalar_lattice<F>(grid: Grid, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    let n = grid.points;
    exec::map_range(2 * n, |s| {
        let x = grid.midpoint(s);
        (0..n).map(|m| f(x, grid.momentum(m))).collect::<Vec<_>>()
    })
    .concat()
}

/// Dense operator on `L²(grid) ⊗ ℂ^d`; row/column index `j·d + a`.
#[derive(Clone, Debug)]
pub struct QuantumOperator {
    pub grid: Grid,
    pub d: usize,
    pub matrix: Mat<C64>,
}

impl QuantumOperator {
    pub fn identity(grid: Grid, d: usize) -> Self {
        let n = grid.points * d;
        Self { grid, d, matrix: Mat::identity(n, n) }
    }

    pub fn from_matrix(grid: Grid, d: usize, matrix: Mat<C64>) -> Result<Self> {
        let n = grid.points * d;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { context: "operator", expected: n, found: matrix.nrows() });
        }
        Ok(Self { grid, d, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self { grid: self.grid, d: self.d, matrix: self.matrix.adjoint().to_owned() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self { grid: self.grid, d: self.d, matrix: &self.matrix * &other.matrix })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self { grid: self.grid, d: self.d, matrix: &self.matrix + &other.matrix })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self { grid: self.grid, d: self.d, matrix: &self.matrix - &other.matrix })
    }

    pub fn scale(&self, c: C64) -> Self {
        let m = &self.matrix;
        Self { grid: self.grid, d: self.d, matrix: Mat::from_fn(m.nrows(), m.ncols(), |i, j| c * m[(i, j)]) }
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn apply(&self, psi: &WaveFunction) -> Result<WaveFunction> {
        self.grid.check_same(&psi.grid)?;
        WaveFunction::new(self.grid, self.d, matvec(self.matrix.as_ref(), &psi.values))
    }

    /// `⟨φ, Âψ⟩` with the grid measure.
    pub fn expectation(&self, phi: &WaveFunction, psi: &WaveFunction) -> Result<C64> {
        phi.inner(&self.apply(psi)?)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(self.matrix.as_ref())
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let m = &self.matrix;
        let n = m.nrows();
        let mut res: f64 = 0.0;
        for j in 0..n {
            for i in j..n {
                res = res.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        res / self.max_abs().max(1.0)
    }

    /// `(Â + Â†)/2`.
    pub fn hermitian_part(&self) -> Self {
        let m = &self.matrix;
        let matrix = Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
        Self { grid: self.grid, d: self.d, matrix }
    }

    pub fn norm(&self) -> f64 {
        operator_norm(self.matrix.as_ref())
    }
}

pub(crate) fn max_abs(m: MatRef<'_, C64>) -> f64 {
    let mut r: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            r = r.max(m[(i, j)].norm());
        }
    }
    r
}

pub(crate) fn matvec(m: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::default(); m.nrows()];
    for (j, xj) in x.iter().enumerate() {
        if *xj == C64::default() {
            continue;
        }
        let col = m.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

pub(crate) fn adjoint_matvec(m: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            x.iter().enumerate().map(|(i, xi)| col[i].conj() * xi).sum()
        })
        .collect()
}

/// Discrete Weyl quantization of sampled symbols.
///
/// Entry `(j,a),(l,b)` is `(1/N) Σ_k [A(x_s, p_k)]_{ab} e^{2πik n/N}` with the
/// wrapped displacement `n` and torus midpoint `s` (see module docs); the
/// entries with `n = −N/2` average the two midpoints that tie. For
/// Hermitian-valued samples the result is checked for Hermiticity and
/// symmetrized.
pub fn weyl_quantize(samples: &SymbolSamples) -> Result<QuantumOperator> {
    let grid = samples.grid;
    let n = grid.points;
    let d = samples.d;
    let dd = d * d;
    // Kernel K_s(n) stored at index m = n mod N, same layout as the samples.
    let mut kernel = samples.data.clone();
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let inv_n = 1.0 / n as f64;
    exec::for_each_chunk_mut(&mut kernel, n * dd, |_, row| {
        let mut buf = vec![C64::default(); n];
        for ab in 0..dd {
            for m in 0..n {
                buf[m] = row[m * dd + ab];
            }
            fft.process(&mut buf);
            for m in 0..n {
                row[m * dd + ab] = buf[m] * inv_n;
            }
        }
    });
    let half = n / 2;
    let nd = n * d;
    let mut data = vec![C64::default(); nd * nd];
    // Column (l, b) of the column-major matrix.
    exec::for_each_chunk_mut(&mut data, nd, |col, out| {
        let (l, b) = (col / d, col % d);
        for j in 0..n {
            let disp = (j + n - l) % n;
            let k_at = |s: usize, a: usize| kernel[(s * n + disp) * dd + a * d + b];
            if disp == half {
                let s1 = (2 * l + 2 * n - half) % (2 * n);
                let s2 = (s1 + n) % (2 * n);
                for a in 0..d {
                    out[j * d + a] = 0.5 * (k_at(s1, a) + k_at(s2, a));
                }
            } else {
                let signed = if disp < half { disp as i64 } else { disp as i64 - n as i64 };
                let s = (2 * l as i64 + signed).rem_euclid(2 * n as i64) as usize;
                for a in 0..d {
                    out[j * d + a] = k_at(s, a);
                }
            }
        }
    });
    let matrix = MatRef::from_column_major_slice(&data, nd, nd).to_owned();
    let op = QuantumOperator { grid, d, matrix };
    if samples.hermiticity_residual() <= 1e-12 {
        let residual = op.hermiticity_residual();
        if residual > HERMITIAN_TOLERANCE {
            return Err(Error::NonHermitianSymbol { residual });
        }
        return Ok(op.hermitian_part());
    }
    Ok(op)
}

/// Quantizes a scalar function times the identity.
pub fn weyl_quantize_scalar<F>(grid: Grid, d: usize, f: F) -> Result<QuantumOperator>
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    weyl_quantize(&SymbolSamples::scalar(grid, d, f))
}

/// `Ĥ = Op(H₀ + εH₁)`.
pub fn quantize_hamiltonian(model: &dyn SymbolModel, grid: Grid) -> Result<QuantumOperator> {
    weyl_quantize(&SymbolSamples::hamiltonian(model, grid)?)
}

/// Matrix trace `Tr(ÂB̂)`.
pub fn trace_pair(a: &QuantumOperator, b: &QuantumOperator) -> Result<C64> {
    a.grid.check_same(&b.grid)?;
    let n = a.dim();
    let mut s = C64::default();
    for j in 0..n {
        for i in 0..n {
            s += a.matrix[(i, j)] * b.matrix[(j, i)];
        }
    }
    Ok(s)
}

/// Phase-space sum `(1/N) Σ_{j,k} tr(A B)` over the integer grid.
pub fn phase_space_trace(a: &SymbolSamples, b: &SymbolSamples) -> Result<C64> {
    a.grid.check_same(&b.grid)?;
    if a.d != b.d {
        return Err(Error::DimensionMismatch { context: "phase-space trace", expected: a.d, found: b.d });
    }
    let n = a.grid.points;
    let mut s = C64::default();
    for j in 0..n {
        for m in 0..n {
            s += a.at(2 * j, m).trace_product(&b.at(2 * j, m));
        }
    }
    Ok(s / n as f64)
}

/// Eigen-decomposition `Ĥ = VΛV†`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub grid: Grid,
    pub d: usize,
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
    /// Probe estimate of `‖Ĥ − VΛV†‖/‖Ĥ‖`.
    pub residual: f64,
}

impl SpectralDecomposition {
    pub fn new(op: &QuantumOperator) -> Result<Self> {
        let eig = op
            .matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::InvalidInput(format!("eigen-decomposition failed: {e:?}")))?;
        let s = eig.S().column_vector();
        let values: Vec<f64> = (0..op.dim()).map(|i| s[i].re).collect();
        let vectors = eig.U().to_owned();
        let mut spec = Self { grid: op.grid, d: op.d, values, vectors, residual: 0.0 };
        spec.residual = spec.reconstruction_residual(op);
        if spec.residual > RECONSTRUCTION_TOLERANCE {
            return Err(Error::ResidualTooLarge { residual: spec.residual });
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Relative residual on a few fixed probe vectors (no dense products).
    fn reconstruction_residual(&self, op: &QuantumOperator) -> f64 {
        let n = self.dim();
        let scale = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for probe in 0..4 {
            let x: Vec<C64> = (0..n)
                .map(|i| {
                    let t = (i * (2 * probe + 3) + probe) as f64;
                    C64::new((0.7 * t).sin(), (1.3 * t + 0.5).cos())
                })
                .collect();
            let xn = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let direct = matvec(op.matrix.as_ref(), &x);
            let recon = self.apply_function(&x, |l| C64::new(l, 0.0));
            let diff = direct.iter().zip(&recon).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(diff / (scale * xn));
        }
        worst
    }

    /// `f(Ĥ)x` for a complex function of the eigenvalue.
    pub fn apply_function(&self, x: &[C64], f: impl Fn(f64) -> C64) -> Vec<C64> {
        let mut c = adjoint_matvec(self.vectors.as_ref(), x);
        for (ci, l) in c.iter_mut().zip(&self.values) {
            *ci *= f(*l);
        }
        matvec(self.vectors.as_ref(), &c)
    }

    pub fn eigenvector(&self, i: usize) -> Vec<C64> {
        let col = self.vectors.col(i);
        (0..self.dim()).map(|r| col[r]).collect()
    }

    /// `V_S diag(f) V_S†` over the eigen-indices where `f ≠ 0`.
    pub fn function_matrix(&self, f: impl Fn(f64) -> C64) -> Mat<C64> {
        let n = self.dim();
        let weights: Vec<(usize, C64)> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, l)| (i, f(*l)))
            .filter(|(_, w)| *w != C64::default())
            .collect();
        let r = weights.len();
        let left = Mat::from_fn(n, r, |i, c| self.vectors[(i, weights[c].0)] * weights[c].1);
        let right = Mat::from_fn(n, r, |i, c| self.vectors[(i, weights[c].0)]);
        &left * right.adjoint()
    }
}

/// `ψ(t) = V e^{−iΛt/ε} V† ψ`.
pub fn propagate(spec: &SpectralDecomposition, psi: &WaveFunction, t: f64) -> Result<WaveFunction> {
    spec.grid.check_same(&psi.grid)?;
    let eps = spec.grid.epsilon;
    let values = spec.apply_function(&psi.values, |l| C64::from_polar(1.0, -l * t / eps));
    WaveFunction::new(psi.grid, psi.d, values)
}

/// `e^{−iĤt/ε}` as a dense operator.
pub fn evolution_operator(spec: &SpectralDecomposition, t: f64) -> QuantumOperator {
    let eps = spec.grid.epsilon;
    let matrix = spec.function_matrix(|l| C64::from_polar(1.0, -l * t / eps));
    QuantumOperator { grid: spec.grid, d: spec.d, matrix }
}

/// `f(Ĥ) = V f(Λ) V†`.
pub fn op_function(spec: &SpectralDecomposition, f: impl Fn(f64) -> f64) -> QuantumOperator {
    let matrix = spec.function_matrix(|l| C64::new(f(l), 0.0));
    QuantumOperator { grid: spec.grid, d: spec.d, matrix }
}

/// Band quantities sampled on the midpoint lattice.
#[derive(Clone, Debug)]
pub struct BandLattice {
    pub grid: Grid,
    pub d: usize,
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    pub m: Vec<f64>,
    /// `Ω_qp = i tr(π₀{π₀,π₀})`.
    pub omega_qp: Vec<f64>,
    /// `π₀ + επ₁`.
    pub projector: SymbolSamples,
}

impl BandLattice {
    pub fn new(model: &dyn SymbolModel, grid: Grid, opts: &BandOptions) -> Result<Self> {
        check_model(model)?;
        let n = grid.points;
        let d = model.fast_dim();
        let dd = d * d;
        let eps = grid.epsilon;
        let rows = exec::try_map_range(2 * n, |s| {
            let x = grid.midpoint(s);
            let mut row = Vec::with_capacity(n);
            for m in 0..n {
                let bp = band_point(model, &PhasePoint::qp(x, grid.momentum(m)), opts)?;
                let pi1 = subprincipal_projector_from(&bp)?.pi1;
                let mut pi = bp.pi0.clone();
                pi.axpy(C64::new(eps, 0.0), &pi1);
                row.push((bp.e0, bp.e1, bp.m, bp.omega.qp(0, 0), pi));
            }
            Ok(row)
        })?;
        let total = 2 * n * n;
        let mut out = Self {
            grid,
            d,
            e0: Vec::with_capacity(total),
            e1: Vec::with_capacity(total),
            m: Vec::with_capacity(total),
            omega_qp: Vec::with_capacity(total),
            projector: SymbolSamples { grid, d, data: Vec::with_capacity(total * dd) },
        };
        for (e0, e1, m, om, pi) in rows.into_iter().flatten() {
            out.e0.push(e0);
            out.e1.push(e1);
            out.m.push(m);
            out.omega_qp.push(om);
            out.projector.data.extend_from_slice(pi.as_slice());
        }
        Ok(out)
    }

    /// Lattice values of `h = e₀ + εe₁ + εM`, optionally without M.
    pub fn effective_h(&self, include_m: bool) -> Vec<f64> {
        let eps = self.grid.epsilon;
        (0..self.e0.len())
            .map(|i| self.e0[i] + eps * (self.e1[i] + if include_m { self.m[i] } else { 0.0 }))
            .collect()
    }

    /// Lattice values of the Liouville density `1 + εΩ_qp`.
    pub fn density(&self) -> Vec<f64> {
        let eps = self.grid.epsilon;
        self.omega_qp.iter().map(|o| 1.0 + eps * o).collect()
    }
}

/// Super-adiabatic projector with its diagnostics.
#[derive(Clone, Debug)]
pub struct Superadiabatic {
    pub projector: QuantumOperator,
    pub rank: usize,
    /// `‖π̂ − P₀‖` over all eigenvectors of `P₀`.
    pub distance: f64,
    /// Same, restricted to eigenvectors with energy below the trusted cut-off.
    pub trusted_distance: f64,
    pub trusted_energy: f64,
    /// `(eigenvalue, energy)` of P₀-eigenvectors more than 0.01 from {0, 1}.
    pub outliers: Vec<(f64, f64)>,
}

/// Lowest eigenvalue of `H₀` on the boundary of the phase-space box.
///
/// States with energy below it cannot reach the seam of the periodic grid.
pub fn trusted_energy(model: &dyn SymbolModel, grid: Grid) -> Result<f64> {
    let n = grid.points;
    let mut lo = f64::INFINITY;
    let mut visit = |x: f64, p: f64| -> Result<()> {
        let h0 = principal_checked(model, &PhasePoint::qp(x, p))?;
        let e = crate::linalg::eigh(&h0).values[0];
        lo = lo.min(e);
        Ok(())
    };
    for m in 0..n {
        visit(grid.x_min, grid.momentum(m))?;
    }
    for s in 0..2 * n {
        visit(grid.midpoint(s), -grid.p_max())?;
    }
    Ok(lo)
}

/// Spectral rounding of `P₀ = Op(π₀ + επ₁)`.
///
/// Fails with `ClusterGapViolation` when an eigenvalue of `P₀` in
/// `[0.25, 0.75]` belongs to a state below the trusted energy; such values
/// above it come from the grid seam and are recorded as outliers.
pub fn superadiabatic_projector_from(
    samples: &SymbolSamples,
    hamiltonian: &QuantumOperator,
    trusted_energy: f64,
) -> Result<Superadiabatic> {
    let p0 = weyl_quantize(samples)?;
    p0.grid.check_same(&hamiltonian.grid)?;
    let spec = SpectralDecomposition::new(&p0)?;
    let mut distance: f64 = 0.0;
    let mut trusted: f64 = 0.0;
    let mut outliers = Vec::new();
    for (i, l) in spec.values.iter().enumerate() {
        let dev = if *l > 0.5 { (l - 1.0).abs() } else { l.abs() };
        distance = distance.max(dev);
        if dev <= 0.01 {
            trusted = trusted.max(dev);
            continue;
        }
        let v = spec.eigenvector(i);
        let hv = matvec(hamiltonian.matrix.as_ref(), &v);
        let energy: f64 = v.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum();
        outliers.push((*l, energy));
        if energy < trusted_energy {
            if (0.25..=0.75).contains(l) {
                return Err(Error::ClusterGapViolation { eigenvalue: *l, energy });
            }
            trusted = trusted.max(dev);
        }
    }
    let rank = spec.values.iter().filter(|l| **l > 0.5).count();
    let projector = QuantumOperator {
        grid: p0.grid,
        d: p0.d,
        matrix: spec.function_matrix(|l| if l > 0.5 { C64::new(1.0, 0.0) } else { C64::default() }),
    };
    Ok(Superadiabatic { projector, rank, distance, trusted_distance: trusted, trusted_energy, outliers })
}

pub fn superadiabatic_projector(model: &dyn SymbolModel, grid: Grid, opts: &BandOptions) -> Result<Superadiabatic> {
    let lattice = BandLattice::new(model, grid, opts)?;
    let h = quantize_hamiltonian(model, grid)?;
    superadiabatic_projector_from(&lattice.projector, &h, trusted_energy(model, grid)?)
}

/// Matrix-valued Wigner density on the midpoint lattice, layout `[s][m][a][b]`.
///
/// Normalized so that `Σ tr W · cell_weight = ‖ψ‖²` and
/// `⟨ψ, Op(A)ψ⟩ = Σ tr(A W) · cell_weight`. Each row only sees displacements
/// of one parity, so every feature has an alias shifted by `p_max` (with sign
/// `+` on even rows and `−` on odd rows); the aliases cancel in sums against
/// symbols that are smooth on the lattice scale.
#[derive(Clone, Debug)]
pub struct Wigner {
    pub grid: Grid,
    pub d: usize,
    pub data: Vec<C64>,
}

impl Wigner {
    pub fn at(&self, s: usize, m: usize) -> CMatrix {
        let dd = self.d * self.d;
        let i = (s * self.grid.points + m) * dd;
        CMatrix::from_slice(self.d, &self.data[i..i + dd])
    }

    /// `tr W` per lattice point (real up to rounding).
    pub fn trace(&self) -> Vec<f64> {
        let d = self.d;
        self.data
            .chunks(d * d)
            .map(|b| (0..d).map(|a| b[a * d + a].re).sum())
            .collect()
    }

    /// `Σ tr W · cell_weight`.
    pub fn total(&self) -> f64 {
        self.trace().iter().sum::<f64>() * self.grid.cell_weight()
    }

    /// `Σ tr(A W) · cell_weight`.
    pub fn pair(&self, a: &SymbolSamples) -> Result<C64> {
        self.grid.check_same(&a.grid)?;
        let d = self.d;
        let dd = d * d;
        let mut s = C64::default();
        for (wb, ab) in self.data.chunks(dd).zip(a.data.chunks(dd)) {
            for r in 0..d {
                for c in 0..d {
                    s += ab[r * d + c] * wb[c * d + r];
                }
            }
        }
        Ok(s * self.grid.cell_weight())
    }
}

pub fn wigner(psi: &WaveFunction) -> Wigner {
    let grid = psi.grid;
    let n = grid.points;
    let d = psi.d;
    let dd = d * d;
    let half = n / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let scale = 2.0 * grid.dx();
    let mut data = vec![C64::default(); 2 * n * n * dd];
    // ψ_l ψ_j† block (row b from l, column a from j), stored as [b][a].
    let outer = |l: usize, j: usize, w: f64, buf: &mut [Vec<C64>], m: usize| {
        for b in 0..d {
            for a in 0..d {
                buf[b * d + a][m] += w * psi.at(l, b) * psi.at(j, a).conj();
            }
        }
    };
    exec::for_each_chunk_mut(&mut data, n * dd, |s, row| {
        let mut buf = vec![vec![C64::default(); n]; dd];
        for m in 0..n {
            let signed = if m < half { m as i64 } else { m as i64 - n as i64 };
            if (s as i64 - signed).rem_euclid(2) != 0 {
                continue;
            }
            if m == half {
                let l = ((s + half) / 2) % n;
                let j = (l + half) % n;
                outer(l, j, 0.5, &mut buf, m);
                outer(j, l, 0.5, &mut buf, m);
            } else {
                let l = ((s as i64 - signed).rem_euclid(2 * n as i64) as usize / 2) % n;
                let j = (l as i64 + signed).rem_euclid(n as i64) as usize;
                outer(l, j, 1.0, &mut buf, m);
            }
        }
        for (ab, b) in buf.iter_mut().enumerate() {
            fft.process(b);
            for m in 0..n {
                row[m * dd + ab] = b[m] * scale;
            }
        }
    });
    Wigner { grid, d, data }
}

/// Band Wigner function `(1 − εΩ_qp)·tr W` on the midpoint lattice.
pub fn band_wigner(w: &Wigner, lattice: &BandLattice) -> Result<Vec<f64>> {
    w.grid.check_same(&lattice.grid)?;
    let eps = w.grid.epsilon;
    Ok(w.trace().iter().zip(&lattice.omega_qp).map(|(t, o)| (1.0 - eps * o) * t).collect())
}

const POWER_ITERATIONS: usize = 64;
const POWER_TOLERANCE: f64 = 1e-10;

/// Largest singular value: power iteration on `A†A`, with a dense
/// fallback when it has not settled to 1e-10 within 64 steps.
pub fn operator_norm(a: MatRef<'_, C64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + 0.37 * ((i as f64) * 0.61).sin(), 0.1 * (i as f64).cos())).collect();
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vn == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|z| *z /= vn);
        let av = matvec(a, &v);
        let next = av.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if next == 0.0 {
            break;
        }
        if (next - sigma).abs() <= POWER_TOLERANCE * next {
            return next;
        }
        sigma = next;
        v = adjoint_matvec(a, &av);
    }
    dense_norm(a)
}

fn dense_norm(a: MatRef<'_, C64>) -> f64 {
    if a.nrows() == a.ncols() {
        let herm = {
            let mut r: f64 = 0.0;
            for j in 0..a.ncols() {
                for i in j..a.nrows() {
                    r = r.max((a[(i, j)] - a[(j, i)].conj()).norm());
                }
            }
            r <= 1e-14 * max_abs(a).max(f64::MIN_POSITIVE)
        };
        if herm {
            if let Ok(ev) = a.self_adjoint_eigenvalues(Side::Lower) {
                return ev.iter().fold(0.0f64, |m, l| m.max(l.abs()));
            }
        }
    }
    a.singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
}
