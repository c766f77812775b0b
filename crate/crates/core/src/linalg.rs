//! Small dense complex matrices for fast-space (d×d) algebra.
//!
//! Fast dimensions are tiny, so 2×2 matrices (the common case) are stored
//! inline without heap allocation.

use num_complex::Complex64 as C64;
use smallvec::SmallVec;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    d: usize,
    data: SmallVec<[C64; 4]>,
}

impl std::fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.d, self.d)?;
        for i in 0..self.d {
            write!(f, "  ")?;
            for j in 0..self.d {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: SmallVec::from_elem(ZERO, d * d),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from a row-major slice of length d².
    pub fn from_slice(d: usize, entries: &[C64]) -> Self {
        assert_eq!(entries.len(), d * d, "expected {} entries", d * d);
        Self {
            d,
            data: SmallVec::from_slice(entries),
        }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    /// Rank-one matrix v v†.
    pub fn outer(v: &[C64]) -> Self {
        let d = v.len();
        Self::from_fn(d, |i, j| v[i] * v[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.d, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.d).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|z| *z *= s);
        m
    }

    pub fn scale_re(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|z| *z *= s);
        m
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.d, rhs.d, "matmul dimension mismatch");
        let d = self.d;
        let (a, b) = (&self.data[..], &rhs.data[..]);
        if d == 2 {
            return Self {
                d,
                data: SmallVec::from_buf([
                    a[0] * b[0] + a[1] * b[2],
                    a[0] * b[1] + a[1] * b[3],
                    a[2] * b[0] + a[3] * b[2],
                    a[2] * b[1] + a[3] * b[3],
                ]),
            };
        }
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let aik = a[i * d + k];
                for j in 0..d {
                    out.data[i * d + j] += aik * b[k * d + j];
                }
            }
        }
        out
    }

    /// tr(self · rhs) without forming the product.
    pub fn trace_product(&self, rhs: &Self) -> C64 {
        let d = self.d;
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += self.data[i * d + k] * rhs.data[k * d + i];
            }
        }
        acc
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let d = self.d;
        (0..d)
            .map(|i| (0..d).map(|j| self.data[i * d + j] * v[j]).sum())
            .collect()
    }

    pub fn commutator(&self, rhs: &Self) -> Self {
        &self.matmul(rhs) - &rhs.matmul(self)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// max |a_ij − conj(a_ji)| relative to max(1, max |a_ij|).
    pub fn hermiticity_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.d {
            for j in i..self.d {
                r = r.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        r / self.max_abs().max(1.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() <= tol
    }

    /// Hermitian part (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.d, |i, j| 0.5 * (self[(i, j)] + self[(j, i)].conj()))
    }

    pub fn axpy(&mut self, a: C64, x: &Self) {
        for (y, x) in self.data.iter_mut().zip(x.data.iter()) {
            *y += a * x;
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.d + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.d + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.d, rhs.d);
        let mut m = self.clone();
        m += rhs;
        m
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.d, rhs.d);
        let mut m = self.clone();
        m -= rhs;
        m
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_re(-1.0)
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

/// Pauli matrices σx, σy, σz.
pub fn pauli() -> [CMatrix; 3] {
    [
        CMatrix::from_slice(2, &[ZERO, ONE, ONE, ZERO]),
        CMatrix::from_slice(2, &[ZERO, -I, I, ZERO]),
        CMatrix::from_slice(2, &[ONE, ZERO, ZERO, -ONE]),
    ]
}

/// b·σ + c·1 for a real 3-vector b.
pub fn bloch_matrix(b: [f64; 3], c: f64) -> CMatrix {
    CMatrix::from_slice(
        2,
        &[
            C64::new(c + b[2], 0.0),
            C64::new(b[0], -b[1]),
            C64::new(b[0], b[1]),
            C64::new(c - b[2], 0.0),
        ],
    )
}

/// A matrix known to be Hermitian within a tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(m: CMatrix) -> Option<Self> {
        m.is_hermitian(Self::TOLERANCE).then_some(Self(m))
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn eigh(&self) -> Eigh {
        eigh(&self.0)
    }
}

impl std::ops::Deref for HermitianMatrix {
    type Target = CMatrix;
    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

/// Eigen-decomposition of a Hermitian matrix: ascending values, vectors as columns.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        let d = self.vectors.dim();
        (0..d).map(|i| self.vectors[(i, k)]).collect()
    }
}

/// Closed-form eigen-decomposition of a 2×2 Hermitian matrix.
fn eigh2(m: &CMatrix) -> Eigh {
    let a = m[(0, 0)].re;
    let c = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let r = half.hypot(b.norm());
    let values = vec![mean - r, mean + r];
    if b.norm() == 0.0 {
        let vectors = if a <= c {
            CMatrix::identity(2)
        } else {
            CMatrix::from_slice(2, &[ZERO, ONE, ONE, ZERO])
        };
        return Eigh { values, vectors };
    }
    // For eigenvalue λ both (b, λ − a) and (λ − c, b̄) solve (H − λ)v = 0; take the larger.
    let vec_for = |lam: f64| -> [C64; 2] {
        let u = [b, C64::new(lam - a, 0.0)];
        let w = [C64::new(lam - c, 0.0), b.conj()];
        let nu = u[0].norm_sqr() + u[1].norm_sqr();
        let nw = w[0].norm_sqr() + w[1].norm_sqr();
        let (v, n) = if nu >= nw { (u, nu) } else { (w, nw) };
        let s = 1.0 / n.sqrt();
        [v[0] * s, v[1] * s]
    };
    let lo = vec_for(values[0]);
    let hi = vec_for(values[1]);
    let vectors = CMatrix::from_slice(2, &[lo[0], hi[0], lo[1], hi[1]]);
    Eigh { values, vectors }
}

/// Eigen-decomposition of a small Hermitian matrix (closed form for d = 2,
/// cyclic complex Jacobi otherwise).
pub fn eigh(m: &CMatrix) -> Eigh {
    if m.dim() == 2 {
        return eigh2(m);
    }
    jacobi_eigh(m)
}

/// Cyclic complex Jacobi eigensolver.
pub fn jacobi_eigh(m: &CMatrix) -> Eigh {
    let d = m.dim();
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(d);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let g = a[(p, q)];
                let gabs = g.norm();
                if gabs <= 1e-300 {
                    continue;
                }
                // Phase rotation makes a_pq real, then a real Jacobi rotation kills it.
                let ph = g / gabs;
                let zeta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * gabs);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -ph.conj() * s;
                let jqq = ph.conj() * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * jpp + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * jqq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * jpp + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * jqq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(d, |i, k| v[(i, order[k])]);
    Eigh { values, vectors }
}

/// Solves the real n×n system A x = b (row-major A) by partial-pivot elimination.
/// Returns None when a pivot falls below `tiny` relative to the largest entry.
pub fn solve_real(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let amax = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() <= 1e-13 * amax {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let pv = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / pv;
            if f != 0.0 {
                for k in col..n {
                    m[r * n + k] -= f * m[col * n + k];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for k in r + 1..n {
            s -= m[r * n + k] * x[k];
        }
        x[r] = s / m[r * n + r];
    }
    Some(x)
}

/// Determinant of a real n×n row-major matrix.
pub fn det_real(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            det = -det;
        }
        let pv = m[col * n + col];
        det *= pv;
        for r in col + 1..n {
            let f = m[r * n + col] / pv;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hermitian(d: usize, seed: u64) -> CMatrix {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let m = CMatrix::from_fn(d, |_, _| C64::new(next(), next()));
        &m + &m.adjoint()
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        for d in 1..=5 {
            let h = random_hermitian(d, d as u64 + 7);
            let e = eigh(&h);
            let lam = CMatrix::from_real_diag(&e.values);
            let rec = e.vectors.matmul(&lam).matmul(&e.vectors.adjoint());
            assert!((&rec - &h).max_abs() < 1e-13, "d = {d}");
            let orth = &e.vectors.adjoint().matmul(&e.vectors) - &CMatrix::identity(d);
            assert!(orth.max_abs() < 1e-14);
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn closed_form_matches_jacobi() {
        for seed in 0..50 {
            let h = random_hermitian(2, seed);
            let a = eigh(&h);
            let b = jacobi_eigh(&h);
            for k in 0..2 {
                assert!((a.values[k] - b.values[k]).abs() < 1e-14);
                // eigenvectors agree up to phase: |<a_k, b_k>| = 1
                let ov: C64 = (0..2).map(|i| a.vectors[(i, k)].conj() * b.vectors[(i, k)]).sum();
                assert!((ov.norm() - 1.0).abs() < 1e-13);
            }
        }
        let d = eigh(&CMatrix::from_real_diag(&[2.0, -1.0]));
        assert_eq!(d.values, vec![-1.0, 2.0]);
        assert_eq!(d.vectors[(1, 0)], ONE);
    }

    #[test]
    fn pauli_eigenvalues() {
        for s in pauli() {
            let e = eigh(&s);
            assert!((e.values[0] + 1.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bloch_matrix_matches_pauli_sum() {
        let [sx, sy, sz] = pauli();
        let m = bloch_matrix([0.3, -1.2, 0.7], 2.0);
        let mut r = CMatrix::identity(2).scale_re(2.0);
        r.axpy(C64::new(0.3, 0.0), &sx);
        r.axpy(C64::new(-1.2, 0.0), &sy);
        r.axpy(C64::new(0.7, 0.0), &sz);
        assert_eq!(m, r);
    }

    #[test]
    fn real_solve_and_det() {
        let a = [4.0, 1.0, 2.0, 0.5, 3.0, -1.0, 2.0, 0.0, 5.0];
        let x = solve_real(&a, &[1.0, 2.0, 3.0], 3).unwrap();
        for r in 0..3 {
            let s: f64 = (0..3).map(|k| a[r * 3 + k] * x[k]).sum();
            assert!((s - [1.0, 2.0, 3.0][r]).abs() < 1e-14);
        }
        // cofactor expansion
        let det = 4.0 * (15.0 - 0.0) - 1.0 * (2.5 + 2.0) + 2.0 * (0.0 - 6.0);
        assert!((det_real(&a, 3) - det).abs() < 1e-12);
        assert!(solve_real(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_none());
    }
}
