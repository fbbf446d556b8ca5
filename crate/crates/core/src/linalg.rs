//! Small dense linear algebra for per-point matrices.
//!
//! Every matrix handled pointwise by the solver is at most 4×4 complex
//! (relative eigenvalue problems, n ≤ 4) or 8×8 real (real Hessians on the
//! 2n-torus). Storage is inline and fixed-size so that per-point work never
//! allocates. Eigenproblems use cyclic Jacobi sweeps with a fixed pivot order,
//! which makes results bit-reproducible for identical inputs.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{DhymError, Result};

/// Largest supported complex dimension.
pub const MAX_N: usize = 4;
/// Largest supported real dimension (2n).
pub const MAX_REAL: usize = 2 * MAX_N;

const MAX_SWEEPS: usize = 64;

/// Square complex matrix of dimension `n ≤ 4`, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    a: [Complex64; MAX_N * MAX_N],
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_N).contains(&n), "matrix dimension {n} out of range");
        CMatrix {
            n,
            a: [Complex64::new(0.0, 0.0); MAX_N * MAX_N],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(s, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        Self::from_fn(n, |i, j| {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..n {
                s += self[(i, k)] * other[(k, j)];
            }
            s
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self::from_fn(self.n, |i, j| self[(i, j)] + other[(i, j)])
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self::from_fn(self.n, |i, j| self[(i, j)] - other[(i, j)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] * s)
    }

    /// `(A + A†)/2` together with the max-norm of the anti-Hermitian part.
    pub fn hermitian_part(&self) -> (Self, f64) {
        let n = self.n;
        let mut out = Self::zeros(n);
        let mut defect: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = self[(i, j)];
                let b = self[(j, i)].conj();
                out[(i, j)] = (a + b) * 0.5;
                defect = defect.max(((a - b) * 0.5).norm());
            }
        }
        (out, defect)
    }

    pub fn max_abs(&self) -> f64 {
        self.a[..]
            .iter()
            .enumerate()
            .filter(|(k, _)| k % MAX_N < self.n && k / MAX_N < self.n)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_identity(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (0..n).all(|j| {
                let expect = if i == j { 1.0 } else { 0.0 };
                self[(i, j)] == Complex64::new(expect, 0.0)
            })
        })
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.a[i * MAX_N + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.a[i * MAX_N + j]
    }
}

/// Square real matrix of dimension `n ≤ 8`, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RMatrix {
    n: usize,
    a: [f64; MAX_REAL * MAX_REAL],
}

impl RMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_REAL).contains(&n), "matrix dimension {n} out of range");
        RMatrix {
            n,
            a: [0.0; MAX_REAL * MAX_REAL],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_identity(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..n).all(|j| self[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }
}

impl Index<(usize, usize)> for RMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * MAX_REAL + j]
    }
}

impl IndexMut<(usize, usize)> for RMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * MAX_REAL + j]
    }
}

/// Eigen-decomposition `A = V diag(values) V†` of a Hermitian matrix.
/// Values are sorted descending; column `k` of `vectors` belongs to `values[k]`.
#[derive(Clone, Copy, Debug)]
pub struct HermitianEigen {
    pub values: [f64; MAX_N],
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn n(&self) -> usize {
        self.vectors.n()
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.n()]
    }
}

/// Cyclic Jacobi for a Hermitian matrix. The input is replaced by its
/// Hermitian part first.
pub fn hermitian_eigen(input: &CMatrix) -> HermitianEigen {
    let n = input.n();
    let (mut a, _) = input.hermitian_part();
    let mut v = CMatrix::identity(n);

    if n > 1 {
        let scale = a.max_abs();
        let threshold = (f64::EPSILON * scale).powi(2) * 1e-4;
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off <= threshold || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let r = a[(p, q)].norm();
                    let (dp, dq) = (a[(p, p)].re.abs(), a[(q, q)].re.abs());
                    if dp + 100.0 * r == dp && dq + 100.0 * r == dq {
                        a[(p, q)] = Complex64::new(0.0, 0.0);
                        a[(q, p)] = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    jacobi_rotate(&mut a, &mut v, p, q);
                }
            }
        }
    }

    let mut order = [0usize, 1, 2, 3];
    let diag: [f64; MAX_N] = std::array::from_fn(|i| if i < n { a[(i, i)].re } else { 0.0 });
    order[..n].sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let mut values = [0.0; MAX_N];
    let mut vectors = CMatrix::zeros(n);
    for (k, &src) in order[..n].iter().enumerate() {
        values[k] = diag[src];
        for r in 0..n {
            vectors[(r, k)] = v[(r, src)];
        }
    }
    HermitianEigen { values, vectors }
}

fn jacobi_rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let b = a[(p, q)];
    let r = b.norm();
    if r == 0.0 {
        return;
    }
    let phase = b / r;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // G = diag(1, conj(phase)) · [[c, s], [-s, c]] acting on (p, q).
    let gpp = Complex64::new(c, 0.0);
    let gpq = Complex64::new(s, 0.0);
    let gqp = -phase.conj() * s;
    let gqq = phase.conj() * c;

    let n = a.n();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * gpp + akq * gqp;
        a[(k, q)] = akp * gpq + akq * gqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
        a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * gpp + vkq * gqp;
        v[(k, q)] = vkp * gpq + vkq * gqq;
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L†`.
pub fn cholesky(a: &CMatrix) -> Result<CMatrix> {
    let n = a.n();
    let mut l = CMatrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return Err(DhymError::NotPositiveDefinite {
                min_eigenvalue: min_eigenvalue(a),
            });
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    let e = hermitian_eigen(a);
    e.values()[e.n() - 1]
}

/// Smallest eigenvalue of a positive definite metric accepted by the
/// relative eigenvalue solver.
pub const MIN_METRIC_EIGENVALUE: f64 = 1e-12;

/// Relative eigenvalues of the pencil `(g, chi)`: solutions of
/// `det(g - λ chi) = 0`, sorted descending.
///
/// Column `k` of `vectors` is the eigenvector `w_k` normalized so that
/// `w_k† chi w_k = 1`.
pub fn generalized_hermitian_eigen(g: &CMatrix, chi: &CMatrix) -> Result<HermitianEigen> {
    if chi.is_identity() {
        return Ok(hermitian_eigen(g));
    }
    let min = min_eigenvalue(chi);
    if !(min > MIN_METRIC_EIGENVALUE) {
        return Err(DhymError::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let l = cholesky(chi)?;
    let n = g.n();
    // Y = L⁻¹ g, C = L⁻¹ Y† = L⁻¹ g L⁻†.
    let y = forward_solve(&l, &g.hermitian_part().0);
    let c = forward_solve(&l, &y.adjoint());
    let mut eig = hermitian_eigen(&c);
    // W = L⁻† U.
    let lh = l.adjoint();
    let mut w = CMatrix::zeros(n);
    for col in 0..n {
        for i in (0..n).rev() {
            let mut s = eig.vectors[(i, col)];
            for k in (i + 1)..n {
                s -= lh[(i, k)] * w[(k, col)];
            }
            w[(i, col)] = s / lh[(i, i)];
        }
    }
    eig.vectors = w;
    Ok(eig)
}

fn forward_solve(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.n();
    let mut x = CMatrix::zeros(n);
    for col in 0..n {
        for i in 0..n {
            let mut s = b[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Eigenvalues (descending) of a real symmetric matrix; only the upper
/// triangle is read.
pub fn symmetric_eigenvalues(input: &RMatrix) -> [f64; MAX_REAL] {
    let n = input.n();
    let mut a = RMatrix::from_fn(n, |i, j| if i <= j { input[(i, j)] } else { input[(j, i)] });
    if n > 1 {
        let scale = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].abs())
            .fold(0.0, f64::max);
        let threshold = (f64::EPSILON * scale).powi(2) * 1e-4;
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off <= threshold || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    let (dp, dq) = (a[(p, p)].abs(), a[(q, q)].abs());
                    if apq == 0.0 || (dp + 100.0 * apq.abs() == dp && dq + 100.0 * apq.abs() == dq) {
                        a[(p, q)] = 0.0;
                        a[(q, p)] = 0.0;
                        continue;
                    }
                    let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                }
            }
        }
    }
    let mut values = [f64::NEG_INFINITY; MAX_REAL];
    for i in 0..n {
        values[i] = a[(i, i)];
    }
    values[..n].sort_by(|x, y| y.total_cmp(x));
    values
}

/// Eigenvalues (descending) of `a` relative to the symmetric positive definite `metric`.
pub fn generalized_symmetric_eigenvalues(a: &RMatrix, metric: &RMatrix) -> Result<[f64; MAX_REAL]> {
    if metric.is_identity() {
        return Ok(symmetric_eigenvalues(a));
    }
    let n = a.n();
    let min = symmetric_eigenvalues(metric)[n - 1];
    if !(min > MIN_METRIC_EIGENVALUE) {
        return Err(DhymError::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    // Real Cholesky of the metric.
    let mut l = RMatrix::zeros(n);
    for j in 0..n {
        let mut d = metric[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = metric[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let solve = |b: &RMatrix| {
        let mut x = RMatrix::zeros(n);
        for col in 0..n {
            for i in 0..n {
                let mut s = b[(i, col)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / l[(i, i)];
            }
        }
        x
    };
    let sym = RMatrix::from_fn(n, |i, j| if i <= j { a[(i, j)] } else { a[(j, i)] });
    let y = solve(&sym);
    let yt = RMatrix::from_fn(n, |i, j| y[(j, i)]);
    Ok(symmetric_eigenvalues(&solve(&yt)))
}

/// Solves the dense complex system `m x = rhs` (row-major `dim × dim`) by
/// Gaussian elimination with partial pivoting. Returns `None` when a pivot
/// vanishes. Also returns the determinant.
pub fn complex_solve(m: &[Complex64], dim: usize, rhs: &mut [Complex64]) -> Option<Complex64> {
    let mut a = m.to_vec();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..dim {
        let piv = (col..dim)
            .max_by(|&i, &j| a[i * dim + col].norm().total_cmp(&a[j * dim + col].norm()))
            .expect("non-empty range");
        if a[piv * dim + col].norm() == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..dim {
                a.swap(piv * dim + k, col * dim + k);
            }
            rhs.swap(piv, col);
            det = -det;
        }
        let p = a[col * dim + col];
        det *= p;
        for r in (col + 1)..dim {
            let f = a[r * dim + col] / p;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..dim {
                let v = a[col * dim + k];
                a[r * dim + k] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    for r in (0..dim).rev() {
        let mut s = rhs[r];
        for k in (r + 1)..dim {
            s -= a[r * dim + k] * rhs[k];
        }
        rhs[r] = s / a[r * dim + r];
    }
    Some(det)
}

/// Inverse of a dense complex matrix together with its determinant.
pub fn complex_inverse(m: &[Complex64], dim: usize) -> Option<(Vec<Complex64>, Complex64)> {
    let mut inv = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut det = Complex64::new(0.0, 0.0);
    for col in 0..dim {
        let mut e = vec![Complex64::new(0.0, 0.0); dim];
        e[col] = Complex64::new(1.0, 0.0);
        det = complex_solve(m, dim, &mut e)?;
        for r in 0..dim {
            inv[r * dim + col] = e[r];
        }
    }
    Some((inv, det))
}
