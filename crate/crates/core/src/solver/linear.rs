//! Linearized operator, its spectral preconditioner and the augmented GMRES solve.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{first_derivative, mixed_derivative, pairwise_sum, GridSpec, ScalarField};
use crate::linalg::CMatrix;
use crate::phase::{hypercritical_floor, spectrum_at};

/// Below this `min F^{ii̇}` the linearization is treated as degenerate.
pub const ELLIPTICITY_FLOOR: f64 = 1e-14;

const CHUNK: usize = 4096;

/// Deterministic parallel dot product: fixed chunks, sequential combine.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    parts.iter().sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Pointwise values produced while linearizing at a state.
#[derive(Clone, Debug)]
pub struct PointwiseState {
    /// `Σ arctan λ_i` per point.
    pub phase: Vec<f64>,
    pub lambda_min: f64,
    pub fprime_min: f64,
    /// min over points of `phase − (n−1)π/2`.
    pub hypercritical_margin: f64,
}

/// The operator `L du = Re Σ_ij P_ij H_ij(du)` with `P_ij = ∂F/∂g̃_ij`, stored
/// as real stencil coefficients per point.
#[derive(Clone, Debug)]
pub struct Linearization {
    spec: GridSpec,
    /// Pairs `(a, b)` with `a ≤ b`, then the first-order terms.
    pairs: Vec<(usize, usize)>,
    stride: usize,
    coef: Vec<f64>,
}

/// `P = W diag(f) W†` in frame components, with `W` the χ-orthonormal eigenvectors.
fn phase_gradient(vectors: &CMatrix, f: &[f64]) -> CMatrix {
    let n = vectors.n();
    CMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| vectors[(i, k)].conj() * vectors[(j, k)] * f[k])
            .sum()
    })
}

impl Linearization {
    /// Linearizes at `u` and returns the pointwise state alongside.
    pub fn at_state(
        u: &ScalarField,
        g: &BackgroundForm,
        s: &AlmostHermitianStructure,
    ) -> Result<(Self, PointwiseState)> {
        let spec = *u.spec();
        let n = spec.n();
        let d = spec.real_dim();
        let mut pairs = Vec::new();
        for a in 0..d {
            for b in a..d {
                pairs.push((a, b));
            }
        }
        let stride = pairs.len() + d;
        let v = u.values();
        let floor = hypercritical_floor(n);
        let per_point: Vec<(Vec<f64>, f64, f64, f64)> = (0..spec.len())
            .into_par_iter()
            .map(|idx| -> Result<_> {
                let gt = omega_u_at(g, v, s, idx);
                let (sp, eig) = spectrum_at(&gt, s.chi(idx))?;
                let p = phase_gradient(&eig.vectors, sp.fprime());
                let geom = s.geometry(idx);
                let mut c = Vec::with_capacity(stride);
                for &(a, b) in &pairs {
                    let mut z = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let pij = p[(i, j)];
                            z += pij * geom.frame(i, a) * geom.frame(j, b).conj();
                            if a != b {
                                z += pij * geom.frame(i, b) * geom.frame(j, a).conj();
                            }
                        }
                    }
                    c.push(z.re);
                }
                for beta in 0..d {
                    let mut z = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            z += p[(i, j)] * geom.first_order(i, j, beta);
                        }
                    }
                    c.push(z.re);
                }
                let fmin = sp.fprime().iter().copied().fold(f64::INFINITY, f64::min);
                Ok((c, sp.phase(), sp.lambda_min(), fmin))
            })
            .collect::<Result<_>>()?;
        let mut coef = Vec::with_capacity(stride * spec.len());
        let mut phase = Vec::with_capacity(spec.len());
        let mut lambda_min = f64::INFINITY;
        let mut fprime_min = f64::INFINITY;
        for (c, ph, lm, fm) in per_point {
            coef.extend_from_slice(&c);
            phase.push(ph);
            lambda_min = lambda_min.min(lm);
            fprime_min = fprime_min.min(fm);
        }
        let hypercritical_margin = phase.iter().map(|p| p - floor).fold(f64::INFINITY, f64::min);
        Ok((
            Linearization {
                spec,
                pairs,
                stride,
                coef,
            },
            PointwiseState {
                phase,
                lambda_min,
                fprime_min,
                hypercritical_margin,
            },
        ))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Applies `L` to a raw value array on the same grid.
    pub fn apply_values(&self, du: &[f64]) -> Vec<f64> {
        let spec = &self.spec;
        let d = spec.real_dim();
        let np = self.pairs.len();
        (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let c = &self.coef[idx * self.stride..(idx + 1) * self.stride];
                let mut acc = 0.0;
                for (k, &(a, b)) in self.pairs.iter().enumerate() {
                    if c[k] != 0.0 {
                        acc += c[k] * mixed_derivative(du, spec, idx, a + 1, b + 1);
                    }
                }
                for beta in 0..d {
                    let cb = c[np + beta];
                    if cb != 0.0 {
                        acc += cb * first_derivative(du, spec, idx, beta + 1);
                    }
                }
                acc
            })
            .collect()
    }

    pub fn apply(&self, du: &ScalarField) -> Result<ScalarField> {
        crate::grid::require_grid(du.spec(), &self.spec)?;
        ScalarField::new(self.spec, self.apply_values(du.values()))
    }

    /// Grid average of every coefficient.
    fn mean_coefficients(&self) -> Vec<f64> {
        let len = self.spec.len();
        (0..self.stride)
            .map(|k| {
                let column: Vec<f64> = (0..len).map(|i| self.coef[i * self.stride + k]).collect();
                pairwise_sum(&column) / len as f64
            })
            .collect()
    }
}

/// Applies `L` at state `u` to `du`.
pub fn apply_linearization(
    u: &ScalarField,
    du: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<ScalarField> {
    let (lin, state) = Linearization::at_state(u, g, s)?;
    if !(state.fprime_min >= ELLIPTICITY_FLOOR) {
        return Err(DhymError::State(format!(
            "linearization is not elliptic (min F^ii = {:e})",
            state.fprime_min
        )));
    }
    lin.apply(du)
}

/// Exact inverse of the constant-coefficient operator built from the grid
/// means of the coefficients, applied by FFT.
pub struct SpectralPreconditioner {
    spec: GridSpec,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// `1 / symbol(k)`, with 0 at `k = 0`.
    inverse_symbol: Vec<Complex64>,
}

impl SpectralPreconditioner {
    pub fn new(lin: &Linearization) -> Self {
        let spec = lin.spec;
        let d = spec.real_dim();
        let np = lin.pairs.len();
        let mean = lin.mean_coefficients();
        let h = spec.spacing();
        let nax = spec.points_per_axis();
        let inverse_symbol = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                if idx == 0 {
                    return Complex64::new(0.0, 0.0);
                }
                let mut theta = [0.0; crate::linalg::MAX_REAL];
                for a in 0..d {
                    theta[a] = spec.coord_index(idx, a + 1) as f64 * (std::f64::consts::TAU / nax as f64);
                }
                let mut re = 0.0;
                for (k, &(a, b)) in lin.pairs.iter().enumerate() {
                    re += if a == b {
                        let s = (0.5 * theta[a]).sin();
                        -4.0 * mean[k] * s * s / (h * h)
                    } else {
                        -mean[k] * theta[a].sin() * theta[b].sin() / (h * h)
                    };
                }
                let im: f64 = (0..d).map(|b| mean[np + b] * theta[b].sin() / h).sum();
                let sym = Complex64::new(re, im);
                if sym.norm() > 0.0 {
                    sym.inv()
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let mut planner = FftPlanner::new();
        SpectralPreconditioner {
            spec,
            fft: planner.plan_fft_forward(nax),
            ifft: planner.plan_fft_inverse(nax),
            inverse_symbol,
        }
    }

    /// Transforms along every axis by repeatedly transforming the contiguous
    /// last axis and rotating it to the front.
    fn transform(&self, buf: &mut Vec<Complex64>, plan: &Arc<dyn Fft<f64>>) {
        let nax = self.spec.points_per_axis();
        let rest = buf.len() / nax;
        let mut tmp = vec![Complex64::new(0.0, 0.0); buf.len()];
        for _ in 0..self.spec.real_dim() {
            buf.par_chunks_mut(nax * 64.min(rest)).for_each(|lines| plan.process(lines));
            let src = &*buf;
            tmp.par_chunks_mut(rest).enumerate().for_each(|(j, out)| {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = src[r * nax + j];
                }
            });
            std::mem::swap(buf, &mut tmp);
        }
    }

    /// Solves `L̄ x − c = r_u`, `mean x = r_m`.
    pub fn apply(&self, r_u: &[f64], r_m: f64) -> (Vec<f64>, f64) {
        let len = self.spec.len();
        let c = -pairwise_sum(r_u) / len as f64;
        let mut buf: Vec<Complex64> = r_u.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.transform(&mut buf, &self.fft);
        buf.par_iter_mut()
            .zip(self.inverse_symbol.par_iter())
            .for_each(|(z, s)| *z *= s);
        buf[0] = Complex64::new(r_m * len as f64, 0.0);
        self.transform(&mut buf, &self.ifft);
        let scale = 1.0 / len as f64;
        (buf.par_iter().map(|z| z.re * scale).collect(), c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `L δu − δc = rhs`, `mean δu = 0` by restarted, right-preconditioned GMRES.
pub fn solve_augmented(
    lin: &Linearization,
    pre: &SpectralPreconditioner,
    rhs: &[f64],
    tol: f64,
    restart: usize,
    max_iters: usize,
) -> Result<(Vec<f64>, f64, LinearSolveReport)> {
    let len = lin.spec.len();
    let dim = len + 1;
    let op = |x: &[f64]| -> Vec<f64> {
        let mut y = lin.apply_values(&x[..len]);
        let dc = x[len];
        y.par_iter_mut().for_each(|v| *v -= dc);
        y.push(pairwise_sum(&x[..len]) / len as f64);
        y
    };
    let precondition = |y: &[f64]| -> Vec<f64> {
        let (mut x, c) = pre.apply(&y[..len], y[len]);
        x.push(c);
        x
    };
    let mut b = rhs.to_vec();
    b.push(0.0);
    let bnorm = norm(&b);
    let mut x = vec![0.0; dim];
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; len],
            0.0,
            LinearSolveReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iters {
        let ax = op(&x);
        let r: Vec<f64> = b.par_iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.par_iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut gvec = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iters {
            let z = precondition(&basis[k]);
            let mut w = op(&z);
            let mut col = vec![0.0; k + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                w.par_iter_mut().zip(v.par_iter()).for_each(|(a, b)| *a -= hij * b);
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let den = col[k].hypot(col[k + 1]);
            let (c, s) = if den == 0.0 { (1.0, 0.0) } else { (col[k] / den, col[k + 1] / den) };
            col[k] = den;
            col[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            gvec.push(-s * gvec[k]);
            gvec[k] *= c;
            hess.push(col);
            total += 1;
            k += 1;
            rel = gvec[k].abs() / bnorm;
            if rel <= tol || wn == 0.0 {
                break;
            }
            basis.push(w.par_iter().map(|v| v / wn).collect());
        }
        // back substitution for y, then x += M⁻¹ V y
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = gvec[i];
            for j in (i + 1)..k {
                s -= hess[j][i] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        let mut comb = vec![0.0; dim];
        for (j, yj) in y.iter().enumerate() {
            comb.par_iter_mut().zip(basis[j].par_iter()).for_each(|(a, b)| *a += yj * b);
        }
        let dx = precondition(&comb);
        x.par_iter_mut().zip(dx.par_iter()).for_each(|(a, b)| *a += b);
        if rel <= tol {
            let ax = op(&x);
            let r: Vec<f64> = b.par_iter().zip(&ax).map(|(p, q)| p - q).collect();
            rel = norm(&r) / bnorm;
            if rel <= tol * 10.0 {
                break;
            }
        }
    }
    if !(rel <= tol * 10.0) {
        return Err(DhymError::LinearSolve {
            iterations: total,
            relative_residual: rel,
        });
    }
    let dc = x.pop().unwrap_or(0.0);
    Ok((
        x,
        dc,
        LinearSolveReport {
            iterations: total,
            relative_residual: rel,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Preset;

    fn flat(n: usize, pts: usize) -> (GridSpec, AlmostHermitianStructure) {
        let spec = GridSpec::new(n, pts).unwrap();
        (spec, AlmostHermitianStructure::build(Preset::Flat, spec).unwrap())
    }

    #[test]
    fn constants_are_in_the_kernel_exactly() {
        let (spec, s) = flat(2, 8);
        let g = BackgroundForm::multiple_of_chi(&s, 1.3);
        let u = ScalarField::from_fn(spec, |x| 0.1 * x[0].cos() * x[3].sin());
        let out = apply_linearization(&u, &ScalarField::constant(spec, 3.7), &g, &s).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_identity_form_gives_quarter_laplacian() {
        let (spec, s) = flat(2, 16);
        let g = BackgroundForm::multiple_of_chi(&s, 1.0);
        let du = ScalarField::from_fn(spec, |x| x[0].cos());
        let out = apply_linearization(&ScalarField::zeros(spec), &du, &g, &s).unwrap();
        let h = spec.spacing();
        for idx in (0..spec.len()).step_by(37) {
            let x1 = spec.coords(idx)[0];
            assert!((out.values()[idx] + 0.25 * x1.cos()).abs() < h * h);
        }
    }

    #[test]
    fn preconditioner_inverts_constant_operator() {
        let (spec, s) = flat(2, 8);
        let g = BackgroundForm::multiple_of_chi(&s, 0.9);
        let (lin, _) = Linearization::at_state(&ScalarField::zeros(spec), &g, &s).unwrap();
        let pre = SpectralPreconditioner::new(&lin);
        let x0 = ScalarField::from_fn(spec, |x| (x[0] + x[2]).sin() + 0.5 * (2.0 * x[1]).cos() - 0.2 * x[3].sin());
        let x0 = x0.mean_zero();
        let r = lin.apply_values(x0.values());
        let (x, c) = pre.apply(&r, 0.0);
        assert!(c.abs() < 1e-14);
        for (a, b) in x.iter().zip(x0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_solves_twisted_system() {
        let spec = GridSpec::new(2, 8).unwrap();
        let s = AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.25 }, spec).unwrap();
        let g = BackgroundForm::multiple_of_chi(&s, 2.0);
        let u = ScalarField::from_fn(spec, |x| 0.05 * x[0].cos());
        let (lin, _) = Linearization::at_state(&u, &g, &s).unwrap();
        let pre = SpectralPreconditioner::new(&lin);
        let truth = ScalarField::from_fn(spec, |x| (x[0] - x[3]).sin() + 0.3 * x[1].cos()).mean_zero();
        let mut rhs = lin.apply_values(truth.values());
        rhs.iter_mut().for_each(|v| *v -= 0.7);
        let (x, dc, rep) = solve_augmented(&lin, &pre, &rhs, 1e-12, 40, 400).unwrap();
        assert!(rep.relative_residual <= 1e-11);
        assert!((dc - 0.7).abs() < 1e-9);
        for (a, b) in x.iter().zip(truth.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
