//! Pointwise algebra of `F(λ) = Σ arctan λ_i` and the global angle θ̂.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{require_grid, ScalarField};
use crate::linalg::{generalized_hermitian_eigen, CMatrix, HermitianEigen, MAX_N};

/// Lower end `(n−1)π/2` of the hypercritical range.
#[inline]
pub fn hypercritical_floor(n: usize) -> f64 {
    (n as f64 - 1.0) * FRAC_PI_2
}

/// Upper end `nπ/2` of the phase range.
#[inline]
pub fn phase_ceiling(n: usize) -> f64 {
    n as f64 * FRAC_PI_2
}

/// True when `(n−1)π/2 < h < nπ/2`.
pub fn is_hypercritical(n: usize, h: f64) -> bool {
    h > hypercritical_floor(n) && h < phase_ceiling(n)
}

/// Relative eigenvalues with the phase and derivative tensors of `F` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spectrum {
    n: usize,
    lambda: [f64; MAX_N],
    phase: f64,
    fprime: [f64; MAX_N],
    fsecond_diag: [f64; MAX_N],
    fsecond_off: [[f64; MAX_N]; MAX_N],
}

impl Spectrum {
    /// Builds the spectrum from eigenvalues sorted descending.
    pub fn from_lambda(lambda: &[f64]) -> Self {
        let n = lambda.len();
        assert!((1..=MAX_N).contains(&n), "dimension out of range");
        let mut l = [0.0; MAX_N];
        l[..n].copy_from_slice(lambda);
        let mut fprime = [0.0; MAX_N];
        let mut fsecond_diag = [0.0; MAX_N];
        let mut fsecond_off = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            let q = 1.0 + l[i] * l[i];
            fprime[i] = 1.0 / q;
            fsecond_diag[i] = -2.0 * l[i] / (q * q);
            for k in 0..n {
                fsecond_off[i][k] = -(l[i] + l[k]) / (q * (1.0 + l[k] * l[k]));
            }
        }
        Spectrum {
            n,
            lambda: l,
            phase: phase(&l[..n]),
            fprime,
            fsecond_diag,
            fsecond_off,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda[..self.n]
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn fprime(&self) -> &[f64] {
        &self.fprime[..self.n]
    }

    pub fn fsecond_diag(&self) -> &[f64] {
        &self.fsecond_diag[..self.n]
    }

    /// `F^{ik̄,ki̇}`; the diagonal `i = k` coincides with `F^{ii̇,ii̇}`.
    pub fn fsecond_off(&self, i: usize, k: usize) -> f64 {
        self.fsecond_off[i][k]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[self.n - 1]
    }

    /// `λ_{n−1} λ_n`, or `λ_1` when n = 1.
    pub fn lambda_product_min(&self) -> f64 {
        if self.n == 1 {
            self.lambda[0]
        } else {
            self.lambda[self.n - 2] * self.lambda[self.n - 1]
        }
    }

    pub fn trace_fprime(&self) -> f64 {
        self.fprime().iter().sum()
    }

    /// Second variation of `F` along a Hermitian direction `ξ` expressed in the
    /// eigenbasis: `Σ F^{ii̇,ii̇} ξ_ii² + Σ_{i≠k} F^{ik̄,ki̇} |ξ_ik|²`.
    pub fn second_variation(&self, xi: &CMatrix) -> f64 {
        let n = self.n;
        let mut q = 0.0;
        for i in 0..n {
            q += self.fsecond_diag[i] * xi[(i, i)].re * xi[(i, i)].re;
            for k in 0..n {
                if k != i {
                    q += self.fsecond_off[i][k] * xi[(i, k)].norm_sqr();
                }
            }
        }
        q
    }
}

/// Solutions of `det(g̃ − λχ) = 0`, sorted descending.
pub fn relative_eigenvalues(gtilde: &CMatrix, chi: &CMatrix) -> Result<Vec<f64>> {
    Ok(generalized_hermitian_eigen(gtilde, chi)?.values().to_vec())
}

/// Spectrum together with χ-orthonormal eigenvectors.
pub fn spectrum_at(gtilde: &CMatrix, chi: &CMatrix) -> Result<(Spectrum, HermitianEigen)> {
    let eig = generalized_hermitian_eigen(gtilde, chi)?;
    Ok((Spectrum::from_lambda(eig.values()), eig))
}

pub fn phase(lambda: &[f64]) -> f64 {
    lambda.iter().map(|l| l.atan()).sum()
}

pub fn linearization_coeffs(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|l| 1.0 / (1.0 + l * l)).collect()
}

/// `(F^{ii̇,ii̇}, F^{ik̄,ki̇})` in closed form; the off-diagonal table is n×n.
pub fn hessian_coeffs(lambda: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let diag = lambda
        .iter()
        .map(|l| {
            let q = 1.0 + l * l;
            -2.0 * l / (q * q)
        })
        .collect();
    let off = lambda
        .iter()
        .map(|li| {
            lambda
                .iter()
                .map(|lk| -(li + lk) / ((1.0 + li * li) * (1.0 + lk * lk)))
                .collect()
        })
        .collect();
    (diag, off)
}

/// The cones `Γ_n ⊃ Γ ⊃ Γ^σ` for a threshold σ in the hypercritical range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseCones {
    n: usize,
    sigma: f64,
}

impl PhaseCones {
    pub fn new(n: usize, sigma: f64) -> Result<Self> {
        if !is_hypercritical(n, sigma) {
            return Err(DhymError::domain(format!(
                "σ = {sigma} outside ((n−1)π/2, nπ/2) for n = {n}"
            )));
        }
        Ok(PhaseCones { n, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeMembership {
    pub in_gamma_n: bool,
    pub in_gamma: bool,
    pub in_gamma_sigma: bool,
    /// min λ_i.
    pub gamma_n_margin: f64,
    /// phase − (n−1)π/2.
    pub gamma_margin: f64,
    /// phase − σ.
    pub gamma_sigma_margin: f64,
}

pub fn cone_membership(lambda: &[f64], sigma: f64) -> Result<ConeMembership> {
    let n = lambda.len();
    let cones = PhaseCones::new(n, sigma)?;
    let p = phase(lambda);
    let min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_margin = p - hypercritical_floor(n);
    let gamma_sigma_margin = p - cones.sigma;
    Ok(ConeMembership {
        in_gamma_n: min > 0.0,
        in_gamma: gamma_margin > 0.0,
        in_gamma_sigma: gamma_margin > 0.0 && gamma_sigma_margin > 0.0,
        gamma_n_margin: min,
        gamma_margin,
        gamma_sigma_margin,
    })
}

/// Outcome of the structural checks on `F`; `None` marks a vacuous check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseProperties {
    pub derivative_positive: bool,
    pub hypercritical_positive: Option<bool>,
    pub monotone_limit: Option<bool>,
}

impl PhaseProperties {
    pub fn all_pass(&self) -> bool {
        self.derivative_positive
            && self.hypercritical_positive.unwrap_or(true)
            && self.monotone_limit.unwrap_or(true)
    }
}

pub fn phase_properties_check(lambda: &[f64]) -> PhaseProperties {
    let n = lambda.len();
    let derivative_positive = linearization_coeffs(lambda).iter().all(|f| *f > 0.0);
    let p = phase(lambda);
    let hypercritical_positive =
        (p > hypercritical_floor(n)).then(|| lambda.iter().all(|l| *l > 0.0));
    let monotone_limit = lambda.iter().all(|l| *l > 0.0).then(|| {
        let ceiling = phase_ceiling(n);
        let values: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|t| phase(&lambda.iter().map(|l| t * l).collect::<Vec<_>>()))
            .collect();
        values.windows(2).all(|w| w[0] < w[1])
            && values.iter().all(|v| *v < ceiling)
            && ceiling - values[3] < ceiling - values[0]
    });
    PhaseProperties {
        derivative_positive,
        hypercritical_positive,
        monotone_limit,
    }
}

/// θ̂ on both branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HatTheta {
    /// Principal argument in (−π, π] of the grid mean of `Π_j (1 + iλ_j)`.
    pub principal: f64,
    /// Grid mean of `Σ_j arctan λ_j`, with no branch cut.
    pub unwrapped: f64,
    pub mean_modulus: f64,
}

const REDUCE_CHUNK: usize = 4096;

/// Computes θ̂ by streaming over grid points; no per-point matrices are stored.
pub fn hat_theta(u: &ScalarField, g: &BackgroundForm, s: &AlmostHermitianStructure) -> Result<HatTheta> {
    require_grid(u.spec(), s.spec())?;
    let spec = *u.spec();
    let v = u.values();
    let partials: Vec<(Complex64, f64)> = (0..spec.len())
        .into_par_iter()
        .step_by(REDUCE_CHUNK)
        .map(|start| -> Result<(Complex64, f64)> {
            let end = (start + REDUCE_CHUNK).min(spec.len());
            let mut z = Complex64::new(0.0, 0.0);
            let mut a = 0.0;
            for idx in start..end {
                let gt = omega_u_at(g, v, s, idx);
                let eig = generalized_hermitian_eigen(&gt, s.chi(idx))?;
                let mut p = Complex64::new(1.0, 0.0);
                for l in eig.values() {
                    p *= Complex64::new(1.0, *l);
                }
                z += p;
                a += phase(eig.values());
            }
            Ok((z, a))
        })
        .collect::<Result<_>>()?;
    let count = spec.len() as f64;
    let (z, a) = partials
        .iter()
        .fold((Complex64::new(0.0, 0.0), 0.0), |(z, a), (pz, pa)| (z + pz, a + pa));
    let z = z / count;
    if z.norm() < 1e-12 {
        return Err(DhymError::State(format!(
            "averaged phase integrand has modulus {:e}; argument undefined",
            z.norm()
        )));
    }
    Ok(HatTheta {
        principal: z.arg(),
        unwrapped: a / count,
        mean_modulus: z.norm(),
    })
}
