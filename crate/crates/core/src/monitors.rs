//! Runtime diagnostics for every quantity bounded by the a priori estimates.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{first_derivative, require_grid, ScalarField};
use crate::linalg::{complex_inverse, generalized_hermitian_eigen, CMatrix, MAX_REAL};
use crate::phase::{hypercritical_floor, Spectrum};
use crate::solver::ContinuityState;

/// Tolerance on the inequalities that hold with equality allowed in the continuum.
pub const INEQUALITY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateSnapshot {
    /// `sup |u − u̲|`.
    pub c0_sub: f64,
    /// `sup |u|`.
    pub c0: f64,
    /// `sup |∇u|_χ`.
    pub grad_sup: f64,
    /// `sup μ₁(∇²u)`.
    pub mu1_sup: f64,
    pub lambda_min: f64,
    /// `min λ_{n−1} λ_n`.
    pub lambda_product_min: f64,
    pub phase_min: f64,
    pub phase_max: f64,
    pub trace_f_min: f64,
}

#[derive(Clone, Copy)]
struct PointStats {
    grad2: f64,
    lambda_min: f64,
    product: f64,
    phase: f64,
    trace: f64,
}

/// `|du|²_χ = 2 Σ χ^{ij̄} e_i(u) conj(e_j(u))`.
fn gradient_norm2(s: &AlmostHermitianStructure, v: &[f64], idx: usize) -> Result<f64> {
    let spec = s.spec();
    let n = spec.n();
    let mut grad = [0.0; MAX_REAL];
    for a in 0..spec.real_dim() {
        grad[a] = first_derivative(v, spec, idx, a + 1);
    }
    let geom = s.geometry(idx);
    let e: Vec<Complex64> = (0..n).map(|i| geom.apply_vector(i, false, &grad)).collect();
    let chi = s.chi(idx);
    let inv = if chi.is_identity() {
        CMatrix::identity(n)
    } else {
        let flat: Vec<Complex64> = (0..n * n).map(|k| chi[(k / n, k % n)]).collect();
        let (inv, _) = complex_inverse(&flat, n)
            .ok_or(DhymError::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
        CMatrix::from_fn(n, |i, j| inv[i * n + j])
    };
    let mut s2 = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            // χ^{ij̄} is the (j, i) entry of the inverse of χ_{ij̄}.
            s2 += inv[(j, i)] * e[i] * e[j].conj();
        }
    }
    Ok(2.0 * s2.re)
}

pub fn snapshot(
    u: &ScalarField,
    u_sub: &ScalarField,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<EstimateSnapshot> {
    require_grid(u.spec(), s.spec())?;
    require_grid(u_sub.spec(), s.spec())?;
    require_grid(h.spec(), s.spec())?;
    let v = u.values();
    let stats: Vec<PointStats> = (0..s.spec().len())
        .into_par_iter()
        .map(|idx| -> Result<PointStats> {
            let eig = generalized_hermitian_eigen(&omega_u_at(g, v, s, idx), s.chi(idx))?;
            let sp = Spectrum::from_lambda(eig.values());
            Ok(PointStats {
                grad2: gradient_norm2(s, v, idx)?,
                lambda_min: sp.lambda_min(),
                product: sp.lambda_product_min(),
                phase: sp.phase(),
                trace: sp.trace_fprime(),
            })
        })
        .collect::<Result<_>>()?;
    let fold = |f: fn(&PointStats) -> f64, init: f64, op: fn(f64, f64) -> f64| {
        stats.iter().map(f).fold(init, op)
    };
    let mu1 = u.real_hessian_eigen_max(s)?;
    Ok(EstimateSnapshot {
        c0_sub: u
            .values()
            .iter()
            .zip(u_sub.values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
        c0: u.max_abs(),
        grad_sup: fold(|p| p.grad2, 0.0, f64::max).max(0.0).sqrt(),
        mu1_sup: mu1.max(),
        lambda_min: fold(|p| p.lambda_min, f64::INFINITY, f64::min),
        lambda_product_min: fold(|p| p.product, f64::INFINITY, f64::min),
        phase_min: fold(|p| p.phase, f64::INFINITY, f64::min),
        phase_max: fold(|p| p.phase, f64::NEG_INFINITY, f64::max),
        trace_f_min: fold(|p| p.trace, f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenInequalityReport {
    /// False when `phase_min ≤ (n−1)π/2`; the checks below are then vacuous.
    pub applicable: bool,
    pub product_ok: bool,
    pub lower_ok: bool,
    /// `λ_{n−1}λ_n − 1`.
    pub product_margin: f64,
    /// `tan(inf h − (n−1)π/2)`.
    pub lower_bound: f64,
    /// `λ_n − lower_bound`.
    pub lower_margin: f64,
}

impl EigenInequalityReport {
    pub fn passes(&self) -> bool {
        !self.applicable || (self.product_ok && self.lower_ok)
    }
}

/// `λ_jλ_n ≥ 1` and `λ_n ≥ tan(inf h − (n−1)π/2)` with tolerance 1e−8. `h`
/// is the right-hand side actually solved (including any constant).
pub fn check_eigenvalue_inequalities(snap: &EstimateSnapshot, h: &ScalarField) -> EigenInequalityReport {
    let floor = hypercritical_floor(h.spec().n());
    let applicable = snap.phase_min > floor;
    let lower_bound = (h.min() - floor).tan();
    let product_margin = snap.lambda_product_min - 1.0;
    let lower_margin = snap.lambda_min - lower_bound;
    EigenInequalityReport {
        applicable,
        product_ok: applicable && product_margin >= -INEQUALITY_TOL,
        lower_ok: applicable && lower_margin >= -INEQUALITY_TOL,
        product_margin,
        lower_bound,
        lower_margin,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcavityReport {
    pub trials: usize,
    /// Largest value of the second variation seen.
    pub max_value: f64,
    pub passes: bool,
}

/// Random Hermitian matrix with entries in [−1, 1].
pub fn random_hermitian<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(n);
    for i in 0..n {
        m[(i, i)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for j in (i + 1)..n {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Second variation of `F` at `g̃` along a frame-component direction `Ξ`:
/// the direction is rotated into the χ-orthonormal eigenbasis first.
pub fn second_variation_at(gtilde: &CMatrix, chi: &CMatrix, direction: &CMatrix) -> Result<f64> {
    let eig = generalized_hermitian_eigen(gtilde, chi)?;
    let sp = Spectrum::from_lambda(eig.values());
    let w = eig.vectors;
    // ξ_kl = Σ_ij conj(W_ik) Ξ_ij W_jl
    let xi = w.adjoint().mul(direction).mul(&w);
    Ok(sp.second_variation(&xi))
}

pub fn check_concavity_at_state(
    u: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
    trials: usize,
    seed: u64,
) -> Result<ConcavityReport> {
    require_grid(u.spec(), s.spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = s.spec().n();
    let mut max_value = f64::NEG_INFINITY;
    for _ in 0..trials {
        let idx = rng.gen_range(0..s.spec().len());
        let dir = random_hermitian(n, &mut rng);
        let q = second_variation_at(&omega_u_at(g, u.values(), s, idx), s.chi(idx), &dir)?;
        max_value = max_value.max(q);
    }
    Ok(ConcavityReport {
        trials,
        max_value,
        passes: trials == 0 || max_value <= 1e-12,
    })
}

/// One row of the path time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub c: f64,
    pub residual: f64,
    pub snapshot: EstimateSnapshot,
}

pub const SERIES_COLUMNS: [&str; 11] = [
    "t",
    "c_t",
    "residual",
    "c0",
    "grad_sup",
    "mu1_sup",
    "lambda_min",
    "lambda_product_min",
    "phase_min",
    "phase_max",
    "trace_F_min",
];

#[derive(Clone, Debug, PartialEq)]
pub struct PathViolation {
    pub index: usize,
    pub t: f64,
    pub reasons: Vec<&'static str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathReport {
    pub rows: Vec<SeriesRow>,
    pub violations: Vec<PathViolation>,
}

impl PathReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks the `c_t` window and the hypercritical target at every state
/// and collects snapshot time series.
pub fn track_path(
    states: &[ContinuityState],
    h1: f64,
    theta0: &ScalarField,
    u_sub: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<PathReport> {
    let inf_theta0 = theta0.min();
    let sup_gap = theta0.values().iter().map(|t| h1 - t).fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::with_capacity(states.len());
    let mut violations = Vec::new();
    for (index, st) in states.iter().enumerate() {
        let mut reasons = Vec::new();
        if st.c > INEQUALITY_TOL {
            reasons.push("c_t > 0");
        }
        if st.c < -st.t * sup_gap - INEQUALITY_TOL {
            reasons.push("c_t below −t·sup(h₁ − θ₀)");
        }
        let target = theta0.map(|th| (1.0 - st.t) * th + st.t * h1 + st.c);
        if target.min() < inf_theta0 - 1e-10 {
            reasons.push("target below inf θ₀");
        }
        if !reasons.is_empty() {
            violations.push(PathViolation {
                index,
                t: st.t,
                reasons,
            });
        }
        rows.push(SeriesRow {
            t: st.t,
            c: st.c,
            residual: st.residual,
            snapshot: snapshot(&st.u, u_sub, &target, g, s)?,
        });
    }
    Ok(PathReport { rows, violations })
}

/// Writes the series as comma-separated text with a header row.
pub fn write_series<W: Write>(w: &mut W, rows: &[SeriesRow]) -> Result<()> {
    writeln!(w, "{}", SERIES_COLUMNS.join(","))?;
    for r in rows {
        let s = &r.snapshot;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.c,
            r.residual,
            s.c0,
            s.grad_sup,
            s.mu1_sup,
            s.lambda_min,
            s.lambda_product_min,
            s.phase_min,
            s.phase_max,
            s.trace_f_min
        )?;
    }
    Ok(())
}
