//! Discrete nonlinear system `Σ arctan λ_i(u) − h − c = 0`, augmented Newton
//! steps in `(u, c)` and the continuity path.

mod linear;
mod path;

pub use linear::{
    apply_linearization, solve_augmented, LinearSolveReport, Linearization, PointwiseState,
    SpectralPreconditioner, ELLIPTICITY_FLOOR,
};
pub use path::{
    continuity_path, load_manifest, resume_continuity_path, write_checkpoint, CheckpointEntry,
    state_from_checkpoint, theta0, ContinuityState, PathFlags, PathObserver, PathOptions, PathRun,
    C_TOL, MANIFEST_FILE, TARGET_TOL,
};

use rayon::prelude::*;

use crate::analytic::TrigPotential;
use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{require_grid, ScalarField};
use crate::linalg::generalized_hermitian_eigen;
use crate::phase::{hypercritical_floor, phase};

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Max-norm residual target.
    pub residual_tol: f64,
    pub max_newton_iters: usize,
    /// Relative tolerance of the inner Krylov solve.
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub max_linear_iters: usize,
    /// Line-search backtracking factor.
    pub damping: f64,
    pub min_step: f64,
    pub hypercritical_guard_margin: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            residual_tol: 1e-10,
            max_newton_iters: 50,
            linear_tol: 1e-12,
            gmres_restart: 30,
            max_linear_iters: 600,
            damping: 0.5,
            min_step: 2f64.powi(-20),
            hypercritical_guard_margin: 1e-8,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.residual_tol,
            self.linear_tol,
            self.min_step,
            self.hypercritical_guard_margin,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || self.max_newton_iters == 0
            || self.gmres_restart == 0
            || self.max_linear_iters == 0
        {
            return Err(DhymError::domain("solver options must be positive"));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(DhymError::domain("damping must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Residual field with the extremes needed by the guard.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub residual: Vec<f64>,
    pub max_residual: f64,
    pub hypercritical_margin: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn evaluate(
    u: &[f64],
    c: f64,
    h: &[f64],
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<Evaluation> {
    let n = s.spec().n();
    let floor = hypercritical_floor(n);
    let pairs: Vec<(f64, f64)> = (0..s.spec().len())
        .into_par_iter()
        .map(|idx| -> Result<(f64, f64)> {
            let gt = omega_u_at(g, u, s, idx);
            let eig = generalized_hermitian_eigen(&gt, s.chi(idx))?;
            let p = phase(eig.values());
            Ok((p - h[idx] - c, p - floor))
        })
        .collect::<Result<_>>()?;
    let residual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let margin = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(Evaluation {
        max_residual: max_abs(&residual),
        residual,
        hypercritical_margin: margin,
    })
}

/// `phase(λ(ω_u)) − h − c` per point.
pub fn residual(
    u: &ScalarField,
    c: f64,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<ScalarField> {
    require_grid(u.spec(), s.spec())?;
    require_grid(h.spec(), s.spec())?;
    let e = evaluate(u.values(), c, h.values(), g, s)?;
    ScalarField::new(*u.spec(), e.residual)
}

/// Per-point phase `Σ arctan λ_i(ω_u)`.
pub fn phase_field(u: &ScalarField, g: &BackgroundForm, s: &AlmostHermitianStructure) -> Result<ScalarField> {
    require_grid(u.spec(), s.spec())?;
    let zeros = vec![0.0; u.values().len()];
    let e = evaluate(u.values(), 0.0, &zeros, g, s)?;
    ScalarField::new(*u.spec(), e.residual)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: f64,
    pub residual_before: f64,
    pub residual_after: f64,
    pub delta_c: f64,
    pub linear: LinearSolveReport,
    pub hypercritical_margin: f64,
}

/// One damped Newton step on the augmented system.
pub fn newton_step(
    u: &ScalarField,
    c: f64,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
    opts: &SolveOptions,
) -> Result<(ScalarField, f64, StepReport)> {
    require_grid(u.spec(), s.spec())?;
    require_grid(h.spec(), s.spec())?;
    let (lin, state) = Linearization::at_state(u, g, s)?;
    if !(state.hypercritical_margin >= opts.hypercritical_guard_margin) {
        return Err(DhymError::State(format!(
            "state is not hypercritical: min(phase − (n−1)π/2) = {:e}",
            state.hypercritical_margin
        )));
    }
    if !(state.fprime_min >= ELLIPTICITY_FLOOR) {
        return Err(DhymError::State(format!(
            "linearization is not elliptic (min F^ii = {:e})",
            state.fprime_min
        )));
    }
    let r: Vec<f64> = state
        .phase
        .iter()
        .zip(h.values())
        .map(|(p, hv)| p - hv - c)
        .collect();
    let r0 = max_abs(&r);
    if !r0.is_finite() {
        return Err(DhymError::State("residual is not finite".into()));
    }
    let pre = SpectralPreconditioner::new(&lin);
    let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
    let (du, dc, linear) = solve_augmented(
        &lin,
        &pre,
        &rhs,
        opts.linear_tol,
        opts.gmres_restart,
        opts.max_linear_iters,
    )?;
    // exact mean-zero increment
    let du = ScalarField::new(*u.spec(), du)?.mean_zero();

    let mut step = 1.0;
    let mut last = r0;
    while step >= opts.min_step {
        let trial: Vec<f64> = u
            .values()
            .par_iter()
            .zip(du.values().par_iter())
            .map(|(a, b)| a + step * b)
            .collect();
        let tc = c + step * dc;
        if let Ok(e) = evaluate(&trial, tc, h.values(), g, s) {
            last = e.max_residual;
            let decrease = e.max_residual <= (1.0 - 1e-4 * step) * r0 || e.max_residual <= opts.residual_tol;
            if e.hypercritical_margin >= opts.hypercritical_guard_margin && e.max_residual.is_finite() && decrease {
                let report = StepReport {
                    step,
                    residual_before: r0,
                    residual_after: e.max_residual,
                    delta_c: step * dc,
                    linear,
                    hypercritical_margin: e.hypercritical_margin,
                };
                return Ok((ScalarField::new(*u.spec(), trial)?.mean_zero(), tc, report));
            }
        }
        step *= opts.damping;
    }
    Err(DhymError::LineSearch {
        step: step / opts.damping,
        residual: last,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Newton steps taken.
    pub iterations: usize,
    pub residual: f64,
    /// Max-norm residual before each step and after the last.
    pub history: Vec<f64>,
    pub steps: Vec<StepReport>,
}

/// Newton iteration to `residual_tol`. At least one step is always taken, so
/// an exact starting point reports one iteration with a zero increment.
pub fn solve(
    h: &ScalarField,
    u0: &ScalarField,
    c0: f64,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
    opts: &SolveOptions,
) -> Result<(ScalarField, f64, SolveReport)> {
    opts.validate()?;
    require_grid(u0.spec(), s.spec())?;
    require_grid(h.spec(), s.spec())?;
    let mut u = u0.mean_zero();
    let mut c = c0;
    let start = evaluate(u.values(), c, h.values(), g, s)?;
    if !(start.hypercritical_margin >= opts.hypercritical_guard_margin) {
        return Err(DhymError::State(format!(
            "initial state is not hypercritical: min(phase − (n−1)π/2) = {:e}",
            start.hypercritical_margin
        )));
    }
    let mut history = vec![start.max_residual];
    let mut steps = Vec::new();
    let mut res = start.max_residual;
    while steps.is_empty() || res > opts.residual_tol {
        if steps.len() >= opts.max_newton_iters {
            return Err(DhymError::NonConvergence {
                iterations: steps.len(),
                residual: res,
                history,
            });
        }
        let (nu, nc, rep) = newton_step(&u, c, h, g, s, opts)?;
        u = nu;
        c = nc;
        res = rep.residual_after;
        history.push(res);
        steps.push(rep);
    }
    Ok((
        u,
        c,
        SolveReport {
            iterations: steps.len(),
            residual: res,
            history,
            steps,
        },
    ))
}

fn require_hypercritical_field(h: Vec<f64>, s: &AlmostHermitianStructure) -> Result<ScalarField> {
    let n = s.spec().n();
    let floor = hypercritical_floor(n);
    let (worst, min) = h
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(wi, wm), (i, v)| if *v < wm { (i, *v) } else { (wi, wm) });
    if !(min > floor) {
        let x = s.spec().coords(worst);
        return Err(DhymError::domain(format!(
            "manufactured phase is subcritical at point {worst} (x = {:?}): {min} ≤ {floor}",
            &x[..s.spec().real_dim()]
        )));
    }
    ScalarField::new(*s.spec(), h)
}

/// `h := phase(λ(ω_{u*}))` with the discrete Hessian; `u*` solves the
/// discrete instance exactly.
pub fn manufacture(u_star: &ScalarField, g: &BackgroundForm, s: &AlmostHermitianStructure) -> Result<ScalarField> {
    let p = phase_field(u_star, g, s)?;
    require_hypercritical_field(p.into_values(), s)
}

/// `h := phase(λ(ω_{u*}))` with exact derivatives of an analytic `u*`, so the
/// discrete solution differs from `u*` by the truncation error only.
pub fn manufacture_analytic(
    u_star: &TrigPotential,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<ScalarField> {
    let spec = *s.spec();
    u_star.check(&spec)?;
    let d = spec.real_dim();
    let h: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|idx| -> Result<f64> {
            let x = spec.coords(idx);
            let grad = u_star.gradient(&x[..d]);
            let hess = u_star.hessian(&x[..d]);
            let raw = s.geometry(idx).complex_hessian(&grad, &hess);
            let gt = g.at(idx).add(&raw.hermitian_part().0);
            let eig = generalized_hermitian_eigen(&gt, s.chi(idx))?;
            Ok(phase(eig.values()))
        })
        .collect::<Result<_>>()?;
    require_hypercritical_field(h, s)
}
