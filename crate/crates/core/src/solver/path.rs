//! Continuity path `Σ arctan λ_i(u_t) = (1−t)θ₀ + t·h₁ + c_t` from a
//! supersolution, with checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{phase_field, solve, SolveOptions};
use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{require_grid, ScalarField};
use crate::io::{load_field, save_records, FieldRecord};
use crate::linalg::generalized_hermitian_eigen;
use crate::phase::is_hypercritical;
use crate::subsolution::{check_c_subsolution, check_supersolution};

/// Slack on the `c_t` window.
pub const C_TOL: f64 = 1e-8;
/// Slack on the hypercritical-target bound.
pub const TARGET_TOL: f64 = 1e-10;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct PathOptions {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_growth: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            dt_init: 0.1,
            dt_min: 1e-4,
            dt_growth: 1.5,
        }
    }
}

impl PathOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_init >= self.dt_min && self.dt_init <= 1.0 && self.dt_growth >= 1.0) {
            return Err(DhymError::domain(
                "path options need 0 < dt_min ≤ dt_init ≤ 1 and dt_growth ≥ 1",
            ));
        }
        Ok(())
    }
}

/// The invariants recorded at an accepted state, with margins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathFlags {
    /// `c_t ≤ 0`.
    pub c_nonpositive: bool,
    /// `c_t ≥ −t·sup(h₁ − θ₀)`.
    pub c_lower_bound: bool,
    /// `min((1−t)θ₀ + t·h₁ + c_t) ≥ inf θ₀`.
    pub target_above_inf_theta0: bool,
    /// `u̲` is a C-subsolution for the current target.
    pub subsolution: bool,
    /// `λ(u_t) ∈ Γ_n` at every point.
    pub gamma_n: bool,
    pub c_lower_margin: f64,
    pub target_margin: f64,
    pub subsolution_margin: f64,
    pub lambda_min: f64,
}

impl PathFlags {
    pub fn all_pass(&self) -> bool {
        self.c_nonpositive && self.c_lower_bound && self.target_above_inf_theta0 && self.subsolution && self.gamma_n
    }

    /// Compact `name=0|1` list used in checkpoint headers.
    pub fn encode(&self) -> String {
        let b = |v: bool| if v { 1 } else { 0 };
        format!(
            "c_le_0={},c_ge_lower={},target_ge_inf_theta0={},subsolution={},gamma_n={}",
            b(self.c_nonpositive),
            b(self.c_lower_bound),
            b(self.target_above_inf_theta0),
            b(self.subsolution),
            b(self.gamma_n)
        )
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.c_nonpositive {
            out.push("c_t > 0");
        }
        if !self.c_lower_bound {
            out.push("c_t below −t·sup(h₁ − θ₀)");
        }
        if !self.target_above_inf_theta0 {
            out.push("target below inf θ₀");
        }
        if !self.subsolution {
            out.push("subsolution margin not positive");
        }
        if !self.gamma_n {
            out.push("λ outside Γ_n");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityState {
    pub t: f64,
    /// Mean-zero potential.
    pub u: ScalarField,
    pub c: f64,
    pub newton_iters: usize,
    pub residual: f64,
    pub flags: PathFlags,
}

#[derive(Debug)]
pub struct PathRun {
    pub states: Vec<ContinuityState>,
    pub theta0: ScalarField,
    /// Solves that failed and triggered a step reduction.
    pub rejected_steps: usize,
    /// Set when the path stopped before `t = 1`.
    pub failure: Option<DhymError>,
}

impl PathRun {
    pub fn completed(&self) -> bool {
        self.failure.is_none() && self.states.last().is_some_and(|s| s.t == 1.0)
    }
}

/// Called with every accepted state, e.g. to write checkpoints.
pub type PathObserver<'a> = dyn FnMut(&ContinuityState) -> Result<()> + 'a;

struct PathData<'a> {
    h1: f64,
    theta0: ScalarField,
    inf_theta0: f64,
    sup_gap: f64,
    u_sub: &'a ScalarField,
    g: &'a BackgroundForm,
    s: &'a AlmostHermitianStructure,
}

impl PathData<'_> {
    fn target(&self, t: f64) -> ScalarField {
        self.theta0.map(|th| (1.0 - t) * th + t * self.h1)
    }

    fn flags(&self, t: f64, u: &ScalarField, c: f64) -> Result<PathFlags> {
        let c_lower = -t * self.sup_gap;
        let effective = self.target(t).add_constant(c);
        let target_margin = effective.min() - self.inf_theta0;
        let n = self.s.spec().n();
        let subsolution_margin = if effective.values().iter().all(|v| is_hypercritical(n, *v)) {
            check_c_subsolution(self.u_sub, &effective, self.g, self.s)?.worst_margin
        } else {
            f64::NAN
        };
        let lambda_min = lambda_min(u, self.g, self.s)?;
        Ok(PathFlags {
            c_nonpositive: c <= C_TOL,
            c_lower_bound: c >= c_lower - C_TOL,
            target_above_inf_theta0: target_margin >= -TARGET_TOL,
            subsolution: subsolution_margin > 0.0,
            gamma_n: lambda_min > 0.0,
            c_lower_margin: c - c_lower,
            target_margin,
            subsolution_margin,
            lambda_min,
        })
    }
}

fn lambda_min(u: &ScalarField, g: &BackgroundForm, s: &AlmostHermitianStructure) -> Result<f64> {
    let v = u.values();
    let mins: Vec<f64> = (0..s.spec().len())
        .into_par_iter()
        .map(|idx| -> Result<f64> {
            let eig = generalized_hermitian_eigen(&omega_u_at(g, v, s, idx), s.chi(idx))?;
            Ok(eig.values()[eig.n() - 1])
        })
        .collect::<Result<_>>()?;
    Ok(mins.into_iter().fold(f64::INFINITY, f64::min))
}

fn prepare<'a>(
    h1: &ScalarField,
    u_hat: &ScalarField,
    u_sub: &'a ScalarField,
    g: &'a BackgroundForm,
    s: &'a AlmostHermitianStructure,
) -> Result<PathData<'a>> {
    require_grid(h1.spec(), s.spec())?;
    require_grid(u_hat.spec(), s.spec())?;
    require_grid(u_sub.spec(), s.spec())?;
    if !h1.is_constant() {
        return Err(DhymError::domain(
            "the continuity path supports constant h₁ only",
        ));
    }
    let h1v = h1.values()[0];
    let n = s.spec().n();
    if !is_hypercritical(n, h1v) {
        return Err(DhymError::domain(format!(
            "h₁ = {h1v} outside ((n−1)π/2, nπ/2)"
        )));
    }
    let sup = check_supersolution(u_hat, h1, g, s)?;
    if !sup.is_supersolution {
        return Err(DhymError::domain(format!(
            "û is not a supersolution: min(h₁ − θ₀) = {:e}",
            sup.min_slack
        )));
    }
    if !sup.hypercritical {
        return Err(DhymError::domain(format!(
            "θ₀ is not hypercritical: min(θ₀ − (n−1)π/2) = {:e}",
            sup.hypercritical_margin
        )));
    }
    let sub = check_c_subsolution(u_sub, h1, g, s)?;
    if !sub.is_subsolution {
        return Err(DhymError::domain(format!(
            "u̲ is not a C-subsolution for h₁: worst margin {:e} at point {}",
            sub.worst_margin, sub.worst_point
        )));
    }
    let theta0 = sup.theta0;
    Ok(PathData {
        h1: h1v,
        inf_theta0: theta0.min(),
        sup_gap: h1v - theta0.min(),
        theta0,
        u_sub,
        g,
        s,
    })
}

/// Runs the path from `t = 0` with `(u₀, c₀) = (û − mean û, 0)`.
#[allow(clippy::too_many_arguments)]
pub fn continuity_path(
    h1: &ScalarField,
    u_hat: &ScalarField,
    u_sub: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
    opts: &SolveOptions,
    path_opts: &PathOptions,
    observer: Option<&mut PathObserver<'_>>,
) -> Result<PathRun> {
    opts.validate()?;
    path_opts.validate()?;
    let data = prepare(h1, u_hat, u_sub, g, s)?;
    let u0 = u_hat.mean_zero();
    let residual = super::residual(&u0, 0.0, &data.theta0, g, s)?.max_abs();
    let flags = data.flags(0.0, &u0, 0.0)?;
    let start = ContinuityState {
        t: 0.0,
        u: u0,
        c: 0.0,
        newton_iters: 0,
        residual,
        flags,
    };
    advance(data, start, opts, path_opts, observer)
}

/// Continues a path from a stored state (e.g. the last checkpoint).
#[allow(clippy::too_many_arguments)]
pub fn resume_continuity_path(
    from: ContinuityState,
    h1: &ScalarField,
    u_hat: &ScalarField,
    u_sub: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
    opts: &SolveOptions,
    path_opts: &PathOptions,
    observer: Option<&mut PathObserver<'_>>,
) -> Result<PathRun> {
    opts.validate()?;
    path_opts.validate()?;
    if !(0.0..=1.0).contains(&from.t) {
        return Err(DhymError::domain("resume time outside [0, 1]"));
    }
    require_grid(from.u.spec(), s.spec())?;
    let data = prepare(h1, u_hat, u_sub, g, s)?;
    advance(data, from, opts, path_opts, observer)
}

fn advance(
    data: PathData<'_>,
    start: ContinuityState,
    opts: &SolveOptions,
    path_opts: &PathOptions,
    mut observer: Option<&mut PathObserver<'_>>,
) -> Result<PathRun> {
    let mut states = Vec::new();
    let mut rejected = 0;
    let mut failure = None;
    let mut t = start.t;
    let mut u = start.u.clone();
    let mut c = start.c;
    let start_ok = start.flags.all_pass();
    if !start_ok {
        failure = Some(DhymError::Path {
            t,
            reason: format!("invariants fail at start: {}", start.flags.failures().join(", ")),
        });
    }
    if let Some(obs) = observer.as_deref_mut() {
        obs(&start)?;
    }
    states.push(start);
    let mut dt = path_opts.dt_init;
    while failure.is_none() && t < 1.0 {
        let t_new = if t + dt >= 1.0 { 1.0 } else { t + dt };
        let target = data.target(t_new);
        match solve(&target, &u, c, data.g, data.s, opts) {
            Ok((nu, nc, report)) => {
                let flags = data.flags(t_new, &nu, nc)?;
                let state = ContinuityState {
                    t: t_new,
                    u: nu.clone(),
                    c: nc,
                    newton_iters: report.iterations,
                    residual: report.residual,
                    flags,
                };
                if !flags.all_pass() {
                    failure = Some(DhymError::Path {
                        t: t_new,
                        reason: format!("invariant violated: {}", flags.failures().join(", ")),
                    });
                }
                if let Some(obs) = observer.as_deref_mut() {
                    obs(&state)?;
                }
                states.push(state);
                t = t_new;
                u = nu;
                c = nc;
                dt *= path_opts.dt_growth;
            }
            Err(e) => {
                rejected += 1;
                dt *= 0.5;
                if dt < path_opts.dt_min {
                    failure = Some(DhymError::Path {
                        t,
                        reason: format!("step size fell below dt_min = {:e}; last solver error: {e}", path_opts.dt_min),
                    });
                }
            }
        }
    }
    Ok(PathRun {
        states,
        theta0: data.theta0,
        rejected_steps: rejected,
        failure,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub index: usize,
    pub t: f64,
    pub c: f64,
    pub file: PathBuf,
}

/// Writes `u_t` with header keys `t, c_t, residual, flags` and appends the
/// entry to the manifest in `dir`.
pub fn write_checkpoint(dir: &Path, index: usize, state: &ContinuityState) -> Result<CheckpointEntry> {
    fs::create_dir_all(dir)?;
    let name = format!("checkpoint_{index:05}.field");
    let rec = FieldRecord::new("u", state.u.clone())
        .with("t", state.t)
        .with("c_t", state.c)
        .with("residual", state.residual)
        .with("flags", state.flags.encode());
    save_records(dir.join(&name), &[rec])?;
    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(MANIFEST_FILE))?;
    writeln!(manifest, "{index};{};{};{name}", state.t, state.c)?;
    Ok(CheckpointEntry {
        index,
        t: state.t,
        c: state.c,
        file: dir.join(name),
    })
}

pub fn load_manifest(dir: &Path) -> Result<Vec<CheckpointEntry>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split(';').collect();
            let bad = || DhymError::Format(format!("bad manifest line `{line}`"));
            if parts.len() != 4 {
                return Err(bad());
            }
            Ok(CheckpointEntry {
                index: parts[0].parse().map_err(|_| bad())?,
                t: parts[1].parse().map_err(|_| bad())?,
                c: parts[2].parse().map_err(|_| bad())?,
                file: dir.join(parts[3]),
            })
        })
        .collect()
}

impl CheckpointEntry {
    /// Reloads the stored state; flags are recomputed by the caller if needed.
    pub fn load_state(&self) -> Result<(f64, ScalarField, f64, f64)> {
        let rec = load_field(&self.file)?;
        let t = rec.get_f64("t")?;
        let c = rec.get_f64("c_t")?;
        let residual = rec.get_f64("residual")?;
        Ok((t, rec.field, c, residual))
    }
}

/// Recomputes the path flags for a reloaded state.
#[allow(clippy::too_many_arguments)]
pub fn state_from_checkpoint(
    entry: &CheckpointEntry,
    h1: &ScalarField,
    u_hat: &ScalarField,
    u_sub: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<ContinuityState> {
    let (t, u, c, residual) = entry.load_state()?;
    let data = prepare(h1, u_hat, u_sub, g, s)?;
    let flags = data.flags(t, &u, c)?;
    Ok(ContinuityState {
        t,
        u,
        c,
        newton_iters: 0,
        residual,
        flags,
    })
}

/// θ₀ = phase of û, exposed for monitors.
pub fn theta0(u_hat: &ScalarField, g: &BackgroundForm, s: &AlmostHermitianStructure) -> Result<ScalarField> {
    phase_field(u_hat, g, s)
}
