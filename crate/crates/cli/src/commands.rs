//! Command implementations. Exit codes: 0 ok, 1 check failed, 2 config or
//! precondition error, 3 nonconvergence, 4 invariant or structure violation,
//! 5 path failure.

use std::fs;
use std::path::Path;

use dhym_core::report::KeyValue;
use dhym_core::solver::{
    load_manifest, resume_continuity_path, state_from_checkpoint, write_checkpoint, PathObserver,
};
use dhym_core::{
    check_c_subsolution, check_concavity_at_state, check_eigenvalue_inequalities, check_supersolution,
    continuity_path, manufacture, manufacture_analytic, save_records, snapshot, solve, track_path,
    validate_structure, ContinuityState, DhymError, FieldRecord, ScalarField,
};

use crate::config::{self, analytic, sample, sample_or_zero, ConfigError, HValue, Mode, RunConfig, Setup};
use crate::record::{self, Record};
use crate::CommonArgs;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NONCONVERGENCE: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;
pub const EXIT_PATH: u8 = 5;

pub const SOLUTION_FILE: &str = "solution.field";
pub const H_FILE: &str = "h.field";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Core(core) => core.into(),
            other => Failure::new(EXIT_CONFIG, other.to_string()),
        }
    }
}

impl From<DhymError> for Failure {
    fn from(e: DhymError) -> Self {
        Failure::new(core_exit_code(&e), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

pub fn core_exit_code(e: &DhymError) -> u8 {
    match e {
        DhymError::NonConvergence { .. } | DhymError::LineSearch { .. } | DhymError::LinearSolve { .. } => {
            EXIT_NONCONVERGENCE
        }
        DhymError::State(_) | DhymError::NotPositiveDefinite { .. } => EXIT_INVARIANT,
        DhymError::Path { .. } => EXIT_PATH,
        DhymError::Domain(_) | DhymError::GridMismatch(_) | DhymError::Format(_) | DhymError::Io(_) => EXIT_CONFIG,
    }
}

type Outcome = Result<u8, Failure>;

fn load(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output.directory = dir.clone();
    }
    Ok(cfg)
}

/// Builds the geometry and stops with exit 4 if the structure is invalid.
fn setup(cfg: &RunConfig) -> Result<Setup, Failure> {
    let structure = config::build_structure(&cfg.geometry)?;
    let report = validate_structure(&structure);
    if !report.all_pass() {
        print!("{}", report.render("structure."));
        return Err(Failure::new(EXIT_INVARIANT, "structure validation failed"));
    }
    Ok(cfg.setup_with(structure)?)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    let dir = cfg.output.directory.as_path();
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn resolve_h(cfg: &RunConfig, st: &Setup) -> Result<ScalarField, Failure> {
    let p = &cfg.problem;
    if let Some(file) = &p.h_file {
        let rec = dhym_core::load_field(file)?;
        if *rec.field.spec() != st.spec {
            return Err(Failure::new(EXIT_CONFIG, format!("{} is on a different grid", file.display())));
        }
        return Ok(rec.field);
    }
    match p.h.as_ref().expect("validated") {
        HValue::Constant(h) => Ok(ScalarField::constant(st.spec, *h)),
        HValue::Keyword(_) => manufactured_h(cfg, st),
    }
}

fn manufactured_h(cfg: &RunConfig, st: &Setup) -> Result<ScalarField, Failure> {
    let src = cfg
        .problem
        .u_star
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_CONFIG, "problem.u_star is required"))?;
    match analytic(src)? {
        Some(p) => {
            p.check(&st.spec)?;
            Ok(manufacture_analytic(&p, &st.omega, &st.structure)?)
        }
        None => Ok(manufacture(&sample(src, st.spec)?, &st.omega, &st.structure)?),
    }
}

fn require_mode(cfg: &RunConfig, allowed: &[Mode], command: &str) -> Result<(), Failure> {
    if allowed.contains(&cfg.problem.mode) {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_CONFIG,
            format!("`dhym {command}` does not run problem.mode = {:?}", cfg.problem.mode),
        ))
    }
}

pub fn cmd_solve(args: &CommonArgs, skip_subsolution_check: bool) -> Outcome {
    let cfg = load(args)?;
    require_mode(&cfg, &[Mode::Solve, Mode::Manufactured], "solve")?;
    let st = setup(&cfg)?;
    let h = resolve_h(&cfg, &st)?;
    let u_sub = sample_or_zero(cfg.problem.u_sub.as_ref(), st.spec)?;
    let mut rec = Record::new("solve");
    if !skip_subsolution_check {
        let rep = check_c_subsolution(&u_sub, &h, &st.omega, &st.structure)?;
        if !rep.is_subsolution {
            print!("{}", rep.render("subsolution."));
            return Err(Failure::new(EXIT_CONFIG, "u_sub is not a C-subsolution for h"));
        }
        rec.section("subsolution", record::subsolution(&rep));
    }
    let u0 = sample_or_zero(cfg.problem.u0.as_ref(), st.spec)?;
    let dir = output_dir(&cfg)?;
    let (u, c, report) = match solve(&h, &u0, 0.0, &st.omega, &st.structure, &cfg.solver.options()) {
        Ok(v) => v,
        Err(e) => {
            rec.set("status", "failed").set("error", e.to_string());
            if let DhymError::NonConvergence { history, .. } = &e {
                rec.set("residual_history", history.clone());
            }
            rec.write(dir, &cfg)?;
            return Err(e.into());
        }
    };
    save_records(
        dir.join(SOLUTION_FILE),
        &[FieldRecord::new("u", u.clone())
            .with("c", c)
            .with("residual", report.residual)
            .with("iterations", report.iterations)],
    )?;
    let solved = h.add_constant(c);
    let snap = snapshot(&u, &u_sub, &solved, &st.omega, &st.structure)?;
    let ineq = check_eigenvalue_inequalities(&snap, &solved);
    let conc = check_concavity_at_state(&u, &st.omega, &st.structure, cfg.solver.concavity_trials, cfg.seed)?;
    rec.set("status", "converged")
        .set("c", c)
        .set("residual", report.residual)
        .set("iterations", report.iterations as i64)
        .set("residual_history", report.history.clone())
        .set("u_max_abs", u.max_abs())
        .section("snapshot", record::snapshot(&snap))
        .section("eigenvalue_inequalities", record::inequalities(&ineq))
        .section("concavity", record::concavity(&conc));
    if cfg.problem.mode == Mode::Manufactured {
        let src = cfg.problem.u_star.as_ref().expect("validated");
        let exact = sample(src, st.spec)?;
        let err = u.zip_map(&exact, |a, b| a - b)?.mean_zero().max_abs();
        rec.set("max_error_vs_u_star", err);
    }
    rec.write(dir, &cfg)?;
    println!("converged: iterations={} residual={:e} c={c:e}", report.iterations, report.residual);
    if !(ineq.passes() && conc.passes) {
        return Err(Failure::new(EXIT_INVARIANT, "eigenvalue inequalities or concavity violated at the solution"));
    }
    Ok(EXIT_OK)
}

pub fn cmd_path(args: &CommonArgs, restart: bool) -> Outcome {
    let cfg = load(args)?;
    require_mode(&cfg, &[Mode::Path], "path")?;
    let st = setup(&cfg)?;
    let h1 = resolve_h(&cfg, &st)?;
    let u_hat = sample_or_zero(cfg.problem.u_hat.as_ref(), st.spec)?;
    let u_sub = sample_or_zero(cfg.problem.u_sub.as_ref(), st.spec)?;
    let sup = check_supersolution(&u_hat, &h1, &st.omega, &st.structure)?;
    if !sup.passes() {
        print!("{}", sup.render("supersolution."));
        return Err(Failure::new(EXIT_CONFIG, "u_hat is not a hypercritical supersolution for h₁"));
    }
    let dir = output_dir(&cfg)?.to_path_buf();
    let (opts, path_opts) = (cfg.solver.options(), cfg.path.options());

    let mut next_index = 0;
    let mut resume_from = None;
    if restart {
        let manifest = load_manifest(&dir)?;
        let last = manifest
            .last()
            .ok_or_else(|| Failure::new(EXIT_CONFIG, "no checkpoint to restart from"))?;
        let state = state_from_checkpoint(last, &h1, &u_hat, &u_sub, &st.omega, &st.structure)?;
        next_index = last.index + 1;
        resume_from = Some(state);
    } else if dir.join(dhym_core::solver::MANIFEST_FILE).exists() {
        fs::remove_file(dir.join(dhym_core::solver::MANIFEST_FILE))?;
    }

    let every = cfg.output.checkpoint_every;
    let mut seen = 0usize;
    let mut written: Option<f64> = resume_from.as_ref().map(|s| s.t);
    let skip_first = resume_from.is_some();
    let mut observer = |state: &ContinuityState| -> dhym_core::Result<()> {
        let k = seen;
        seen += 1;
        if (skip_first && k == 0) || !state.flags.all_pass() || !k.is_multiple_of(every) {
            return Ok(());
        }
        write_checkpoint(&dir, next_index, state)?;
        next_index += 1;
        written = Some(state.t);
        Ok(())
    };
    let obs: &mut PathObserver<'_> = &mut observer;
    let run = match resume_from {
        Some(from) => resume_continuity_path(from, &h1, &u_hat, &u_sub, &st.omega, &st.structure, &opts, &path_opts, Some(obs)),
        None => continuity_path(&h1, &u_hat, &u_sub, &st.omega, &st.structure, &opts, &path_opts, Some(obs)),
    }?;

    // Keep the last good state on disk even when it fell between checkpoints.
    if let Some(last_good) = run.states.iter().rev().find(|s| s.flags.all_pass()) {
        if written != Some(last_good.t) {
            write_checkpoint(&dir, next_index, last_good)?;
        }
    }

    let states = &run.states;
    let h1v = h1.values()[0];
    let tracked = track_path(states, h1v, &run.theta0, &u_sub, &st.omega, &st.structure)?;
    let mut series = Vec::new();
    dhym_core::monitors::write_series(&mut series, &tracked.rows)?;
    fs::write(dir.join(&cfg.output.series_file), series)?;

    let last = states.last().expect("the start state is always recorded");
    let mut rec = Record::new("path");
    rec.set("completed", run.completed())
        .set("states", states.len() as i64)
        .set("rejected_steps", run.rejected_steps as i64)
        .set("final_t", last.t)
        .set("final_c", last.c)
        .set("final_residual", last.residual)
        .set("final_flags", last.flags.encode())
        .set("monitor_violations", tracked.violations.len() as i64)
        .section("supersolution", record::supersolution(&sup));
    if let Some(f) = &run.failure {
        rec.set("failure", f.to_string());
    }
    rec.write(&dir, &cfg)?;

    if let Some(f) = run.failure {
        return Err(Failure::new(EXIT_PATH, f.to_string()));
    }
    if !tracked.passes() {
        return Err(Failure::new(EXIT_INVARIANT, "path monitor recorded invariant violations"));
    }
    println!("path completed: states={} final c={:e}", states.len(), last.c);
    Ok(EXIT_OK)
}

#[derive(Clone, Copy, Debug)]
pub struct CheckSelection {
    pub subsolution: bool,
    pub supersolution: bool,
    pub structure: bool,
}

pub fn cmd_check(args: &CommonArgs, which: CheckSelection) -> Outcome {
    let cfg = load(args)?;
    let structure = config::build_structure(&cfg.geometry)?;
    if which.structure {
        let rep = validate_structure(&structure);
        print!("{}", rep.render("structure."));
        if !rep.all_pass() {
            return Err(Failure::new(EXIT_INVARIANT, "structure validation failed"));
        }
    }
    if !(which.subsolution || which.supersolution) {
        return Ok(EXIT_OK);
    }
    let st = cfg.setup_with(structure)?;
    let h = resolve_h(&cfg, &st)?;
    let mut ok = true;
    if which.subsolution {
        let u_sub = sample_or_zero(cfg.problem.u_sub.as_ref(), st.spec)?;
        let rep = check_c_subsolution(&u_sub, &h, &st.omega, &st.structure)?;
        print!("{}", rep.render("subsolution."));
        ok &= rep.is_subsolution;
    }
    if which.supersolution {
        let u_hat = sample_or_zero(cfg.problem.u_hat.as_ref(), st.spec)?;
        let rep = check_supersolution(&u_hat, &h, &st.omega, &st.structure)?;
        print!("{}", rep.render("supersolution."));
        ok &= rep.passes();
    }
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_manufacture(args: &CommonArgs) -> Outcome {
    let cfg = load(args)?;
    let st = setup(&cfg)?;
    let h = manufactured_h(&cfg, &st)?;
    let dir = output_dir(&cfg)?;
    save_records(dir.join(H_FILE), &[FieldRecord::new("h", h.clone())])?;
    let mut rec = Record::new("manufacture");
    rec.set("h_min", h.min()).set("h_max", h.max()).set("h_file", H_FILE);
    rec.write(dir, &cfg)?;
    println!("h written: min={} max={}", h.min(), h.max());
    Ok(EXIT_OK)
}
