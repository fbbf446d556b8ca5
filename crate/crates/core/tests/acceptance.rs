//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use dhym_core::analytic::TrigPotential;
use dhym_core::linalg::CMatrix;
use dhym_core::monitors::{check_eigenvalue_inequalities, random_hermitian, snapshot};
use dhym_core::phase::{hypercritical_floor, linearization_coeffs, phase, Spectrum};
use dhym_core::solver::{apply_linearization, continuity_path, manufacture_analytic, residual, solve};
use dhym_core::subsolution::{bruteforce_is_c_subsolution, check_c_subsolution};
use dhym_core::{
    hat_theta, AlmostHermitianStructure, BackgroundForm, GridSpec, PathOptions, Preset,
    ScalarField, SolveOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Solutions collected for the eigenvalue-inequality criterion.
struct Converged {
    label: String,
    u: ScalarField,
    h_solved: ScalarField,
    g: BackgroundForm,
    s: AlmostHermitianStructure,
}

fn flat(n: usize, pts: usize) -> AlmostHermitianStructure {
    AlmostHermitianStructure::build(Preset::Flat, GridSpec::new(n, pts).unwrap()).unwrap()
}

fn criterion_1(solutions: &mut Vec<Converged>) -> Outcome {
    let s = flat(2, 16);
    let spec = *s.spec();
    let g = BackgroundForm::multiple_of_chi(&s, 1.0f64.tan());
    let h = ScalarField::constant(spec, 2.0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let out = pool.install(|| solve(&h, &ScalarField::zeros(spec), 0.0, &g, &s, &SolveOptions::default()));
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok((u, c, rep)) => {
            let res = residual(&u, c, &h, &g, &s).unwrap().max_abs();
            let pass = rep.iterations <= 2 && res <= 1e-10 && c.abs() <= 1e-12 && u.max_abs() <= 1e-10 && secs <= 10.0;
            let detail = format!(
                "iterations={} residual={res:e} c={c:e} |u|={:e} time={secs:.2}s",
                rep.iterations,
                u.max_abs()
            );
            solutions.push(Converged {
                label: "c1".into(),
                h_solved: h.add_constant(c),
                u,
                g,
                s,
            });
            Outcome { pass, detail }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("solve failed: {e}"),
        },
    }
}

fn u_star() -> TrigPotential {
    TrigPotential::new()
        .cos(0.05, &[1.0], 0.0)
        .sin(0.03, &[0.0, 1.0, 0.0, 1.0])
}

fn criterion_2(solutions: &mut Vec<Converged>) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in [Preset::Flat, Preset::Twisted { epsilon: 0.25 }] {
        let mut errors = Vec::new();
        for pts in [8, 16, 32] {
            let spec = GridSpec::new(2, pts).unwrap();
            let s = AlmostHermitianStructure::build(preset.clone(), spec).unwrap();
            let g = BackgroundForm::multiple_of_chi(&s, 2.0);
            let h = match manufacture_analytic(&u_star(), &g, &s) {
                Ok(h) => h,
                Err(e) => return Outcome { pass: false, detail: format!("manufacture failed: {e}") },
            };
            let exact = u_star().sample(spec).unwrap();
            match solve(&h, &ScalarField::zeros(spec), 0.0, &g, &s, &SolveOptions::default()) {
                Ok((u, c, _)) => {
                    let diff = u.zip_map(&exact, |a, b| a - b).unwrap().mean_zero();
                    errors.push(diff.max_abs());
                    solutions.push(Converged {
                        label: format!("c2-{}-{pts}", preset.id()),
                        h_solved: h.add_constant(c),
                        u,
                        g,
                        s,
                    });
                }
                Err(e) => {
                    return Outcome {
                        pass: false,
                        detail: format!("{} N={pts}: solve failed: {e}", preset.id()),
                    }
                }
            }
        }
        let r1 = errors[0] / errors[1];
        let r2 = errors[1] / errors[2];
        let ok = (3.5..=4.5).contains(&r1) && (3.5..=4.5).contains(&r2) && errors[2] <= 5e-4;
        pass &= ok;
        parts.push(format!(
            "{}: errors={:.3e}/{:.3e}/{:.3e} ratios={r1:.3}/{r2:.3}",
            preset.id(),
            errors[0],
            errors[1],
            errors[2]
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    Outcome {
        pass,
        detail: format!("{} time={secs:.1}s", parts.join("; ")),
    }
}

fn random_trig(rng: &mut ChaCha8Rng, terms: usize, amplitude: f64) -> TrigPotential {
    let mut p = TrigPotential::new();
    for _ in 0..terms {
        let wave: Vec<f64> = (0..4).map(|_| rng.gen_range(-2i32..=2) as f64).collect();
        p = p.cos(rng.gen_range(-amplitude..amplitude), &wave, rng.gen_range(0.0..2.0 * PI));
    }
    p
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for preset in [Preset::Flat, Preset::Twisted { epsilon: 0.25 }] {
        let spec = GridSpec::new(2, 8).unwrap();
        let s = AlmostHermitianStructure::build(preset.clone(), spec).unwrap();
        let g = BackgroundForm::multiple_of_chi(&s, 2.0);
        let h = ScalarField::zeros(spec);
        let mut preset_worst: f64 = 0.0;
        for _ in 0..20 {
            let u = random_trig(&mut rng, 3, 0.03).sample(spec).unwrap();
            let du = random_trig(&mut rng, 3, 1.0).sample(spec).unwrap();
            let plus = u.zip_map(&du, |a, b| a + eps * b).unwrap();
            let minus = u.zip_map(&du, |a, b| a - eps * b).unwrap();
            let rp = residual(&plus, 0.0, &h, &g, &s).unwrap();
            let rm = residual(&minus, 0.0, &h, &g, &s).unwrap();
            let fd = rp.zip_map(&rm, |a, b| (a - b) / (2.0 * eps)).unwrap();
            let lin = apply_linearization(&u, &du, &g, &s).unwrap();
            let err = fd.zip_map(&lin, |a, b| a - b).unwrap().max_abs();
            preset_worst = preset_worst.max(err);
        }
        worst = worst.max(preset_worst);
        parts.push(format!("{} max_err={preset_worst:.2e}", preset.id()));
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: parts.join("; "),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let delta = 1e-4;
    let (mut e1, mut e2, mut q_max) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for n in 2..=4 {
        let mut accepted = 0;
        while accepted < 1000 {
            let lambda: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-0.7..1.0))).collect();
            if phase(&lambda) <= hypercritical_floor(n) {
                continue;
            }
            accepted += 1;
            let mut sorted = lambda.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let sp = Spectrum::from_lambda(&sorted);
            let f = linearization_coeffs(&sorted);
            for i in 0..n {
                let mut p = sorted.clone();
                let mut m = sorted.clone();
                p[i] += delta;
                m[i] -= delta;
                let d1 = (phase(&p) - phase(&m)) / (2.0 * delta);
                let d2 = ((phase(&p) - phase(&sorted)) - (phase(&sorted) - phase(&m))) / (delta * delta);
                e1 = e1.max((d1 - f[i]).abs());
                e2 = e2.max((d2 - sp.fsecond_diag()[i]).abs());
            }
            for _ in 0..100 {
                let xi = random_hermitian(n, &mut rng);
                q_max = q_max.max(sp.second_variation(&xi));
            }
        }
    }
    Outcome {
        pass: e1 <= 1e-6 && e2 <= 1e-5 && q_max <= 1e-12,
        detail: format!("first_err={e1:.2e} second_err={e2:.2e} max_quadratic_form={q_max:.2e}"),
    }
}

fn criterion_5(solutions: &[Converged]) -> Outcome {
    let mut pass = !solutions.is_empty();
    let mut worst_product = f64::INFINITY;
    let mut worst_lower = f64::INFINITY;
    let mut failed = Vec::new();
    for sol in solutions {
        let snap = snapshot(&sol.u, &sol.u, &sol.h_solved, &sol.g, &sol.s).unwrap();
        let rep = check_eigenvalue_inequalities(&snap, &sol.h_solved);
        worst_product = worst_product.min(rep.product_margin);
        worst_lower = worst_lower.min(rep.lower_margin);
        if !(rep.applicable && rep.passes()) {
            pass = false;
            failed.push(sol.label.clone());
        }
    }
    Outcome {
        pass,
        detail: format!(
            "runs={} min(λ_{{n-1}}λ_n − 1)={worst_product:.4} min(λ_n − bound)={worst_lower:.4}{}",
            solutions.len(),
            if failed.is_empty() { String::new() } else { format!(" failed={}", failed.join(",")) }
        ),
    }
}

fn criterion_6() -> Outcome {
    let s = flat(2, 16);
    let spec = *s.spec();
    let g = BackgroundForm::multiple_of_chi(&s, 0.9f64.tan());
    let z = ScalarField::zeros(spec);
    let h1 = ScalarField::constant(spec, 2.2);
    let start = Instant::now();
    let run = match continuity_path(&h1, &z, &z, &g, &s, &SolveOptions::default(), &PathOptions::default(), None) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: format!("path rejected: {e}") },
    };
    let secs = start.elapsed().as_secs_f64();
    let mut c_err: f64 = 0.0;
    let mut u_max: f64 = 0.0;
    let mut flags_ok = true;
    for st in &run.states {
        c_err = c_err.max((st.c + 0.4 * st.t).abs());
        u_max = u_max.max(st.u.max_abs());
        flags_ok &= st.flags.c_nonpositive && st.flags.target_above_inf_theta0;
        flags_ok &= (1.0 - st.t) * 1.8 + st.t * 2.2 + st.c >= 1.8 - 1e-10;
    }
    let pass = run.completed() && c_err <= 1e-8 && u_max <= 1e-8 && flags_ok && secs <= 60.0;
    Outcome {
        pass,
        detail: format!(
            "states={} final_t={} max|c_t+0.4t|={c_err:.2e} max|u_t|={u_max:.2e} flags_ok={flags_ok} time={secs:.2}s{}",
            run.states.len(),
            run.states.last().map_or(0.0, |s| s.t),
            run.failure.map(|e| format!(" failure={e}")).unwrap_or_default()
        ),
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut positives = 0;
    let mut disagreements = Vec::new();
    let structures = [flat(2, 8), flat(3, 8)];
    for k in 0..200 {
        let n = if k % 2 == 0 { 2 } else { 3 };
        let s = &structures[n - 2];
        let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
        let lo = hypercritical_floor(n);
        let h_val = rng.gen_range(lo..lo + FRAC_PI_2);
        if h_val <= lo {
            continue;
        }
        let spec = *s.spec();
        let g = BackgroundForm::constant(CMatrix::from_real_diagonal(&lambda)).unwrap();
        let rep = check_c_subsolution(&ScalarField::zeros(spec), &ScalarField::constant(spec, h_val), &g, s).unwrap();
        let oracle = bruteforce_is_c_subsolution(&lambda, h_val, &[1e2, 1e3, 1e4], 400);
        if rep.is_subsolution {
            positives += 1;
        }
        if rep.is_subsolution == oracle {
            agree += 1;
        } else {
            disagreements.push(format!("{lambda:?}/h={h_val}"));
        }
    }
    Outcome {
        pass: agree == 200,
        detail: format!(
            "agree={agree}/200 criterion_true={positives}{}",
            if disagreements.is_empty() { String::new() } else { format!(" disagree={}", disagreements.join(";")) }
        ),
    }
}

fn theta_difference(preset: Preset, pts: usize) -> f64 {
    theta_difference_for(preset, pts, |x| 0.3 * (x[0] + x[2]).cos())
}

fn theta_difference_for(preset: Preset, pts: usize, u: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let spec = GridSpec::new(2, pts).unwrap();
    let s = AlmostHermitianStructure::build(preset, spec).unwrap();
    let g = BackgroundForm::multiple_of_chi(&s, 0.8f64.tan());
    let zero = hat_theta(&ScalarField::zeros(spec), &g, &s).unwrap();
    let u = ScalarField::from_fn(spec, u);
    let moved = hat_theta(&u, &g, &s).unwrap();
    (moved.principal - zero.principal).abs()
}

fn criterion_8() -> Outcome {
    let d32 = theta_difference(Preset::Flat, 32);
    let d64 = theta_difference(Preset::Flat, 64);
    let ratio = d32 / d64;
    let twisted = theta_difference(Preset::Twisted { epsilon: 0.25 }, 32);
    // The twisted correction is linear in the Hessian and averages out for
    // the mode above; cos 2x¹ exposes it.
    let probe = |x: &[f64]| 0.3 * (2.0 * x[0]).cos();
    let probe_flat = theta_difference_for(Preset::Flat, 32, probe);
    let probe_twisted = theta_difference_for(Preset::Twisted { epsilon: 0.25 }, 32, probe);
    Outcome {
        pass: d32 <= 1e-3 && (3.5..=4.5).contains(&ratio),
        detail: format!(
            "diff32={d32:.3e} diff64={d64:.3e} ratio={ratio:.3}; logged: twisted_diff32={twisted:.3e} \
             cos2x1 probe flat={probe_flat:.3e} twisted={probe_twisted:.3e}"
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut kernel_exact = true;
    let mut gauge_err: f64 = 0.0;
    for preset in [Preset::Flat, Preset::Twisted { epsilon: 0.25 }] {
        let spec = GridSpec::new(2, 8).unwrap();
        let s = AlmostHermitianStructure::build(preset, spec).unwrap();
        let g = BackgroundForm::multiple_of_chi(&s, 2.0);
        for _ in 0..5 {
            let u = random_trig(&mut rng, 3, 0.03).sample(spec).unwrap();
            let k = rng.gen_range(-10.0..10.0);
            let out = apply_linearization(&u, &ScalarField::constant(spec, k), &g, &s).unwrap();
            kernel_exact &= out.values().iter().all(|v| *v == 0.0);
        }
        let h = manufacture_analytic(&u_star(), &g, &s).unwrap();
        let u0 = random_trig(&mut rng, 2, 0.02).sample(spec).unwrap();
        let opts = SolveOptions::default();
        let (ua, ca, _) = solve(&h, &u0, 0.0, &g, &s, &opts).unwrap();
        let (ub, cb, _) = solve(&h, &u0.add_constant(5.0), 0.0, &g, &s, &opts).unwrap();
        gauge_err = gauge_err.max(ua.zip_map(&ub, |a, b| a - b).unwrap().max_abs());
        gauge_err = gauge_err.max((ca - cb).abs());
    }
    Outcome {
        pass: kernel_exact && gauge_err <= 1e-10,
        detail: format!("L(const)==0 exactly: {kernel_exact}; gauge difference={gauge_err:.2e}"),
    }
}

fn main() {
    let mut solutions = Vec::new();
    let results = [
        ("1", "constant-coefficient exactness", criterion_1(&mut solutions)),
        ("2", "manufactured-solution convergence", criterion_2(&mut solutions)),
        ("3", "linearization fidelity", criterion_3()),
        ("4", "pointwise derivative formulas", criterion_4()),
        ("5", "eigenvalue inequalities on solutions", criterion_5(&solutions)),
        ("6", "continuity path reproduces exact constant path", criterion_6()),
        ("7", "subsolution verifier vs brute force", criterion_7()),
        ("8", "hat-theta Kähler invariance", criterion_8()),
        ("9", "gauge and kernel", criterion_9()),
    ];
    let mut failures = 0;
    for (id, name, out) in &results {
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failures += 1;
        }
        println!("{tag} criterion {id} ({name}): {}", out.detail);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
