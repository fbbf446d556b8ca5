//! C-subsolution criterion, supersolution condition and the subsolution
//! dichotomy, each with margins.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::geometry::{omega_u_at, AlmostHermitianStructure, BackgroundForm};
use crate::grid::{require_grid, ScalarField};
use crate::linalg::generalized_hermitian_eigen;
use crate::phase::{hypercritical_floor, is_hypercritical, phase, Spectrum};
use crate::solver::{phase_field, Linearization};

/// `Σ_{i≠j} arctan λ_i − h + π/2` for every `j`.
pub fn c_subsolution_margins(lambda: &[f64], h: f64) -> Vec<f64> {
    let total = phase(lambda);
    lambda
        .iter()
        .map(|l| total - l.atan() - h + FRAC_PI_2)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsolutionReport {
    pub is_subsolution: bool,
    pub worst_margin: f64,
    pub worst_point: usize,
    pub per_j_margins: Vec<f64>,
}

/// Checks `Σ_{i≠j} arctan λ_i(u̲) > h − π/2` strictly at every point and index.
pub fn check_c_subsolution(
    u_sub: &ScalarField,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<SubsolutionReport> {
    require_grid(u_sub.spec(), s.spec())?;
    require_grid(h.spec(), s.spec())?;
    let n = s.spec().n();
    if let Some((idx, v)) = h
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !is_hypercritical(n, **v))
    {
        return Err(DhymError::domain(format!(
            "h = {v} at point {idx} is outside ((n−1)π/2, nπ/2)"
        )));
    }
    let v = u_sub.values();
    let hv = h.values();
    let worst: Vec<(f64, Vec<f64>)> = (0..s.spec().len())
        .into_par_iter()
        .map(|idx| -> Result<(f64, Vec<f64>)> {
            let gt = omega_u_at(g, v, s, idx);
            let eig = generalized_hermitian_eigen(&gt, s.chi(idx))?;
            let m = c_subsolution_margins(eig.values(), hv[idx]);
            Ok((m.iter().copied().fold(f64::INFINITY, f64::min), m))
        })
        .collect::<Result<_>>()?;
    let (worst_point, worst_margin) = worst
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bm), (i, (m, _))| if *m < bm { (i, *m) } else { (bi, bm) });
    Ok(SubsolutionReport {
        is_subsolution: worst_margin > 0.0,
        worst_margin,
        worst_point,
        per_j_margins: worst[worst_point].1.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BruteForceVerdict {
    /// Level-set points with `λ − λ_sub ∈ Γ_n` reach `box/2`.
    pub reaches_boundary: bool,
    /// Largest coordinate among sampled admissible level-set points; 0 if none.
    pub max_coordinate: f64,
    pub admissible_points: usize,
}

/// Samples `{Σ arctan λ_i = h, λ − λ_sub ∈ Γ_n} ∩ [0, box]^n` by choosing all
/// coordinates but one on a log-spaced grid above `λ_sub` and solving for the
/// remaining one.
pub fn check_c_subsolution_bruteforce(lambda_sub: &[f64], h_val: f64, box_size: f64, samples: usize) -> BruteForceVerdict {
    let n = lambda_sub.len();
    let samples = samples.max(2);
    let (lo, hi) = (1e-12f64.ln(), box_size.ln());
    let offsets: Vec<f64> = (0..samples)
        .map(|k| (lo + (hi - lo) * k as f64 / (samples - 1) as f64).exp())
        .collect();
    let mut max_coordinate: f64 = 0.0;
    let mut admissible_points = 0;
    let others = n - 1;
    let combos = samples.pow(others as u32);
    for j in 0..n {
        for combo in 0..combos {
            let mut lambda = vec![0.0; n];
            let mut rest = combo;
            let mut sum = 0.0;
            let mut inside = true;
            for i in (0..n).filter(|i| *i != j) {
                lambda[i] = lambda_sub[i] + offsets[rest % samples];
                rest /= samples;
                if lambda[i] > box_size {
                    inside = false;
                }
                sum += lambda[i].atan();
            }
            let angle = h_val - sum;
            if !inside || angle.abs() >= FRAC_PI_2 {
                continue;
            }
            lambda[j] = angle.tan();
            if !(lambda[j] > lambda_sub[j]) || lambda[j] > box_size || lambda.iter().any(|l| *l < 0.0) {
                continue;
            }
            admissible_points += 1;
            max_coordinate = lambda.iter().copied().fold(max_coordinate, f64::max);
        }
    }
    BruteForceVerdict {
        reaches_boundary: max_coordinate >= 0.5 * box_size,
        max_coordinate,
        admissible_points,
    }
}

/// Definition-level verdict: the set is unbounded iff it meets the largest
/// box and, in every box it meets, admissible points reach `box/2`. Boxes the
/// set misses are skipped, since an unbounded level set may start far from
/// the origin. Returns `true` for a C-subsolution.
pub fn bruteforce_is_c_subsolution(lambda_sub: &[f64], h_val: f64, boxes: &[f64], samples: usize) -> bool {
    let verdicts: Vec<BruteForceVerdict> = boxes
        .iter()
        .map(|b| check_c_subsolution_bruteforce(lambda_sub, h_val, *b, samples))
        .collect();
    let largest_meets = verdicts.last().is_some_and(|v| v.admissible_points > 0);
    let unbounded = largest_meets
        && verdicts
            .iter()
            .all(|v| v.admissible_points == 0 || v.reaches_boundary);
    !unbounded
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupersolutionReport {
    pub is_supersolution: bool,
    /// `min(h − θ₀)`; nonnegative for a supersolution.
    pub min_slack: f64,
    /// `θ₀ > (n−1)π/2` everywhere.
    pub hypercritical: bool,
    pub hypercritical_margin: f64,
    pub theta0: ScalarField,
}

impl SupersolutionReport {
    pub fn passes(&self) -> bool {
        self.is_supersolution && self.hypercritical
    }
}

pub fn check_supersolution(
    u_hat: &ScalarField,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<SupersolutionReport> {
    require_grid(h.spec(), s.spec())?;
    let theta0 = phase_field(u_hat, g, s)?;
    let min_slack = h
        .values()
        .iter()
        .zip(theta0.values())
        .map(|(h, t)| h - t)
        .fold(f64::INFINITY, f64::min);
    let margin = theta0.min() - hypercritical_floor(s.spec().n());
    Ok(SupersolutionReport {
        is_supersolution: min_slack >= 0.0,
        min_slack,
        hypercritical: margin > 0.0,
        hypercritical_margin: margin,
        theta0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DichotomyPoint {
    pub index: usize,
    /// `L(u̲ − u)` at the point.
    pub l_value: f64,
    pub trace_f: f64,
    pub max_f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DichotomyReport {
    pub theta: f64,
    /// Points where `L(u̲ − u) ≥ θ Σ F^{ii̇}`.
    pub branch_a_points: usize,
    /// Points where branch (a) fails but some `F^{kk̄} ≥ θ Σ F^{ii̇}`.
    pub branch_b_points: usize,
    pub neither_points: usize,
    /// Empirical lower bound `min Σ F^{ii̇}`.
    pub trace_f_min: f64,
    /// The first failing points, at most [`MAX_DETAILS`].
    pub failing: Vec<DichotomyPoint>,
}

pub const MAX_DETAILS: usize = 32;

/// Per-point data for the dichotomy at a fixed state.
pub struct DichotomyData {
    points: Vec<DichotomyPoint>,
}

impl DichotomyData {
    pub fn new(
        u_sub: &ScalarField,
        u: &ScalarField,
        g: &BackgroundForm,
        s: &AlmostHermitianStructure,
    ) -> Result<Self> {
        require_grid(u_sub.spec(), s.spec())?;
        require_grid(u.spec(), s.spec())?;
        let (lin, _) = Linearization::at_state(u, g, s)?;
        let diff: Vec<f64> = u_sub
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| a - b)
            .collect();
        let lv = lin.apply_values(&diff);
        let uv = u.values();
        let points = (0..s.spec().len())
            .into_par_iter()
            .map(|idx| -> Result<DichotomyPoint> {
                let gt = omega_u_at(g, uv, s, idx);
                let eig = generalized_hermitian_eigen(&gt, s.chi(idx))?;
                let sp = Spectrum::from_lambda(eig.values());
                Ok(DichotomyPoint {
                    index: idx,
                    l_value: lv[idx],
                    trace_f: sp.trace_fprime(),
                    max_f: sp.fprime().iter().copied().fold(0.0, f64::max),
                })
            })
            .collect::<Result<_>>()?;
        Ok(DichotomyData { points })
    }

    pub fn classify(&self, theta: f64) -> Result<DichotomyReport> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(DhymError::domain("θ must be positive"));
        }
        let mut a = 0;
        let mut b = 0;
        let mut failing = Vec::new();
        let mut trace_f_min = f64::INFINITY;
        for p in &self.points {
            trace_f_min = trace_f_min.min(p.trace_f);
            let bound = theta * p.trace_f;
            if p.l_value >= bound {
                a += 1;
            } else if p.max_f >= bound {
                b += 1;
            } else if failing.len() < MAX_DETAILS {
                failing.push(*p);
            }
        }
        Ok(DichotomyReport {
            theta,
            branch_a_points: a,
            branch_b_points: b,
            neither_points: self.points.len() - a - b,
            trace_f_min,
            failing,
        })
    }

    /// Largest θ in `(0, hi]` with no failing point, by bisection; `None` if
    /// even `lo` fails.
    pub fn largest_theta(&self, lo: f64, hi: f64, iterations: usize) -> Result<Option<f64>> {
        if self.classify(lo)?.neither_points > 0 {
            return Ok(None);
        }
        if self.classify(hi)?.neither_points == 0 {
            return Ok(Some(hi));
        }
        let (mut good, mut bad) = (lo, hi);
        for _ in 0..iterations {
            let mid = 0.5 * (good + bad);
            if self.classify(mid)?.neither_points == 0 {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(Some(good))
    }
}

/// Classifies every point into branch (a), branch (b) or neither for the
/// given θ. `h` is accepted for interface symmetry and must share the grid.
pub fn check_dichotomy(
    u_sub: &ScalarField,
    u: &ScalarField,
    theta: f64,
    h: &ScalarField,
    g: &BackgroundForm,
    s: &AlmostHermitianStructure,
) -> Result<DichotomyReport> {
    require_grid(h.spec(), s.spec())?;
    DichotomyData::new(u_sub, u, g, s)?.classify(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Preset;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn flat(a: f64) -> (GridSpec, AlmostHermitianStructure, BackgroundForm) {
        let spec = GridSpec::new(2, 8).unwrap();
        let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        let g = BackgroundForm::multiple_of_chi(&s, a);
        (spec, s, g)
    }

    #[test]
    fn lemma_examples() {
        let (spec, s, g) = flat(2.0);
        let h = ScalarField::constant(spec, 0.75 * PI);
        let rep = check_c_subsolution(&ScalarField::zeros(spec), &h, &g, &s).unwrap();
        assert!(rep.is_subsolution);
        assert!((rep.worst_margin - (2f64.atan() - PI / 4.0)).abs() < 1e-15);
        let (spec, s, g) = flat(1.0);
        let rep = check_c_subsolution(&ScalarField::zeros(spec), &h, &g, &s).unwrap();
        assert!(!rep.is_subsolution);
        assert!(rep.worst_margin.abs() < 1e-15);
        let bad = ScalarField::constant(spec, 1.0);
        assert!(check_c_subsolution(&ScalarField::zeros(spec), &bad, &g, &s).is_err());
    }

    #[test]
    fn bruteforce_examples() {
        let h = 0.75 * PI;
        assert!(!check_c_subsolution_bruteforce(&[2.0, 2.0], h, 1e3, 400).reaches_boundary);
        for b in [1e2, 1e3, 1e4] {
            assert!(check_c_subsolution_bruteforce(&[1.0, 1.0], h, b, 400).reaches_boundary);
        }
        assert!(!bruteforce_is_c_subsolution(&[1.0, 1.0], h, &[1e2, 1e3, 1e4], 400));
        let v = check_c_subsolution_bruteforce(&[100.0, 100.0], h, 1e3, 400);
        assert_eq!(v.admissible_points, 0);
        assert!(bruteforce_is_c_subsolution(&[100.0, 100.0], h, &[1e2, 1e3, 1e4], 400));
    }

    #[test]
    fn bruteforce_unbounded_set_far_from_origin() {
        // Near the ceiling the level set misses [0, 100]² but is unbounded.
        let lambda = [4.2615203022846115, 1.8858741952949452];
        let h = 3.125841436754505;
        assert_eq!(check_c_subsolution_bruteforce(&lambda, h, 1e2, 400).admissible_points, 0);
        assert!(!bruteforce_is_c_subsolution(&lambda, h, &[1e2, 1e3, 1e4], 400));
        assert!(c_subsolution_margins(&lambda, h).iter().any(|m| *m <= 0.0));
    }

    #[test]
    fn supersolution_examples() {
        let (spec, s, g) = flat(0.9f64.tan());
        let rep = check_supersolution(&ScalarField::zeros(spec), &ScalarField::constant(spec, 2.0), &g, &s).unwrap();
        assert!(rep.passes());
        assert!((rep.min_slack - 0.2).abs() < 1e-14);
        let rep = check_supersolution(&ScalarField::zeros(spec), &ScalarField::constant(spec, 1.7), &g, &s).unwrap();
        assert!(!rep.is_supersolution);
        assert!((rep.min_slack + 0.1).abs() < 1e-14);
    }

    #[test]
    fn dichotomy_constant_state() {
        let (spec, s, g) = flat(1.5);
        let u = ScalarField::zeros(spec);
        let h = ScalarField::constant(spec, 2.0 * 1.5f64.atan());
        let rep = check_dichotomy(&u, &u, 0.5, &h, &g, &s).unwrap();
        assert_eq!(rep.branch_b_points, spec.len());
        assert_eq!(rep.neither_points, 0);
        let rep = check_dichotomy(&u, &u, 10.0, &h, &g, &s).unwrap();
        assert_eq!(rep.neither_points, spec.len());
        let data = DichotomyData::new(&u, &u, &g, &s).unwrap();
        let t = data.largest_theta(1e-6, 1.0, 60).unwrap().unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert!(check_dichotomy(&u, &u, 0.0, &h, &g, &s).is_err());
    }
}
