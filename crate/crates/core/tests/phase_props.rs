use std::f64::consts::FRAC_PI_2;

use dhym_core::phase::{cone_membership, hypercritical_floor, phase, phase_properties_check, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hypercritical_samples(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let mut l: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-1.5..2.0))).collect();
        if phase(&l) > hypercritical_floor(n) {
            l.sort_by(|a, b| b.partial_cmp(a).unwrap());
            out.push(l);
        }
    }
    out
}

#[test]
fn hypercritical_spectra_satisfy_pairwise_products() {
    for n in 2..=4 {
        for l in hypercritical_samples(n, 2000, n as u64) {
            let sp = Spectrum::from_lambda(&l);
            // λ_j λ_n ≥ 1 for every j < n.
            for j in 0..n - 1 {
                assert!(l[j] * l[n - 1] >= 1.0 - 1e-12, "{l:?}");
            }
            // λ_n ≥ tan(phase − (n−1)π/2).
            assert!(l[n - 1] >= (sp.phase() - hypercritical_floor(n)).tan() - 1e-12);
            assert!(sp.lambda_product_min() >= 1.0 - 1e-12);
        }
    }
}

#[test]
fn derivative_coefficients_are_ordered() {
    for n in 2..=4 {
        for l in hypercritical_samples(n, 500, 10 + n as u64) {
            let sp = Spectrum::from_lambda(&l);
            let f = sp.fprime();
            for w in f.windows(2) {
                assert!(w[0] <= w[1] + 1e-15);
            }
            assert!((sp.trace_fprime() - f.iter().sum::<f64>()).abs() <= 1e-14);
            assert!(sp.fsecond_diag().iter().all(|v| *v < 0.0));
            for i in 0..n {
                for k in 0..n {
                    if i != k {
                        assert!(sp.fsecond_off(i, k) <= 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn cone_membership_tracks_the_phase_threshold() {
    for l in hypercritical_samples(3, 500, 99) {
        let p = phase(&l);
        let below = p - 1e-9;
        if below > hypercritical_floor(3) {
            let m = cone_membership(&l, below).unwrap();
            assert!(m.in_gamma_n && m.in_gamma && m.in_gamma_sigma);
        }
        let above = p + 1e-9;
        if above < 3.0 * FRAC_PI_2 {
            let m = cone_membership(&l, above).unwrap();
            assert!(m.in_gamma && !m.in_gamma_sigma);
        }
        assert!(phase_properties_check(&l).all_pass());
    }
    assert!(cone_membership(&[1.0, 1.0, 1.0], 1.0).is_err());
}
