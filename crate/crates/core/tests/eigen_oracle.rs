use dhym_core::linalg::{generalized_hermitian_eigen, CMatrix};
use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn hermitian(m: &CMatrix) -> CMatrix {
    m.add(&m.adjoint()).scale(0.5)
}

fn to_dm(m: &CMatrix) -> DMatrix<Complex<f64>> {
    let n = m.n();
    DMatrix::from_fn(n, n, |i, j| {
        let z = m[(i, j)];
        Complex::new(z.re, z.im)
    })
}

#[test]
fn generalized_eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=4 {
        for _ in 0..200 {
            let g = hermitian(&random_matrix(n, &mut rng));
            let b = random_matrix(n, &mut rng);
            let chi = b.mul(&b.adjoint()).add(&CMatrix::scaled_identity(n, 0.5));
            let ours = generalized_hermitian_eigen(&g, &chi).unwrap();

            // χ = L L†; eigenvalues of L⁻¹ g L⁻†.
            let l = to_dm(&chi).cholesky().unwrap().l();
            let linv = l.clone().try_inverse().unwrap();
            let c = &linv * to_dm(&g) * linv.adjoint();
            let c = (&c + c.adjoint()) * Complex::new(0.5, 0.0);
            let mut theirs: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (a, b) in ours.values().iter().zip(&theirs) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }

            // Eigenvectors: g w = λ χ w and w† χ w = 1.
            for k in 0..n {
                let w: Vec<Complex64> = (0..n).map(|i| ours.vectors[(i, k)]).collect();
                let mut norm = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    let mut gw = Complex64::new(0.0, 0.0);
                    let mut cw = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        gw += g[(i, j)] * w[j];
                        cw += chi[(i, j)] * w[j];
                    }
                    assert!((gw - cw * ours.values()[k]).norm() <= 1e-9);
                    norm += w[i].conj() * cw;
                }
                assert!((norm.re - 1.0).abs() <= 1e-10 && norm.im.abs() <= 1e-10);
            }
        }
    }
}
