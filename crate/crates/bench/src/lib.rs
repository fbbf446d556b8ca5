//! Shared inputs for the criterion benchmarks.

use dhym_core::{AlmostHermitianStructure, BackgroundForm, GridSpec, Preset, ScalarField, TrigPotential};

/// A twisted n = 2 instance with a smooth potential on `pts` points per axis.
pub fn twisted_instance(pts: usize) -> (AlmostHermitianStructure, BackgroundForm, ScalarField) {
    let spec = GridSpec::new(2, pts).expect("valid grid");
    let s = AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.25 }, spec).expect("valid preset");
    let g = BackgroundForm::multiple_of_chi(&s, 2.0);
    let u = TrigPotential::new()
        .cos(0.05, &[1.0], 0.0)
        .sin(0.03, &[0.0, 1.0, 0.0, 1.0])
        .sample(spec)
        .expect("integral waves");
    (s, g, u)
}
