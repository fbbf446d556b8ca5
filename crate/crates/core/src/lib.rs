//! Numerical solver for the deformed Hermitian–Yang–Mills equation on
//! almost Hermitian tori in the hypercritical phase range.

pub mod analytic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod monitors;
pub mod phase;
pub mod report;
pub mod solver;
pub mod subsolution;

pub use analytic::TrigPotential;
pub use error::{DhymError, Result};
pub use geometry::{
    complex_hessian, omega_u, validate_structure, AlmostHermitianStructure, BackgroundForm,
    HermitianMatrixField, Preset, StructureReport,
};
pub use grid::{GridSpec, ScalarField};
pub use io::{load_field, load_records, save_field, save_records, FieldRecord};
pub use phase::{hat_theta, HatTheta, Spectrum};
pub use solver::{
    continuity_path, manufacture, manufacture_analytic, newton_step, residual, solve,
    ContinuityState, PathOptions, PathRun, SolveOptions, SolveReport,
};
pub use subsolution::{
    check_c_subsolution, check_dichotomy, check_supersolution, DichotomyReport,
    SubsolutionReport, SupersolutionReport,
};
pub use monitors::{
    check_concavity_at_state, check_eigenvalue_inequalities, snapshot, track_path,
    EstimateSnapshot,
};
