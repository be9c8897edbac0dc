//! Adversarial sparse-regression instances, exact l1-constrained least-squares
//! solution paths, closed-form excess prediction risk, and Monte Carlo
//! verification of the associated lower-bound inequalities.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`instance`] constructs the two structured problem families (a dense
//!   coefficient vector under an identity design, and a 2-sparse coefficient
//!   vector with one exactly collinear covariate) and draws Gaussian samples
//!   from them.
//! * [`solver`] traces the full piecewise-linear homotopy path of
//!   l1-constrained least squares, with a KKT certificate checker and an
//!   independent penalized coordinate-descent oracle.
//! * [`risk`] evaluates population excess risk exactly and minimizes it over
//!   a whole path.
//! * [`bounds`] holds the closed-form rate and sample-complexity formulas.
//! * [`verify`] runs seeded Monte Carlo checks of the supporting inequalities
//!   (spectral bounds, projected-noise lower bounds, chi-square tails,
//!   restricted eigenvalues).
//! * [`experiment`] ties everything into reproducible batch campaigns with
//!   CSV output and report generation.

pub mod bounds;
pub mod experiment;
pub mod instance;
pub mod linalg;
pub mod risk;
pub mod solver;
pub mod verify;

pub use instance::{
    make_theorem1_instance, make_theorem2_instance, sample_design, CovarianceOp, Instance,
    InstanceError, Sample, TheoremTag,
};
pub use solver::{
    compute_path, pareto_certificate, solve_constrained, solve_penalized_oracle, Breakpoint,
    LassoPath, ParetoCertificate, PathError, PathStop,
};
