//! Continuous-time mixed-state branching processes.
//!
//! A numerical library for two-coordinate branching processes with one
//! continuous and one integer population coordinate: mechanism evaluation,
//! Laplace-exponent ODE flows, jump-diffusion path simulation,
//! Galton-Watson scaling-limit experiments, local-jump laws, exact
//! Wasserstein-1 distances with ergodicity certification, and
//! immigration/stationarity analysis. Every analytic formula is paired with
//! an independent oracle (closed forms, truncated CTMCs, brute-force
//! assignment) exercised by the test suites.

pub mod ergodics;
pub mod error;
pub mod gwlimit;
pub mod laplace;
pub mod linalg;
pub mod mechanism;
pub mod oracle;
pub mod simulate;

pub use error::{Error, Result};
pub use linalg::Mat2;
pub use mechanism::{
    BranchingMechanism, ImmigrationMechanism, JumpAtom, LevyAtomMeasure, MechanismFile,
    MixedState, MomentMatrix, StabilityReport, TruncatedMechanism, Violation,
};
