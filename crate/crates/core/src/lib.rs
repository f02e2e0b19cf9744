//! Limiting empirical spectral distributions of sample covariance matrices
//! drawn from mixtures of populations.
//!
//! The solver works per abscissa: a damped Anderson-accelerated fixed-point
//! iteration on the auxiliary functions `e_k(z)`, wrapped in a continuation
//! that walks the imaginary offset down to the real axis. Support segments
//! are detected blindly from the pooled population eigenvalues and gridded
//! in logarithmic units, then refined by curvature.
//!
//! ```no_run
//! use esdmix::{models::TestProblem, pipeline, solver::SolverConfig};
//!
//! let mixture = TestProblem::mp(0.5, 100).build().unwrap();
//! let estimate = pipeline::compute_esd(&mixture, &SolverConfig::default()).unwrap();
//! println!("mass = {}", estimate.mass);
//! ```

// NaN-rejecting guards are written as negated comparisons on purpose, and
// the numeric kernels index several parallel arrays in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod closedform;
pub mod error;
pub mod exec;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod montecarlo;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Execution;
pub use models::{PopulationMixture, TestProblem};
pub use pipeline::DensityEstimate;
pub use solver::{PointSolution, SolverConfig};

pub use num_complex::Complex64;
