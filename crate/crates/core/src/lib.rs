//! Constrained atomic-norm estimation, de-biased inference and Monte-Carlo
//! conic geometry for linear inverse problems `Y = X(M) + Z`.
//!
//! * [`model`]: designs, ground truths, simulated observations.
//! * [`atoms`]: the four atom-set families and their tangent cones.
//! * [`solver`]: the Dantzig-type program `min ‖M‖_A s.t. ‖Xᵀ(Y − XM)‖_A* ≤ λ`.
//! * [`inference`]: de-biasing matrix, de-biased estimator, intervals, tests.
//! * [`geometry`]: widths, Sudakov estimate, volume ratio, isometry constants.

pub mod atoms;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod solver;
pub mod stats;

pub use atoms::{asphericity_upper_bound, AtomSet, Family, TangentCone};
pub use error::{Error, Result};
pub use model::{DesignOperator, GroundTruth, ProblemInstance, Shape};
