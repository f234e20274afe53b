//! Multi-stage convex relaxation for noisy structured low-rank matrix
//! recovery.
//!
//! Each stage minimizes the nuclear semi-norm `||X||_* - <W, X>` over the
//! measurement and structure constraints, then refreshes `W` in closed form
//! from the singular values of the new iterate. The first stage (`W = 0`) is
//! the plain nuclear-norm relaxation.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod matio;
pub mod multistage;
pub mod operator;
pub mod penalty;
pub mod solver;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
pub use operator::SamplingOperator;
pub use penalty::{BoundaryRule, PhiSpec};
pub use spectral::{Matrix, Vector};
pub use multistage::{run_multistage, MultistageConfig, Problem};
