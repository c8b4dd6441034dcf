//! D-optimal experimental designs for ordinal responses under cumulative
//! link models.
//!
//! The crate covers locally D-optimal approximate allocations (lift-one),
//! exact allocations (pairwise exchange), closed-form minimally supported
//! designs with their optimality certificates, and EW / Bayes designs under
//! box-uniform parameter priors.

pub mod approx;
pub mod cli;
pub mod error;
pub mod ew_bayes;
pub mod exact;
pub mod fisher;
pub mod fixtures;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod links;
pub mod minimal;
pub mod model;
pub mod poly;
pub mod quadrature;
pub mod vandermonde;

pub use error::{DesignError, Result};
pub use fisher::{Allocation, AllocationMode, DesignProblem, InformationMatrix};
pub use links::LinkFunction;
pub use model::{InfoCoefficients, ModelSpec, PointQuantities};
