//! Exact computation with polynomials, multi-affine maps and towers over
//! prime finite fields: character sums and level-set histograms, Schmidt and
//! partition rank engines with replayable certificates, relative rank on
//! towers, the regular-decomposition algorithm with its budget recurrence,
//! and a degree-bounded ideal-membership solver.
//!
//! All counting is exact integer arithmetic; floating point appears only
//! when a character sum is finally evaluated. Every structure is an
//! immutable value, and parallel enumeration merges integer histograms, so
//! results are schedule-independent.

pub mod analytic;
pub mod error;
pub mod field;
pub mod generate;
pub mod json;
mod linalg;
pub mod multiaffine;
pub mod poly;
pub mod rank;
pub mod regularize;
pub mod tower;

pub use error::{Error, Result};
pub use field::{PrimeField, Scalar, SpaceShape};
pub use poly::Poly;
