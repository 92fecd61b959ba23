//! Projected gradient descent for linear inverse problems with group
//! symmetry.
//!
//! Many sensing operators are subsamplings of a larger operator that is
//! equivariant under a group of signal transforms (sparse-view tomography
//! is a subsampling of the full-angle scan under rotation). Group-PGD
//! evaluates each gradient at a randomly transformed iterate, which lets it
//! converge linearly on problems where plain PGD has no restricted strong
//! convexity at all.
//!
//! - [`linop`]: matrix-free operators, normalized stacking, power iteration.
//! - [`symmetry`]: exact permutation actions, symmetric subsets, sampling.
//! - [`constraint`]: projections, descent cones, restricted eigenvalues.
//! - [`solver`]: PGD, Group-PGD and multistage runs with traces.
//! - [`certificate`]: rate constants, the error bound and its empirical check.
//! - [`bench`]: polar phantoms, angle-subsampled operators and noise.

pub mod bench;
pub mod certificate;
pub mod constraint;
pub mod error;
pub mod linop;
pub mod solver;
pub mod symmetry;
pub mod vector;

pub use error::{Error, Result};

#[cfg(test)]
use linop::DenseMatrix;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;
