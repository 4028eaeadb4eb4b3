//! Certifiably globally optimal rotation averaging over unit quaternions.
//!
//! The pipeline mirrors how the pieces depend on each other:
//!
//! 1. [`precondition::quaternion_signs`] fixes one sign per measurement so the
//!    quaternionic cost becomes a single quadratic polynomial.
//! 2. [`partition::junction_tree_partition`] splits the vertices into blocks
//!    with the running intersection property.
//! 3. [`sbsos::build_relaxation`] writes the level-(1,1) bounded-degree SOS
//!    relaxation as a conic program, [`sbsos::solve_and_extract`] solves it
//!    with the embedded interior-point solver and recovers a candidate, and
//!    [`sbsos::certify`] compares the bound with the candidate's cost.
//!
//! [`baselines`] holds the local solver used both for polishing and as a
//! comparison method, and [`bench`] runs parameter sweeps.

pub mod baselines;
pub mod bench;
mod error;
pub mod partition;
pub mod polycost;
pub mod precondition;
pub mod problem;
pub mod quat;
pub mod rng;
pub mod sbsos;

pub use error::{Error, Result};
