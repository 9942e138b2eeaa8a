//! Multipolar interaction landscapes of rigid neutral molecules.
//!
//! The crate computes Cartesian multipole moments of point-charge
//! distributions, evaluates the multipolar interaction energies between two
//! rotated molecules, analyses the critical points of those energies on
//! SO(3) × SO(3), builds min-max (mountain-pass) paths on a model energy
//! surface over `(L, U, V)`, and provides a finite-dimensional toy model for
//! van der Waals correlation energies and for dressing paths with states.

pub mod critical;
pub mod error;
pub mod interaction;
pub mod linalg;
pub mod mountainpass;
pub mod multipole;
pub mod so3;
pub mod stats;
pub mod toyquantum;

pub use error::{Error, Result};
pub use multipole::{ChargeDistribution, MultipoleSet, PointCharge};
pub use so3::{Config, Rotation, Tangent};
