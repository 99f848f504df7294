//! Open quantum walks on Z^d whose vertices belong to several classes.
//!
//! Each vertex class carries Kraus operators indexed by displacement. The
//! crate covers the single-class channel and its spectral analysis, class
//! fields over the lattice, reduction of periodic walks to homogeneous
//! ones, quantum-trajectory Monte Carlo with normality diagnostics, and
//! exact evolution of the walk distribution on a finite window.

pub mod analysis;
pub mod channel;
pub mod class;
pub mod error;
pub mod evolution;
pub mod lattice;
pub mod matrix;
pub mod presets;
pub mod reduction;
pub mod rng;
pub mod stats;
pub mod trajectory;
pub mod walk;

pub use error::{OqwError, Result};
