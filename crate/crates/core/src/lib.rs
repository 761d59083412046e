//! Graph-directed nonlocal electrical networks on dyadic approximations of
//! the unit interval.

pub mod convergence_lab;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod index_space;
pub mod network;
pub mod quad;
pub mod sum;

pub use error::{Error, Result};

/// Decimal text with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
