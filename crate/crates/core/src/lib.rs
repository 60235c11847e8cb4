//! Jacobi polynomials of type BC attached to compact Grassmannians, their
//! Bessel-function limits, the dual hypergroup convolution on dominant
//! weights and the random walks it drives.

pub mod bessel;
pub mod error;
pub mod hypergroup;
pub mod polynomials;
pub mod quadrature;
pub mod stats;
pub mod walk;
pub mod weights;

pub use error::{Error, Result};
