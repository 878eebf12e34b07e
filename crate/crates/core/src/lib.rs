//! Efficient estimation of `Cov(E[X | Y])` by a pilot-corrected quadratic
//! functional estimator.

pub mod basis;
pub mod cli;
pub mod estimator;
pub mod error;
pub mod functionals;
pub mod numeric;
pub mod pilot;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, ErrorClass, Result};
