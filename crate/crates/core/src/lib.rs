//! Monte Carlo simulation of correlation imaging with classical thermal
//! light: speckle synthesis, two-arm scalar Fourier optics, streaming
//! intensity-correlation estimators, Gaussian peak analysis, and a dense
//! quadrature reference for the two-arm correlation kernel.
//!
//! Lengths are micrometres throughout.

pub mod error;
pub mod field_grid;
pub mod linalg;
pub mod seed;
pub mod speckle_source;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub mod optics;
pub mod bench;
pub mod correlator;
pub mod ensemble;
pub mod analysis;
pub mod oracle;
