//! Gaussian-process pseudo-label supervision for unpaired image restoration.
//!
//! The crate bundles a small dense linear-algebra layer, deep effective
//! kernels, GP conditioning over latent feature banks, desk-scale networks,
//! a CycleGAN trainer that adds the pseudo-label objective, and the
//! synthetic data and metrics used to evaluate it.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod pgm;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
