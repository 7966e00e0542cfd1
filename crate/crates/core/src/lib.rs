//! Structured dropout for single-hidden-layer linear networks.
//!
//! The crate computes the deterministic regularizers induced by Dropout, DropBlock and
//! DropConnect, the spectral k-support envelope of the DropBlock regularizer together with the
//! closed-form global minimizer of the envelope objective, the factor constructions that
//! rebalance or duplicate hidden units, and a training loop for the stochastic objectives.
//!
//! Numerical routines are generic over [`Scalar`] (`f32` or `f64`); the aliases at the crate
//! root fix the scalar to `f64`, which is what the experiment harness uses.

pub mod dropout;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod scalar;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::{matmul, singular_values, svd, SeededRng};
pub use scalar::Scalar;

/// Double-precision dense matrix.
pub type Matrix = kernel::DenseMatrix<f64>;
/// Double-precision SVD.
pub type Svd = kernel::SvdResult<f64>;
/// Double-precision factor pair.
pub type Factors = spectral::FactorPair<f64>;
/// Double-precision characteristic matrix.
pub type Characteristic = dropout::CharacteristicMatrix<f64>;
/// Double-precision closed-form minimizer record.
pub type Minimizer = spectral::SpectralMinimizer<f64>;
/// Double-precision training trace.
pub type Trace = trainer::TrainingTrace<f64>;
