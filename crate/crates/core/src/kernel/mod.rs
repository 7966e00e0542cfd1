//! Dense linear algebra and reproducible random streams.

pub mod matrix;
pub mod rng;
pub mod svd;

pub use matrix::{matmul, DenseMatrix};
pub use rng::SeededRng;
pub use svd::{singular_values, svd, SvdResult};
