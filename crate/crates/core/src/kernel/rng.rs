use rand_core::{Rng, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

use crate::kernel::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Reproducible random stream identified by `(seed, stream_id)`.
///
/// The xoshiro256** state is expanded from the pair with splitmix64, so equal pairs give
/// identical sequences on every platform. A generator is single-owner state: parallel workers
/// each take their own `stream_id`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
    seed: u64,
    stream_id: u64,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut by_seed = SplitMix64::seed_from_u64(seed);
        let mut by_stream = SplitMix64::seed_from_u64(stream_id ^ 0xD1B5_4A32_D192_ED03);
        let mut state = [0u8; 32];
        for chunk in state.chunks_mut(8) {
            let word = by_seed.next_u64() ^ by_stream.next_u64().rotate_left(29);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self {
            inner: Xoshiro256StarStar::from_seed(state),
            seed,
            stream_id,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A sibling stream with the same seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw via the Box–Muller transform; the second variate of each pair is
    /// cached for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// `rows × cols` matrix of i.i.d. N(0, 1) entries, filled row-major.
    pub fn gaussian_matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> DenseMatrix<T> {
        let data = (0..rows * cols)
            .map(|_| T::lit(self.standard_normal()))
            .collect();
        DenseMatrix::from_vec(rows, cols, data).expect("positive shape and finite normals")
    }
}
