//! Seeded SplitMix64 generator.
//!
//! The algorithm is fixed so that random initial data and trial directions can
//! be reproduced bit-for-bit by other implementations:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! Uniform doubles in `[0, 1)` take the top 53 bits: `(z >> 11) * 2^-53`.
//! Log-uniform samples on `[lo, hi]` are `lo * (hi / lo)^r` with `r` uniform.

use crate::linalg::DenseMatrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for trial `index` under a run seed: the generator
    /// is seeded with the first output of `SplitMix64::new(seed ^ index·γ)`.
    pub fn for_stream(seed: u64, index: u64) -> Self {
        let mut mixer = Self::new(seed ^ index.wrapping_mul(GOLDEN_GAMMA));
        Self::new(mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo * (hi / lo).powf(self.next_f64())
    }

    /// Matrix with entries uniform on `[-1, 1)`, filled row by row.
    pub fn matrix(&mut self, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, |_, _| self.uniform(-1.0, 1.0)).expect("finite entries")
    }

    pub fn symmetric_matrix(&mut self, n: usize) -> DenseMatrix {
        let x = self.matrix(n);
        (&x + &x.transpose()).scale(0.5)
    }

    pub fn skew_matrix(&mut self, n: usize) -> DenseMatrix {
        let x = self.matrix(n);
        (&x - &x.transpose()).scale(0.5)
    }
}
