//! Seedable, portable random streams.
//!
//! Every stream is ChaCha20 (RFC 8439 block function, 20 rounds) as exposed by
//! `rand_chacha::ChaCha20Rng`:
//!
//! * key: the 64-bit master seed in little-endian order in bytes `0..8`,
//!   bytes `8..32` zero;
//! * stream (nonce): the 64-bit run index;
//! * word position starts at zero.
//!
//! Derived values, so another implementation can reproduce them exactly:
//!
//! * `uniform()`: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`;
//! * `normal()`: Box–Muller on two consecutive uniforms `a`, `b`:
//!   `sqrt(-2 ln(1 - a)) * cos(2π b)`; the sine branch is discarded;
//! * `below(n)`: `floor(uniform() * n)`;
//! * `shuffle`: Fisher–Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Prng {
    inner: ChaCha20Rng,
}

impl Prng {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Child stream for run `index` of the same master seed.
    pub fn derive(master_seed: u64, index: u64) -> Self {
        Self::new(master_seed, index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let a = self.uniform();
        let b = self.uniform();
        (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Tensor of i.i.d. `N(0, std²)` entries.
    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.normal() * std)).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    /// Tensor of i.i.d. entries uniform in `[lo, hi)`.
    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(lo + (hi - lo) * self.uniform())).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    /// Uniformly distributed unit vector of length `d`.
    pub fn unit_vector<T: Scalar>(&mut self, d: usize) -> Tensor<T> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                return Tensor::vector(v.into_iter().map(|x| T::of(x / norm)).collect());
            }
        }
    }
}
