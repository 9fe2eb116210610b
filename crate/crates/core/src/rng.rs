//! Seeded random source for weight initialization and fuzzing.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;

/// Deterministic random stream: identical seeds give identical draws.
///
/// Single owner; clone it to fork an independent copy of the current state.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed), spare_normal: None }
    }

    /// Stream for one named subsystem: `seed XOR fnv1a(label)`.
    pub fn derived(seed: u64, label: &str) -> Self {
        Self::new(derive_seed(seed, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box–Muller; the second value of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let radius = math::sqrt(-2.0 * math::ln(u1));
        let angle = 2.0 * PI * u2;
        self.spare_normal = Some(radius * math::sin(angle));
        radius * math::cos(angle)
    }

    /// `rows × cols` matrix of i.i.d. `N(0, sigma²)` entries.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> Result<DenseMatrix> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(alloc::format!("sigma must be positive, got {sigma}")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter(alloc::format!("empty {rows}x{cols} gaussian matrix")));
        }
        Ok(DenseMatrix::from_fn(rows, cols, |_, _| sigma * self.standard_normal()))
    }

    /// `rows × cols` matrix with entries uniform in `[-bound, bound)`.
    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, bound: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| self.uniform_range(-bound, bound))
    }

    /// `n` independent uniform signs, one random bit each.
    pub fn rademacher_vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| if self.next_u64() >> 63 == 1 { 1.0 } else { -1.0 }).collect()
    }

    /// A point drawn uniformly from the unit sphere in `R^d`.
    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| self.standard_normal()).collect();
            let n = math::sqrt(v.iter().map(|x| x * x).sum());
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// 64-bit FNV-1a.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a(label)
}
