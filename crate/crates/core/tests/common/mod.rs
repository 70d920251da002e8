//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand_chacha::rand_core::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn matrix(&mut self, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| self.uniform(lo, hi))
    }

    /// LLᵀ + floor·I.
    pub fn spd(&mut self, n: usize, floor: f64) -> DMatrix<f64> {
        let l = self.matrix(n, -1.0, 1.0);
        &l * l.transpose() + DMatrix::identity(n, n) * floor
    }

    /// Random matrix shifted so every eigenvalue has real part ≥ `min_re`.
    pub fn stable(&mut self, n: usize, min_re: f64) -> DMatrix<f64> {
        let b = self.matrix(n, -1.0, 1.0);
        let lo = b.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let shift = min_re - lo + self.uniform(0.0, 1.0);
        b + DMatrix::identity(n, n) * shift
    }
}

/// `∫₀^∞ e^{−γs} Σ e^{−γᵀs} ds` by composite Simpson on a truncated range,
/// with the propagator from a matrix exponential.
pub fn lyapunov_by_quadrature(gamma: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let min_re = gamma.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let big = gamma.abs().max() + 1.0;
    let s_end = 40.0 / min_re;
    let h = 0.25 / big * 0.05;
    let steps = 2 * ((s_end / h / 2.0).ceil() as usize);
    let h = s_end / steps as f64;
    let prop = (gamma * -h).exp();
    let mut e = DMatrix::identity(gamma.nrows(), gamma.nrows());
    let mut acc = DMatrix::zeros(gamma.nrows(), gamma.nrows());
    for k in 0..=steps {
        let w = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &e * sigma * e.transpose() * w;
        e = &e * &prop;
    }
    acc * (h / 3.0)
}
