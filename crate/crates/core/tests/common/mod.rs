#![allow(dead_code)]

use nalgebra::DMatrix;
use qst_core::mapping::ParamVector;
use qst_core::states::DensityMatrix;
use qst_core::{CMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    DMatrix::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Ginibre state `GG†/tr` with a random rank in `1..=d`.
pub fn random_state(qubits: usize, rng: &mut impl Rng) -> DensityMatrix {
    let d = 1usize << qubits;
    let rank = rng.random_range(1..=d);
    let g = gaussian_matrix(d, rank, rng);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    let m = m / C64::new(tr, 0.0);
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(m).expect("ginibre state is valid")
}

pub fn random_hermitian(d: usize, rng: &mut impl Rng) -> CMatrix {
    let g = gaussian_matrix(d, d, rng);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_theta(qubits: usize, rng: &mut impl Rng) -> ParamVector {
    let n = 1usize << (2 * qubits);
    ParamVector((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
}

pub fn max_abs(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}
