//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted ascending.
///
/// Only the lower triangle is read, so callers should pass an exactly
/// Hermitian matrix (see [`hermitize`]).
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let dim = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `(m + m†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `Q diag(values) Q†` for real diagonal weights.
pub fn reassemble(vectors: &CMatrix, values: &[f64]) -> CMatrix {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v);
    }
    hermitize(&(scaled * vectors.adjoint()))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Real part of the Hilbert-Schmidt inner product `tr(a† b)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Principal square root of a PSD Hermitian matrix. Eigenvalues below zero
/// are clamped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(&hermitize(m));
    let roots: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    reassemble(&vectors, &roots)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0)],
        );
        let (values, vectors) = hermitian_eigen(&m);
        assert!(values[0] <= values[1]);
        let back = reassemble(&vectors, &values);
        assert!(max_abs_diff(&back, &m) < 1e-12);
        let unit = vectors.adjoint() * &vectors;
        assert!(max_abs_diff(&unit, &identity(2)) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.7, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(0.3, 0.0)],
        );
        let root = psd_sqrt(&m);
        assert!(max_abs_diff(&(&root * &root), &m) < 1e-12);
    }
}
