//! Density matrices, benchmark state families, noise channels and fidelity metrics.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::linalg::{self, hermitian_eigen, hermitize, reassemble, CMatrix, C64};
use crate::measurement::ProbabilityDistribution;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
/// An argument whose largest eigenvalue exceeds `1 - PURE_TOL` is treated as rank one.
pub const PURE_TOL: f64 = 1e-10;

const QDM_MAGIC: &[u8; 4] = b"QDM1";

/// Largest supported qubit count for dense `2^N x 2^N` matrices.
pub const MAX_DENSE_QUBITS: usize = 12;

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(TomoError::invalid(format!("dimension {dim} is not a power of two")));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// A `d x d` Hermitian, positive semidefinite, unit-trace matrix on `N` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    qubits: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates all density-matrix invariants.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(matrix)?;
        rho.check_invariants()?;
        Ok(rho)
    }

    /// Builds a density matrix without the eigenvalue check; only the shape is
    /// validated. Used on the hot path where positivity holds by construction.
    pub fn from_matrix_unchecked(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(TomoError::invalid("density matrix must be square"));
        }
        let qubits = qubits_for_dim(matrix.nrows())?;
        Ok(Self { qubits, matrix })
    }

    pub fn maximally_mixed(qubits: usize) -> Result<Self> {
        if qubits == 0 {
            return Err(TomoError::invalid("qubit count must be at least 1"));
        }
        if qubits > MAX_DENSE_QUBITS {
            return Err(TomoError::ResourceGuard(format!("{qubits} qubits exceeds the dense cap of {}", MAX_DENSE_QUBITS)));
        }
        let dim = 1usize << qubits;
        Ok(Self { qubits, matrix: linalg::identity(dim) * C64::new(1.0 / dim as f64, 0.0) })
    }

    pub fn from_pure(state: &PureState) -> Self {
        let psi = &state.amplitudes;
        let matrix = hermitize(&(psi * psi.adjoint()));
        Self { qubits: state.qubits, matrix }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let m = &self.matrix;
        let dim = self.dim();
        for i in 0..dim {
            for j in 0..=i {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL {
                    return Err(TomoError::invalid(format!("not Hermitian at ({i},{j})")));
                }
            }
        }
        let tr = linalg::trace(m);
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(TomoError::invalid(format!("trace {tr} is not 1")));
        }
        let (values, _) = hermitian_eigen(&hermitize(m));
        if values[0] < -PSD_TOL {
            return Err(TomoError::invalid(format!("negative eigenvalue {}", values[0])));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn spectral(&self) -> SpectralForm {
        SpectralForm::of_hermitian(&self.matrix)
    }

    pub fn write_qdm1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(QDM_MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let z = self.matrix[(i, j)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_qdm1<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != QDM_MAGIC {
            return Err(TomoError::Parse("bad QDM1 magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        qubits_for_dim(dim)?;
        if dim > 1 << MAX_DENSE_QUBITS {
            return Err(TomoError::ResourceGuard(format!("dimension {dim} too large")));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            entries.push(C64::new(re, im));
        }
        Self::new(CMatrix::from_row_slice(dim, dim, &entries))
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        let dim = self.dim();
        DensityMatrixJson {
            dim,
            re: (0..dim).map(|i| (0..dim).map(|j| self.matrix[(i, j)].re).collect()).collect(),
            im: (0..dim).map(|i| (0..dim).map(|j| self.matrix[(i, j)].im).collect()).collect(),
        }
    }

    pub fn from_json(doc: &DensityMatrixJson) -> Result<Self> {
        let dim = doc.dim;
        if doc.re.len() != dim || doc.im.len() != dim {
            return Err(TomoError::Parse("row count does not match dim".into()));
        }
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            if doc.re[i].len() != dim || doc.im[i].len() != dim {
                return Err(TomoError::Parse(format!("row {i} has wrong length")));
            }
            for j in 0..dim {
                m[(i, j)] = C64::new(doc.re[i][j], doc.im[i][j]);
            }
        }
        Self::new(m)
    }
}

/// Human-readable JSON form `{"dim": d, "re": [[...]], "im": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    qubits: usize,
    amplitudes: nalgebra::DVector<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let qubits = qubits_for_dim(amplitudes.len())?;
        let v = nalgebra::DVector::from_vec(amplitudes);
        if (v.norm() - 1.0).abs() > 1e-12 {
            return Err(TomoError::invalid(format!("state norm {} is not 1", v.norm())));
        }
        Ok(Self { qubits, amplitudes: v })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &nalgebra::DVector<C64> {
        &self.amplitudes
    }

    /// `<psi| rho |psi>`.
    pub fn expectation(&self, rho: &CMatrix) -> f64 {
        let psi = &self.amplitudes;
        (psi.adjoint() * rho * psi)[(0, 0)].re
    }
}

/// `Q diag(eigenvalues) Q†` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralForm {
    pub eigenvectors: CMatrix,
    pub eigenvalues: Vec<f64>,
}

impl SpectralForm {
    pub fn of_hermitian(m: &CMatrix) -> Self {
        let (eigenvalues, eigenvectors) = hermitian_eigen(&hermitize(m));
        Self { eigenvectors, eigenvalues }
    }

    pub fn reconstruct(&self) -> CMatrix {
        reassemble(&self.eigenvectors, &self.eigenvalues)
    }
}

/// White-noise mixing `p` and depolarizing strength `lambda`, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mixing: f64,
    pub depolarizing: f64,
}

impl NoiseSpec {
    pub fn new(mixing: f64, depolarizing: f64) -> Result<Self> {
        for (name, v) in [("mixing", mixing), ("depolarizing", depolarizing)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TomoError::invalid(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(Self { mixing, depolarizing })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonicalKind {
    Product,
    W,
    Ghzi,
}

impl CanonicalKind {
    pub fn name(self) -> &'static str {
        match self {
            CanonicalKind::Product => "product",
            CanonicalKind::W => "w",
            CanonicalKind::Ghzi => "ghzi",
        }
    }
}

/// Exact amplitude vector of the product `|+>^N`, W or GHZi state.
pub fn make_canonical_state(kind: CanonicalKind, qubits: usize) -> Result<PureState> {
    if qubits == 0 {
        return Err(TomoError::invalid("qubit count must be at least 1"));
    }
    if qubits > MAX_DENSE_QUBITS {
        return Err(TomoError::ResourceGuard(format!("{qubits} qubits exceeds the dense cap of {}", MAX_DENSE_QUBITS)));
    }
    let dim = 1usize << qubits;
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    match kind {
        CanonicalKind::Product => {
            let a = 1.0 / (dim as f64).sqrt();
            amps.iter_mut().for_each(|z| *z = C64::new(a, 0.0));
        }
        CanonicalKind::W => {
            let a = 1.0 / (qubits as f64).sqrt();
            for q in 0..qubits {
                amps[1 << q] = C64::new(a, 0.0);
            }
        }
        CanonicalKind::Ghzi => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            amps[0] = C64::new(a, 0.0);
            amps[dim - 1] = C64::new(0.0, a);
        }
    }
    PureState::new(amps)
}

/// `(1 - lambda) |psi><psi| + lambda I / d`.
pub fn depolarize(state: &PureState, lambda: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TomoError::invalid(format!("depolarizing strength {lambda} outside [0,1]")));
    }
    let dim = state.dim();
    let pure = DensityMatrix::from_pure(state).into_matrix();
    let m = pure * C64::new(1.0 - lambda, 0.0)
        + linalg::identity(dim) * C64::new(lambda / dim as f64, 0.0);
    DensityMatrix::from_matrix_unchecked(m)
}

/// White-noise mixture `p |psi><psi| + (1 - p) I / d`.
pub fn white_noise(state: &PureState, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TomoError::invalid(format!("mixing {p} outside [0,1]")));
    }
    depolarize(state, 1.0 - p)
}

/// Purity of normalized weights `exp(-alpha i)`, i = 0..dim-1.
fn expdecay_purity(alpha: f64, dim: usize) -> f64 {
    let weights = expdecay_weights(alpha, dim);
    weights.iter().map(|w| w * w).sum()
}

fn expdecay_weights(alpha: f64, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|i| (-alpha * i as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

const ALPHA_MAX: f64 = 64.0;

/// Decay rate whose normalized exponential spectrum has the requested purity.
pub fn expdecay_rate(dim: usize, target_purity: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, ALPHA_MAX);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if expdecay_purity(mid, dim) < target_purity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Haar-like random unitary: QR of a complex Gaussian matrix with the phases
/// of `R`'s diagonal folded back into `Q`.
pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random mixed state whose eigenvalues decay as `exp(-alpha i)` with `alpha`
/// chosen to hit `target_purity`, in a random eigenbasis.
pub fn random_expdecay_state(qubits: usize, target_purity: f64, seed: u64) -> Result<DensityMatrix> {
    if qubits == 0 {
        return Err(TomoError::invalid("qubit count must be at least 1"));
    }
    if qubits > MAX_DENSE_QUBITS {
        return Err(TomoError::ResourceGuard(format!("{qubits} qubits exceeds the dense cap of {}", MAX_DENSE_QUBITS)));
    }
    let dim = 1usize << qubits;
    let floor = 1.0 / dim as f64;
    if !(target_purity >= floor - 1e-12 && target_purity <= 1.0) {
        return Err(TomoError::invalid(format!(
            "purity {target_purity} outside [{floor}, 1]"
        )));
    }
    let spectrum = if target_purity >= 1.0 - 1e-12 {
        let mut s = vec![0.0; dim];
        s[0] = 1.0;
        s
    } else if target_purity <= floor {
        vec![floor; dim]
    } else {
        expdecay_weights(expdecay_rate(dim, target_purity), dim)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unitary(dim, &mut rng);
    DensityMatrix::from_matrix_unchecked(reassemble(&u, &spectrum))
}

/// `tr(rho^2)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    // tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    rho.matrix().iter().map(|z| z.norm_sqr()).sum()
}

fn dominant_pure(spec: &SpectralForm) -> Option<PureState> {
    let last = spec.eigenvalues.len() - 1;
    if spec.eigenvalues[last] > 1.0 - PURE_TOL {
        let v: Vec<C64> = spec.eigenvectors.column(last).iter().copied().collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        PureState::new(v.into_iter().map(|z| z / norm).collect()).ok()
    } else {
        None
    }
}

fn spectral_root(spec: &SpectralForm) -> CMatrix {
    let roots: Vec<f64> = spec.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    reassemble(&spec.eigenvectors, &roots)
}

/// `‖√a √b‖_*^2`, which equals `(tr sqrt(√a b √a))^2` and is symmetric in its arguments.
fn fidelity_from_roots(root_a: &CMatrix, root_b: &CMatrix) -> f64 {
    let s: f64 = (root_a * root_b).singular_values().iter().sum();
    (s * s).clamp(0.0, 1.0)
}

/// Uhlmann fidelity. When either argument is rank one within tolerance the
/// overlap `<psi| other |psi>` is returned directly.
pub fn quantum_fidelity(estimate: &DensityMatrix, target: &DensityMatrix) -> Result<f64> {
    if estimate.dim() != target.dim() {
        return Err(TomoError::invalid(format!(
            "dimension mismatch {} vs {}",
            estimate.dim(),
            target.dim()
        )));
    }
    FidelityReference::new(target).fidelity(estimate)
}

/// A target prepared once for repeated fidelity evaluations against many estimates.
#[derive(Debug, Clone)]
pub struct FidelityReference {
    dim: usize,
    pure: Option<PureState>,
    root: Option<CMatrix>,
    matrix: CMatrix,
}

impl FidelityReference {
    pub fn new(target: &DensityMatrix) -> Self {
        let spec = target.spectral();
        let pure = dominant_pure(&spec);
        let root = if pure.is_none() { Some(spectral_root(&spec)) } else { None };
        Self { dim: target.dim(), pure, root, matrix: target.matrix().clone() }
    }

    pub fn fidelity(&self, estimate: &DensityMatrix) -> Result<f64> {
        if estimate.dim() != self.dim {
            return Err(TomoError::invalid("dimension mismatch"));
        }
        if let Some(psi) = &self.pure {
            return Ok(psi.expectation(estimate.matrix()).clamp(0.0, 1.0));
        }
        self.fidelity_spectral(&estimate.spectral())
    }

    /// Fidelity of an estimate supplied in spectral form (one decomposition).
    pub fn fidelity_spectral(&self, spec: &SpectralForm) -> Result<f64> {
        if spec.eigenvectors.nrows() != self.dim {
            return Err(TomoError::invalid("dimension mismatch"));
        }
        if let Some(neg) = spec.eigenvalues.iter().find(|&&v| v < -PSD_TOL) {
            return Err(TomoError::invalid(format!("negative eigenvalue {neg} in spectral form")));
        }
        if let Some(psi) = &self.pure {
            return Ok(psi.expectation(&spec.reconstruct()).clamp(0.0, 1.0));
        }
        if let Some(psi) = dominant_pure(spec) {
            return Ok(psi.expectation(&self.matrix).clamp(0.0, 1.0));
        }
        let root = self.root.as_ref().expect("mixed reference keeps its square root");
        Ok(fidelity_from_roots(&spectral_root(spec), root))
    }
}

/// Fidelity of an estimate given as `Q Σ Q†` against `target`, using `√ρ̂ = Q√Σ Q†`.
pub fn fidelity_from_spectral(spec: &SpectralForm, target: &DensityMatrix) -> Result<f64> {
    if spec.eigenvectors.nrows() != target.dim() {
        return Err(TomoError::invalid("dimension mismatch"));
    }
    FidelityReference::new(target).fidelity_spectral(spec)
}

fn check_distribution_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TomoError::invalid(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Squared Bhattacharyya overlap `(Σ_k √(P̂_k P_k))^2`.
pub fn classical_fidelity(
    estimate: &ProbabilityDistribution,
    target: &ProbabilityDistribution,
) -> Result<f64> {
    check_distribution_pair(estimate.values(), target.values())?;
    let s: f64 = estimate
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, q)| (p.max(0.0) * q.max(0.0)).sqrt())
        .sum();
    Ok((s * s).clamp(0.0, 1.0))
}

/// Monte-Carlo estimate `(E_{k ~ P̂} √(P_k / P̂_k))^2`. Tends to sit below the
/// exact classical fidelity.
pub fn sampled_classical_fidelity(
    estimate: &ProbabilityDistribution,
    target: &ProbabilityDistribution,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_distribution_pair(estimate.values(), target.values())?;
    if samples == 0 {
        return Err(TomoError::invalid("sample count must be at least 1"));
    }
    let draws = crate::measurement::sample_indices(estimate.values(), samples, seed);
    let mut total = 0.0;
    for (k, count) in draws.iter().enumerate() {
        if *count > 0 {
            let ratio = target.values()[k].max(0.0) / estimate.values()[k];
            total += *count as f64 * ratio.sqrt();
        }
    }
    let mean = total / samples as f64;
    Ok(mean * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn diag(values: &[f64]) -> DensityMatrix {
        let n = values.len();
        let m = CMatrix::from_fn(n, n, |i, j| if i == j { C64::new(values[i], 0.0) } else { C64::new(0.0, 0.0) });
        DensityMatrix::new(m).unwrap()
    }

    fn close(a: C64, re: f64, im: f64) -> bool {
        (a - C64::new(re, im)).norm() < 1e-12
    }

    #[test]
    fn canonical_amplitudes() {
        let p = make_canonical_state(CanonicalKind::Product, 1).unwrap();
        assert!(close(p.amplitudes()[0], FRAC_1_SQRT_2, 0.0));
        assert!(close(p.amplitudes()[1], FRAC_1_SQRT_2, 0.0));

        let g = make_canonical_state(CanonicalKind::Ghzi, 2).unwrap();
        let want = [(FRAC_1_SQRT_2, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, FRAC_1_SQRT_2)];
        for (z, (re, im)) in g.amplitudes().iter().zip(want) {
            assert!(close(*z, re, im));
        }

        let w = make_canonical_state(CanonicalKind::W, 2).unwrap();
        let want = [0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0];
        for (z, re) in w.amplitudes().iter().zip(want) {
            assert!(close(*z, re, 0.0));
        }
        assert!(matches!(
            make_canonical_state(CanonicalKind::W, 0),
            Err(TomoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn w_state_has_single_excitations() {
        let w = make_canonical_state(CanonicalKind::W, 3).unwrap();
        let nonzero: Vec<usize> = (0..8).filter(|&i| w.amplitudes()[i].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![1, 2, 4]);
    }

    #[test]
    fn depolarize_limits() {
        let zero = PureState::new(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let same = depolarize(&zero, 0.0).unwrap();
        assert!(close(same.matrix()[(0, 0)], 1.0, 0.0));
        let mixed = depolarize(&zero, 1.0).unwrap();
        assert!(close(mixed.matrix()[(0, 0)], 0.5, 0.0));
        assert!(close(mixed.matrix()[(1, 1)], 0.5, 0.0));
        let half = depolarize(&zero, 0.5).unwrap();
        assert!(close(half.matrix()[(0, 0)], 0.75, 0.0));
        assert!(close(half.matrix()[(1, 1)], 0.25, 0.0));
        assert!(depolarize(&zero, 1.5).is_err());
        assert!(depolarize(&zero, -0.1).is_err());
    }

    #[test]
    fn expdecay_limits_and_target() {
        let mixed = random_expdecay_state(2, 0.25, 1).unwrap();
        assert!(linalg::max_abs_diff(mixed.matrix(), DensityMatrix::maximally_mixed(2).unwrap().matrix()) < 1e-12);
        let pure = random_expdecay_state(2, 1.0, 1).unwrap();
        assert!((purity(&pure) - 1.0).abs() < 1e-12);
        pure.check_invariants().unwrap();

        // Oracle: bisection on the decay rate, then direct purity of the spectrum.
        let rho = random_expdecay_state(2, 0.5, 7).unwrap();
        rho.check_invariants().unwrap();
        assert!((purity(&rho) - 0.5).abs() <= 1e-6);

        assert!(random_expdecay_state(2, 0.2, 7).is_err());
        assert!(random_expdecay_state(2, 1.01, 7).is_err());
    }

    #[test]
    fn expdecay_is_seed_deterministic() {
        let a = random_expdecay_state(3, 0.4, 11).unwrap();
        let b = random_expdecay_state(3, 0.4, 11).unwrap();
        let c = random_expdecay_state(3, 0.4, 12).unwrap();
        assert_eq!(a, b);
        assert!(linalg::max_abs_diff(a.matrix(), c.matrix()) > 1e-3);
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&DensityMatrix::maximally_mixed(3).unwrap()) - 0.125).abs() < 1e-14);
        let psi = make_canonical_state(CanonicalKind::Ghzi, 3).unwrap();
        assert!((purity(&DensityMatrix::from_pure(&psi)) - 1.0).abs() < 1e-12);
        let p: f64 = 0.37;
        let rho = white_noise(&make_canonical_state(CanonicalKind::Product, 10).unwrap(), p).unwrap();
        let d = 1024.0;
        let expected = (1.0 - 1.0 / d) * p * p + 1.0 / d;
        assert!((purity(&rho) - expected).abs() < 1e-10);
    }

    #[test]
    fn fidelity_examples() {
        let zero = diag(&[1.0, 0.0]);
        let one = diag(&[0.0, 1.0]);
        let mix = diag(&[0.75, 0.25]);
        assert!((quantum_fidelity(&mix, &mix).unwrap() - 1.0).abs() < 1e-12);
        assert!((quantum_fidelity(&zero, &mix).unwrap() - 0.75).abs() < 1e-12);
        assert!((quantum_fidelity(&mix, &zero).unwrap() - 0.75).abs() < 1e-12);
        assert!(quantum_fidelity(&zero, &one).unwrap().abs() < 1e-12);
        let other = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(quantum_fidelity(&zero, &other).is_err());

        let spec = zero.spectral();
        assert!((fidelity_from_spectral(&spec, &mix).unwrap() - 0.75).abs() < 1e-12);
        assert!((fidelity_from_spectral(&mix.spectral(), &mix).unwrap() - 1.0).abs() < 1e-12);
        let bad = SpectralForm { eigenvectors: linalg::identity(2), eigenvalues: vec![-0.1, 1.1] };
        assert!(fidelity_from_spectral(&bad, &mix).is_err());
    }

    #[test]
    fn mixed_fidelity_matches_commuting_formula() {
        // Commuting diagonal states: F = (Σ √(a_i b_i))^2.
        let a = diag(&[0.5, 0.3, 0.2, 0.0]);
        let b = diag(&[0.1, 0.2, 0.3, 0.4]);
        let expected: f64 = [0.05f64, 0.06, 0.06, 0.0].iter().map(|x| x.sqrt()).sum::<f64>().powi(2);
        assert!((quantum_fidelity(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn classical_fidelity_examples() {
        let p = ProbabilityDistribution::new(vec![1.0, 0.0]).unwrap();
        let q = ProbabilityDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!((classical_fidelity(&q, &p).unwrap() - 0.5).abs() < 1e-14);
        assert!((classical_fidelity(&q, &q).unwrap() - 1.0).abs() < 1e-14);
        let r = ProbabilityDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(classical_fidelity(&q, &r).is_err());
        let s = sampled_classical_fidelity(&q, &q, 17, 3).unwrap();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn qdm1_and_json_round_trip() {
        let rho = random_expdecay_state(2, 0.6, 5).unwrap();
        let mut bytes = Vec::new();
        rho.write_qdm1(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"QDM1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 12 + 16 * 16);
        let back = DensityMatrix::read_qdm1(bytes.as_slice()).unwrap();
        assert_eq!(back, rho);

        let text = serde_json::to_string(&rho.to_json()).unwrap();
        let doc: DensityMatrixJson = serde_json::from_str(&text).unwrap();
        assert_eq!(DensityMatrix::from_json(&doc).unwrap(), rho);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(DensityMatrix::read_qdm1(corrupt.as_slice()).is_err());
    }
}
