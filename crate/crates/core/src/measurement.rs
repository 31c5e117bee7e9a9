//! Product-structured POVMs: the tetrahedral single-qubit POVM, Born
//! probabilities by qubit-wise contraction, the adjoint map `w ↦ Σ_k w_k M_k`,
//! and multinomial shot sampling.
//!
//! Outcome vectors are indexed with the first qubit as the most significant
//! base-`K` digit.

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TomoError};
use crate::linalg::{CMatrix, C64};
use crate::states::DensityMatrix;

/// Largest qubit count the Kronecker-product reference will accept.
pub const DENSE_ORACLE_MAX_QUBITS: usize = 6;
/// Imaginary residue allowed in contracted probabilities before it is an error.
pub const IMAG_RESIDUE_TOL: f64 = 1e-10;

type Effect = [[C64; 2]; 2];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Single-qubit POVM with `K` effects.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleQubitPovm {
    effects: Vec<Effect>,
    bloch_vectors: Vec<[f64; 3]>,
}

impl SingleQubitPovm {
    /// Effects `¼(I + s·σ)` built from Bloch vectors. The effects must sum to identity.
    pub fn from_bloch_vectors(bloch_vectors: Vec<[f64; 3]>) -> Result<Self> {
        let k = bloch_vectors.len() as f64;
        let effects: Vec<Effect> = bloch_vectors
            .iter()
            .map(|s| {
                let w = 1.0 / k;
                [
                    [c(w * (1.0 + s[2]), 0.0), c(w * s[0], -w * s[1])],
                    [c(w * s[0], w * s[1]), c(w * (1.0 - s[2]), 0.0)],
                ]
            })
            .collect();
        let povm = Self { effects, bloch_vectors };
        povm.validate()?;
        Ok(povm)
    }

    fn validate(&self) -> Result<()> {
        if self.effects.len() < 2 {
            return Err(TomoError::invalid("a POVM needs at least two effects"));
        }
        let mut sum = [[c(0.0, 0.0); 2]; 2];
        for m in &self.effects {
            let (tr, det) = (m[0][0] + m[1][1], m[0][0] * m[1][1] - m[0][1] * m[1][0]);
            if tr.re < -1e-12 || det.re < -1e-12 {
                return Err(TomoError::invalid("POVM effect is not positive semidefinite"));
            }
            for r in 0..2 {
                for col in 0..2 {
                    sum[r][col] += m[r][col];
                }
            }
        }
        let eye = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        for r in 0..2 {
            for col in 0..2 {
                if (sum[r][col] - eye[r][col]).norm() > 1e-12 {
                    return Err(TomoError::invalid("POVM effects do not sum to identity"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn effect(&self, a: usize) -> CMatrix {
        let m = &self.effects[a];
        CMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
    }

    pub fn bloch_vectors(&self) -> &[[f64; 3]] {
        &self.bloch_vectors
    }
}

/// The four-outcome POVM whose Bloch vectors form a regular tetrahedron.
pub fn tetrahedral_povm() -> SingleQubitPovm {
    let t = 1.0 / 3f64.sqrt();
    SingleQubitPovm::from_bloch_vectors(vec![[t, t, t], [-t, -t, t], [-t, t, -t], [t, -t, -t]])
        .expect("tetrahedral effects are a valid POVM")
}

/// `N`-fold tensor power of a single-qubit POVM, with each effect stored as
/// a 4-vector over the (row, column) index pair.
#[derive(Debug, Clone)]
pub struct ProductPovm {
    base: SingleQubitPovm,
    qubits: usize,
    /// Row `a`: `conj(M_a[r][c])` at position `2r + c`, so that
    /// `tr(M_a X) = Σ_x forward[a][x] · vec(X)[x]` for Hermitian `M_a`.
    forward: Vec<[C64; 4]>,
    /// Row `a`: `M_a[r][c]` at position `2r + c`.
    adjoint: Vec<[C64; 4]>,
    /// Dense row-major index `r*d + c` for each interleaved tensor index.
    interleave: Vec<usize>,
}

impl ProductPovm {
    pub fn new(base: SingleQubitPovm, qubits: usize) -> Result<Self> {
        if qubits == 0 {
            return Err(TomoError::invalid("qubit count must be at least 1"));
        }
        if qubits > crate::states::MAX_DENSE_QUBITS {
            return Err(TomoError::ResourceGuard(format!("{qubits} qubits exceeds the dense cap of {}", crate::states::MAX_DENSE_QUBITS)));
        }
        let forward = base
            .effects
            .iter()
            .map(|m| [m[0][0].conj(), m[0][1].conj(), m[1][0].conj(), m[1][1].conj()])
            .collect();
        let adjoint = base.effects.iter().map(|m| [m[0][0], m[0][1], m[1][0], m[1][1]]).collect();
        let dim = 1usize << qubits;
        let mut interleave = vec![0usize; dim * dim];
        for r in 0..dim {
            for col in 0..dim {
                let mut idx = 0usize;
                for b in 0..qubits {
                    idx |= ((r >> b) & 1) << (2 * b + 1);
                    idx |= ((col >> b) & 1) << (2 * b);
                }
                interleave[idx] = r * dim + col;
            }
        }
        Ok(Self { base, qubits, forward, adjoint, interleave })
    }

    pub fn tetrahedral(qubits: usize) -> Result<Self> {
        Self::new(tetrahedral_povm(), qubits)
    }

    pub fn base(&self) -> &SingleQubitPovm {
        &self.base
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    /// Number of single-qubit outcomes `K`.
    pub fn outcomes_per_qubit(&self) -> usize {
        self.base.len()
    }

    /// `K^N`.
    pub fn outcome_count(&self) -> usize {
        self.base.len().pow(self.qubits as u32)
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    /// Vectorized effects, one row per effect, entry `2r + c` holding `M_a[r][c]`.
    pub fn vectorized(&self) -> &[[C64; 4]] {
        &self.adjoint
    }

    /// Single-qubit outcome digits of a joint outcome index.
    pub fn outcome_digits(&self, mut k: usize) -> Vec<usize> {
        let base = self.base.len();
        let mut digits = vec![0; self.qubits];
        for q in (0..self.qubits).rev() {
            digits[q] = k % base;
            k /= base;
        }
        digits
    }

    /// The full effect `M_{k_1} ⊗ … ⊗ M_{k_N}`.
    pub fn joint_effect(&self, k: usize) -> CMatrix {
        let digits = self.outcome_digits(k);
        let mut m = CMatrix::from_element(1, 1, c(1.0, 0.0));
        for a in digits {
            m = m.kronecker(&self.base.effect(a));
        }
        m
    }
}

/// Born probabilities `P_k = tr(M_k ρ)`, length `K^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution {
    values: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_distribution(&values)?;
        Ok(Self { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Empirical frequencies with the shot count that produced them; `shots == 0`
/// marks exact probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    values: Vec<f64>,
    shots: u64,
}

impl FrequencyVector {
    pub fn new(values: Vec<f64>, shots: u64) -> Result<Self> {
        check_distribution(&values)?;
        Ok(Self { values, shots })
    }

    pub fn exact(p: &ProbabilityDistribution) -> Self {
        Self { values: p.values.clone(), shots: 0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_distribution(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(TomoError::invalid("empty distribution"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < -1e-12) {
        return Err(TomoError::invalid(format!("invalid probability {v}")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(TomoError::invalid(format!("probabilities sum to {total}")));
    }
    Ok(())
}

fn check_dims(povm: &ProductPovm, rho: &DensityMatrix) -> Result<()> {
    if povm.dim() != rho.dim() {
        return Err(TomoError::invalid(format!(
            "POVM acts on dimension {} but state has dimension {}",
            povm.dim(),
            rho.dim()
        )));
    }
    Ok(())
}

/// Reference Born probabilities from explicit Kronecker products.
pub fn born_probabilities_dense(povm: &ProductPovm, rho: &DensityMatrix) -> Result<ProbabilityDistribution> {
    check_dims(povm, rho)?;
    if povm.qubits() > DENSE_ORACLE_MAX_QUBITS {
        return Err(TomoError::ResourceGuard(format!(
            "dense Born oracle is limited to {DENSE_ORACLE_MAX_QUBITS} qubits"
        )));
    }
    let values = (0..povm.outcome_count())
        .map(|k| (povm.joint_effect(k) * rho.matrix()).trace().re)
        .collect();
    Ok(ProbabilityDistribution::from_raw(values))
}

/// Born probabilities by contracting one qubit at a time.
///
/// `ρ` is viewed as a rank-`N` tensor of 4-dimensional (row bit, column bit)
/// axes. Each step contracts the leading uncontracted axis against the
/// `K x 4` vectorized effects, so after step `q` the array has shape
/// `(K,)*q x (4,)*(N-q)`.
pub fn born_probabilities_fast(povm: &ProductPovm, rho: &DensityMatrix) -> Result<ProbabilityDistribution> {
    check_dims(povm, rho)?;
    let m = rho.matrix();
    if !crate::linalg::is_finite(m) {
        return Err(TomoError::numeric("state has nonfinite entries"));
    }
    let dim = povm.dim();
    // nalgebra is column-major; `interleave` yields row-major offsets.
    let mut current: Vec<C64> = povm
        .interleave
        .iter()
        .map(|&off| m[(off / dim, off % dim)])
        .collect();
    let k = povm.outcomes_per_qubit();
    let n = povm.qubits();
    let mut outer = 1usize;
    for q in 0..n {
        let rest = 4usize.pow((n - q - 1) as u32);
        let mut next = vec![c(0.0, 0.0); outer * k * rest];
        for o in 0..outer {
            let src = &current[o * 4 * rest..(o + 1) * 4 * rest];
            for (a, row) in povm.forward.iter().enumerate() {
                let dst = &mut next[(o * k + a) * rest..(o * k + a + 1) * rest];
                for (x, &coef) in row.iter().enumerate() {
                    let block = &src[x * rest..(x + 1) * rest];
                    for (d, s) in dst.iter_mut().zip(block) {
                        *d += coef * s;
                    }
                }
            }
        }
        current = next;
        outer *= k;
    }
    let mut values = Vec::with_capacity(current.len());
    for z in current {
        if z.im.abs() > IMAG_RESIDUE_TOL || !z.re.is_finite() {
            return Err(TomoError::numeric(format!("contracted probability {z} is not real")));
        }
        values.push(z.re);
    }
    Ok(ProbabilityDistribution::from_raw(values))
}

/// `Σ_k weights_k M_k`, computed by running the contraction in reverse
/// without forming any individual `M_k`.
pub fn adjoint_accumulate(povm: &ProductPovm, weights: &[f64]) -> Result<CMatrix> {
    if weights.len() != povm.outcome_count() {
        return Err(TomoError::invalid(format!(
            "expected {} weights, got {}",
            povm.outcome_count(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(TomoError::numeric("nonfinite weight"));
    }
    let k = povm.outcomes_per_qubit();
    let n = povm.qubits();
    let mut current: Vec<C64> = weights.iter().map(|&w| c(w, 0.0)).collect();
    let mut outer = 1usize;
    for q in 0..n {
        let rest = k.pow((n - q - 1) as u32);
        let mut next = vec![c(0.0, 0.0); outer * 4 * rest];
        for o in 0..outer {
            let src = &current[o * k * rest..(o + 1) * k * rest];
            for (a, row) in povm.adjoint.iter().enumerate() {
                let block = &src[a * rest..(a + 1) * rest];
                for (x, &coef) in row.iter().enumerate() {
                    let dst = &mut next[(o * 4 + x) * rest..(o * 4 + x + 1) * rest];
                    for (d, s) in dst.iter_mut().zip(block) {
                        *d += coef * s;
                    }
                }
            }
        }
        current = next;
        outer *= 4;
    }
    let dim = povm.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for (z, &off) in current.into_iter().zip(&povm.interleave) {
        out[(off / dim, off % dim)] = z;
    }
    Ok(out)
}

/// Outcome counts of `shots` draws from `probabilities` (inverse-CDF sampling).
pub(crate) fn sample_indices(probabilities: &[f64], shots: usize, seed: u64) -> Vec<u64> {
    let mut cdf = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for p in probabilities {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; probabilities.len()];
    let last_nonzero = probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(last_nonzero);
        counts[idx] += 1;
    }
    counts
}

/// Multinomial frequencies from `shots` draws. `shots == 0` passes the exact
/// probabilities through.
pub fn sample_frequencies(p: &ProbabilityDistribution, shots: u64, seed: u64) -> FrequencyVector {
    if shots == 0 {
        return FrequencyVector::exact(p);
    }
    let counts = sample_indices(p.values(), shots as usize, seed);
    let values = counts.into_iter().map(|n| n as f64 / shots as f64).collect();
    FrequencyVector { values, shots }
}

/// One value per line, outcome index order.
pub fn write_csv<W: Write>(values: &[f64], mut w: W) -> Result<()> {
    for v in values {
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|e| TomoError::Parse(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// 8-byte little-endian length followed by little-endian `f64` values.
pub fn write_binary<W: Write>(values: &[f64], mut w: W) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let len = u64::from_le_bytes(word) as usize;
    if len > 1 << 32 {
        return Err(TomoError::ResourceGuard(format!("vector length {len} too large")));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut word)?;
        out.push(f64::from_le_bytes(word));
    }
    Ok(out)
}
