//! Maps from the network's raw parameter vector θ (length `4^N`) to a physical
//! density matrix, with exact reverse-mode adjoints.
//!
//! θ is packed into a transition matrix `T`: the first `d` entries fill the
//! real diagonal and the remaining `d(d-1)` entries are `(re, im)` pairs that
//! fill the strict upper triangle row-major (Hermitian kind, mirrored below)
//! or the strict lower triangle row-major (lower-triangular kind).
//!
//! Strategies:
//! - `chol_lower`: `ρ = T†T / tr(T†T)` with lower-triangular `T`.
//! - `chol_h`: `ρ = T² / tr(T²)` with Hermitian `T`, one matrix product.
//! - `abs_p:<P>`: `ρ = Q|Λ|^P Q† / tr|Λ|^P` from `T = QΛQ†`.
//! - `frobenius`: alternating clip/shift projection of `Λ`.
//! - `simplex`: Euclidean projection of `Λ` onto the probability simplex.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::linalg::{self, hermitian_eigen, hermitize, hs_inner, reassemble, CMatrix, C64};
use crate::states::{DensityMatrix, SpectralForm};

/// Traces of `T†T` or `T²` below this are treated as an all-zero `T`.
pub const DEGENERATE_TRACE: f64 = 1e-30;
/// Eigenvalues of `T` below this in magnitude are treated as all-zero for `abs_p`.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-15;
/// Smallest eigenvalue gap used in the eigendecomposition adjoint.
pub const GAP_CLAMP: f64 = 1e-12;
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ALTERNATIONS: usize = 1000;

/// The network output θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TomoError::numeric("parameter vector has nonfinite entries"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Matrix dimension `d` with `d² = len`, `d` a power of two.
    pub fn dim(&self) -> Result<usize> {
        let len = self.0.len();
        let d = (len as f64).sqrt().round() as usize;
        if d == 0 || d * d != len || !d.is_power_of_two() {
            return Err(TomoError::invalid(format!("parameter length {len} is not 4^N")));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    LowerTriangular,
    Hermitian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub kind: TransitionKind,
    pub matrix: CMatrix,
}

/// Unpack θ into `T`.
pub fn theta_to_matrix(theta: &ParamVector, kind: TransitionKind) -> Result<TransitionMatrix> {
    let d = theta.dim()?;
    let v = theta.values();
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    let mut pos = d;
    for i in 0..d {
        let cols: Box<dyn Iterator<Item = usize>> = match kind {
            TransitionKind::Hermitian => Box::new(i + 1..d),
            TransitionKind::LowerTriangular => Box::new(0..i),
        };
        for j in cols {
            let z = C64::new(v[pos], v[pos + 1]);
            pos += 2;
            m[(i, j)] = z;
            if kind == TransitionKind::Hermitian {
                m[(j, i)] = z.conj();
            }
        }
    }
    Ok(TransitionMatrix { kind, matrix: m })
}

/// Pack `T` back into θ. Only the diagonal and the packed triangle are read.
pub fn matrix_to_theta(t: &TransitionMatrix) -> ParamVector {
    let d = t.matrix.nrows();
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        v.push(t.matrix[(i, i)].re);
    }
    for i in 0..d {
        let cols: Box<dyn Iterator<Item = usize>> = match t.kind {
            TransitionKind::Hermitian => Box::new(i + 1..d),
            TransitionKind::LowerTriangular => Box::new(0..i),
        };
        for j in cols {
            v.push(t.matrix[(i, j)].re);
            v.push(t.matrix[(i, j)].im);
        }
    }
    ParamVector(v)
}

/// Gradient of a real function wrt θ given its gradient `x` wrt an
/// unconstrained complex `T` (convention `dL = Re tr(x† dT)`).
fn fold_gradient(x: &CMatrix, kind: TransitionKind) -> ParamVector {
    let d = x.nrows();
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        v.push(x[(i, i)].re);
    }
    for i in 0..d {
        match kind {
            TransitionKind::Hermitian => {
                for j in i + 1..d {
                    v.push(x[(i, j)].re + x[(j, i)].re);
                    v.push(x[(i, j)].im - x[(j, i)].im);
                }
            }
            TransitionKind::LowerTriangular => {
                for j in 0..i {
                    v.push(x[(i, j)].re);
                    v.push(x[(i, j)].im);
                }
            }
        }
    }
    ParamVector(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MappingStrategy {
    CholLower,
    CholHermitian,
    AbsP { order: f64 },
    FrobeniusProj { tolerance: f64, max_alternations: usize },
    SimplexProj,
}

impl MappingStrategy {
    pub fn frobenius() -> Self {
        MappingStrategy::FrobeniusProj {
            tolerance: DEFAULT_PROJECTION_TOL,
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
        }
    }

    pub fn abs_p(order: f64) -> Result<Self> {
        if !(order > 0.0 && order.is_finite()) {
            return Err(TomoError::invalid(format!("abs_p order {order} must be positive")));
        }
        Ok(MappingStrategy::AbsP { order })
    }

    /// All five strategy families with their default parameters (`abs_p` at `P = 2`).
    pub fn all_defaults() -> Vec<Self> {
        vec![
            MappingStrategy::CholLower,
            MappingStrategy::CholHermitian,
            MappingStrategy::AbsP { order: 2.0 },
            MappingStrategy::frobenius(),
            MappingStrategy::SimplexProj,
        ]
    }

    pub fn uses_eigendecomposition(&self) -> bool {
        !matches!(self, MappingStrategy::CholLower | MappingStrategy::CholHermitian)
    }
}

impl fmt::Display for MappingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MappingStrategy::CholLower => write!(f, "chol_lower"),
            MappingStrategy::CholHermitian => write!(f, "chol_h"),
            MappingStrategy::AbsP { order } => write!(f, "abs_p:{order}"),
            MappingStrategy::FrobeniusProj { .. } => write!(f, "frobenius"),
            MappingStrategy::SimplexProj => write!(f, "simplex"),
        }
    }
}

impl FromStr for MappingStrategy {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "chol_lower" => Ok(MappingStrategy::CholLower),
            "chol_h" => Ok(MappingStrategy::CholHermitian),
            "frobenius" => Ok(MappingStrategy::frobenius()),
            "simplex" => Ok(MappingStrategy::SimplexProj),
            other => match other.strip_prefix("abs_p:") {
                Some(p) => {
                    let order: f64 = p
                        .parse()
                        .map_err(|_| TomoError::invalid(format!("bad abs_p order '{p}'")))?;
                    MappingStrategy::abs_p(order)
                }
                None => Err(TomoError::invalid(format!("unknown mapping strategy '{other}'"))),
            },
        }
    }
}

impl Serialize for MappingStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MappingStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Euclidean projection onto `{x : x ≥ 0, Σx = 1}` by the sorted-threshold rule.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

#[derive(Debug, Clone)]
enum AltStep {
    /// Coordinates that survived the clip.
    Clip(Vec<bool>),
    /// Uniform shift by `(Σx - 1)/d`.
    Shift,
    /// Fallback simplex projection; support of its output.
    Simplex(Vec<bool>),
}

/// Alternating projections: clip negatives, then shift uniformly to unit sum,
/// until both hold; falls back to [`simplex_project`] after `max_alternations`.
pub fn frobenius_project(v: &[f64], tolerance: f64, max_alternations: usize) -> Vec<f64> {
    frobenius_project_traced(v, tolerance, max_alternations).0
}

fn frobenius_project_traced(v: &[f64], tolerance: f64, max_alternations: usize) -> (Vec<f64>, Vec<AltStep>) {
    let d = v.len() as f64;
    let mut x = v.to_vec();
    let mut steps = Vec::new();
    for _ in 0..max_alternations {
        let mask: Vec<bool> = x.iter().map(|&e| e > 0.0).collect();
        for (e, &keep) in x.iter_mut().zip(&mask) {
            if !keep {
                *e = 0.0;
            }
        }
        steps.push(AltStep::Clip(mask));
        let total: f64 = x.iter().sum();
        if (total - 1.0).abs() <= tolerance {
            return (x, steps);
        }
        let shift = (total - 1.0) / d;
        x.iter_mut().for_each(|e| *e -= shift);
        steps.push(AltStep::Shift);
        if x.iter().all(|&e| e >= 0.0) {
            return (x, steps);
        }
    }
    let out = simplex_project(&x);
    steps.push(AltStep::Simplex(out.iter().map(|&e| e > 0.0).collect()));
    (out, steps)
}

fn simplex_vjp(g: &mut [f64], support: &[bool]) {
    let count = support.iter().filter(|&&s| s).count();
    if count == 0 {
        g.iter_mut().for_each(|e| *e = 0.0);
        return;
    }
    let mean = g.iter().zip(support).filter(|(_, &s)| s).map(|(e, _)| *e).sum::<f64>() / count as f64;
    for (e, &s) in g.iter_mut().zip(support) {
        *e = if s { *e - mean } else { 0.0 };
    }
}

#[derive(Debug, Clone)]
enum SpectralKernel {
    AbsP { order: f64, normalizer: f64 },
    Simplex,
    Frobenius(Vec<AltStep>),
}

#[derive(Debug, Clone)]
enum Tape {
    Product { kind: TransitionKind, t: CMatrix, trace: f64 },
    Spectral { vectors: CMatrix, lambda: Vec<f64>, sigma: Vec<f64>, kernel: SpectralKernel },
    Degenerate,
}

/// Output of a forward mapping together with what the adjoint needs.
#[derive(Debug, Clone)]
pub struct MappedState {
    pub rho: DensityMatrix,
    /// Spectral form of `rho` (ascending) for eigendecomposition-based strategies.
    pub spectral: Option<SpectralForm>,
    /// `T` was numerically zero and `rho` was replaced by `I/d`.
    pub degenerate: bool,
    tape: Tape,
}

impl MappedState {
    fn degenerate(dim: usize, why: &str) -> Result<Self> {
        log::warn!("degenerate transition matrix ({why}); substituting I/d");
        let rho = DensityMatrix::maximally_mixed(dim.trailing_zeros() as usize)?;
        Ok(Self { rho, spectral: None, degenerate: true, tape: Tape::Degenerate })
    }

    /// Reverse-mode pullback of `dL/dρ` (Hermitian, convention
    /// `dL = Re tr(G† dρ)`) to `dL/dθ`.
    pub fn backward(&self, cotangent: &CMatrix) -> Result<ParamVector> {
        if !linalg::is_finite(cotangent) {
            return Err(TomoError::numeric("nonfinite cotangent"));
        }
        let d = self.rho.dim();
        if cotangent.nrows() != d || cotangent.ncols() != d {
            return Err(TomoError::invalid("cotangent shape does not match the state"));
        }
        match &self.tape {
            Tape::Degenerate => Ok(ParamVector(vec![0.0; d * d])),
            Tape::Product { kind, t, trace } => {
                let g = hermitize(cotangent);
                let overlap = hs_inner(&g, self.rho.matrix());
                let g_s = (g - linalg::identity(d) * C64::new(overlap, 0.0)) / C64::new(*trace, 0.0);
                let x = match kind {
                    TransitionKind::LowerTriangular => t * &g_s * C64::new(2.0, 0.0),
                    TransitionKind::Hermitian => &g_s * t + t * &g_s,
                };
                Ok(fold_gradient(&x, *kind))
            }
            Tape::Spectral { vectors, lambda, sigma, kernel } => {
                let g = hermitize(cotangent);
                let gbar = vectors.adjoint() * g * vectors;
                let mut diag: Vec<f64> = (0..d).map(|i| gbar[(i, i)].re).collect();
                match kernel {
                    SpectralKernel::AbsP { order, normalizer } => {
                        let weighted: f64 = diag.iter().zip(sigma).map(|(g, s)| g * s).sum();
                        for (j, gj) in diag.iter_mut().enumerate() {
                            let l = lambda[j];
                            let deriv = if l.abs() < GAP_CLAMP {
                                0.0
                            } else {
                                order * l.signum() * l.abs().powf(order - 1.0)
                            };
                            *gj = deriv * (*gj - weighted) / normalizer;
                        }
                    }
                    SpectralKernel::Simplex => {
                        let support: Vec<bool> = sigma.iter().map(|&s| s > 0.0).collect();
                        simplex_vjp(&mut diag, &support);
                    }
                    SpectralKernel::Frobenius(steps) => {
                        let n = d as f64;
                        for step in steps.iter().rev() {
                            match step {
                                AltStep::Clip(mask) => {
                                    for (e, &keep) in diag.iter_mut().zip(mask) {
                                        if !keep {
                                            *e = 0.0;
                                        }
                                    }
                                }
                                AltStep::Shift => {
                                    let mean = diag.iter().sum::<f64>() / n;
                                    diag.iter_mut().for_each(|e| *e -= mean);
                                }
                                AltStep::Simplex(support) => simplex_vjp(&mut diag, support),
                            }
                        }
                    }
                }
                let mut xbar = CMatrix::zeros(d, d);
                for i in 0..d {
                    xbar[(i, i)] = C64::new(diag[i], 0.0);
                    for j in 0..d {
                        if i == j {
                            continue;
                        }
                        let mut gap = lambda[i] - lambda[j];
                        if gap.abs() < GAP_CLAMP {
                            gap = if gap < 0.0 { -GAP_CLAMP } else { GAP_CLAMP };
                        }
                        xbar[(i, j)] = gbar[(i, j)] * ((sigma[i] - sigma[j]) / gap);
                    }
                }
                let x = vectors * xbar * vectors.adjoint();
                Ok(fold_gradient(&x, TransitionKind::Hermitian))
            }
        }
    }
}

fn product_map(theta: &ParamVector, kind: TransitionKind) -> Result<MappedState> {
    let t = theta_to_matrix(theta, kind)?.matrix;
    let d = t.nrows();
    let s = match kind {
        TransitionKind::LowerTriangular => t.adjoint() * &t,
        TransitionKind::Hermitian => &t * &t,
    };
    let trace = linalg::trace(&s).re;
    if !trace.is_finite() {
        return Err(TomoError::numeric("nonfinite trace in transition product"));
    }
    if trace < DEGENERATE_TRACE {
        return MappedState::degenerate(d, "trace of T product below 1e-30");
    }
    let rho = DensityMatrix::from_matrix_unchecked(hermitize(&s) / C64::new(trace, 0.0))?;
    Ok(MappedState { rho, spectral: None, degenerate: false, tape: Tape::Product { kind, t, trace } })
}

fn spectral_map(theta: &ParamVector, strategy: MappingStrategy) -> Result<MappedState> {
    let t = theta_to_matrix(theta, TransitionKind::Hermitian)?.matrix;
    let d = t.nrows();
    let (lambda, vectors) = hermitian_eigen(&t);
    let (sigma, kernel) = match strategy {
        MappingStrategy::AbsP { order } => {
            if lambda.iter().all(|l| l.abs() < DEGENERATE_EIGENVALUE) {
                return MappedState::degenerate(d, "all eigenvalues below 1e-15");
            }
            let powered: Vec<f64> = lambda.iter().map(|l| l.abs().powf(order)).collect();
            let normalizer: f64 = powered.iter().sum();
            if !(normalizer.is_finite() && normalizer > 0.0) {
                return Err(TomoError::numeric(format!("abs_p normalizer {normalizer}")));
            }
            let sigma = powered.iter().map(|a| a / normalizer).collect();
            (sigma, SpectralKernel::AbsP { order, normalizer })
        }
        MappingStrategy::SimplexProj => (simplex_project(&lambda), SpectralKernel::Simplex),
        MappingStrategy::FrobeniusProj { tolerance, max_alternations } => {
            let (sigma, steps) = frobenius_project_traced(&lambda, tolerance, max_alternations);
            (sigma, SpectralKernel::Frobenius(steps))
        }
        _ => unreachable!("product strategies are handled separately"),
    };
    let rho = DensityMatrix::from_matrix_unchecked(reassemble(&vectors, &sigma))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]));
    let spectral = SpectralForm {
        eigenvectors: CMatrix::from_fn(d, d, |r, c| vectors[(r, order[c])]),
        eigenvalues: order.iter().map(|&i| sigma[i]).collect(),
    };
    Ok(MappedState {
        rho,
        spectral: Some(spectral),
        degenerate: false,
        tape: Tape::Spectral { vectors, lambda, sigma, kernel },
    })
}

/// Forward map of any strategy, keeping the intermediates for [`MappedState::backward`].
pub fn map_forward(strategy: MappingStrategy, theta: &ParamVector) -> Result<MappedState> {
    if theta.values().iter().any(|v| !v.is_finite()) {
        return Err(TomoError::numeric("parameter vector has nonfinite entries"));
    }
    match strategy {
        MappingStrategy::CholLower => product_map(theta, TransitionKind::LowerTriangular),
        MappingStrategy::CholHermitian => product_map(theta, TransitionKind::Hermitian),
        MappingStrategy::AbsP { order } if order.is_nan() || order <= 0.0 => {
            Err(TomoError::invalid(format!("abs_p order {order} must be positive")))
        }
        MappingStrategy::FrobeniusProj { tolerance, .. } if tolerance.is_nan() || tolerance <= 0.0 => {
            Err(TomoError::invalid("projection tolerance must be positive"))
        }
        other => spectral_map(theta, other),
    }
}

pub fn map_chol_lower(theta: &ParamVector) -> Result<DensityMatrix> {
    Ok(map_forward(MappingStrategy::CholLower, theta)?.rho)
}

pub fn map_chol_hermitian(theta: &ParamVector) -> Result<DensityMatrix> {
    Ok(map_forward(MappingStrategy::CholHermitian, theta)?.rho)
}

pub fn map_abs_p(theta: &ParamVector, order: f64) -> Result<DensityMatrix> {
    Ok(map_forward(MappingStrategy::abs_p(order)?, theta)?.rho)
}

pub fn map_simplex_proj(theta: &ParamVector) -> Result<DensityMatrix> {
    Ok(map_forward(MappingStrategy::SimplexProj, theta)?.rho)
}

pub fn map_frobenius_proj(theta: &ParamVector) -> Result<DensityMatrix> {
    Ok(map_forward(MappingStrategy::frobenius(), theta)?.rho)
}

/// `dL/dθ` for the given strategy at θ, from `dL/dρ`.
pub fn mapping_adjoint(strategy: MappingStrategy, theta: &ParamVector, cotangent: &CMatrix) -> Result<ParamVector> {
    map_forward(strategy, theta)?.backward(cotangent)
}
