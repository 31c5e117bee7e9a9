//! Experiment grids over state families, mapping strategies, shot counts and
//! noise strengths, producing one [`ExperimentRecord`] per grid point.
//!
//! Every random choice in a row (target state, shots, network init) is seeded
//! from `base_seed` XOR a stable hash of the row's grid coordinates, so rows
//! are reproducible and adding grid points leaves existing rows untouched.

mod report;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{imle_reconstruct, ImleConfig};
use crate::error::{Result, TomoError};
use crate::mapping::MappingStrategy;
use crate::measurement::{born_probabilities_fast, sample_frequencies, ProductPovm};
use crate::states::{
    self, depolarize, make_canonical_state, purity, quantum_fidelity, random_expdecay_state, white_noise,
    CanonicalKind, DensityMatrix,
};
use crate::tomonet::{train, TrainConfig, TrainResult};

pub use report::{emit_report, read_records_csv, read_records_json, ReportFormat};

/// Desk-scale default for the largest qubit count a spec may request.
pub const DEFAULT_MAX_QUBITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MappingSweep,
    PuritySweep,
    QubitScaling,
    SampleSweep,
    DepolarizingSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MappingSweep => "mapping_sweep",
            ExperimentKind::PuritySweep => "purity_sweep",
            ExperimentKind::QubitScaling => "qubit_scaling",
            ExperimentKind::SampleSweep => "sample_sweep",
            ExperimentKind::DepolarizingSweep => "depolarizing_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateFamily {
    Expdecay,
    Product,
    W,
    Ghzi,
}

impl StateFamily {
    pub fn name(self) -> &'static str {
        match self {
            StateFamily::Expdecay => "expdecay",
            StateFamily::Product => "product",
            StateFamily::W => "w",
            StateFamily::Ghzi => "ghzi",
        }
    }

    fn canonical(self) -> Option<CanonicalKind> {
        match self {
            StateFamily::Expdecay => None,
            StateFamily::Product => Some(CanonicalKind::Product),
            StateFamily::W => Some(CanonicalKind::W),
            StateFamily::Ghzi => Some(CanonicalKind::Ghzi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nn,
    Imle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Imle => "imle",
        }
    }
}

/// An experiment description, normally read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub qubits: Vec<usize>,
    pub family: StateFamily,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub strategies: Vec<MappingStrategy>,
    /// Shot counts; 0 means exact probabilities.
    pub samples: Vec<u64>,
    /// Depolarizing strengths (`depolarizing_sweep` only).
    pub lambdas: Vec<f64>,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub nn_iterations: usize,
    pub imle_iterations: usize,
    pub fidelity_target: f64,
    pub eval_every: usize,
    pub time_budget: Option<f64>,
    pub max_qubits: usize,
    /// Worker threads for independent rows; 0 uses the rayon default.
    pub threads: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::MappingSweep,
            qubits: vec![2],
            family: StateFamily::Expdecay,
            repetitions: 1,
            methods: vec![Method::Nn],
            strategies: vec![MappingStrategy::CholHermitian],
            samples: vec![0],
            lambdas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            base_seed: 0,
            output_dir: None,
            nn_iterations: 1000,
            imle_iterations: 500,
            fidelity_target: 0.99,
            eval_every: 10,
            time_budget: None,
            max_qubits: DEFAULT_MAX_QUBITS,
            threads: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TomoError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TomoError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits.is_empty() {
            return Err(TomoError::invalid("qubit list is empty"));
        }
        if self.repetitions == 0 {
            return Err(TomoError::invalid("repetitions must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(TomoError::invalid("method list is empty"));
        }
        if self.methods.contains(&Method::Nn) && self.strategies.is_empty() {
            return Err(TomoError::invalid("strategy list is empty"));
        }
        if self.samples.is_empty() {
            return Err(TomoError::invalid("sample-size list is empty"));
        }
        if self.kind == ExperimentKind::DepolarizingSweep {
            if self.lambdas.is_empty() {
                return Err(TomoError::invalid("lambda grid is empty"));
            }
            if self.family == StateFamily::Expdecay {
                return Err(TomoError::invalid("depolarizing_sweep needs a pure family (product, w, ghzi)"));
            }
            if let Some(l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                return Err(TomoError::invalid(format!("lambda {l} outside [0,1]")));
            }
        }
        if self.eval_every == 0 || self.nn_iterations == 0 || self.imle_iterations == 0 {
            return Err(TomoError::invalid("iteration counts and eval_every must be at least 1"));
        }
        if let Some(&n) = self.qubits.iter().find(|&&n| n == 0) {
            return Err(TomoError::invalid(format!("qubit count {n} is invalid")));
        }
        if let Some(&n) = self.qubits.iter().find(|&&n| n > self.max_qubits) {
            return Err(TomoError::ResourceGuard(format!(
                "{n} qubits exceeds the cap of {} (raise max_qubits to override)",
                self.max_qubits
            )));
        }
        Ok(())
    }
}

/// One result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub qubits: usize,
    pub state_kind: String,
    pub state_seed: u64,
    pub purity: f64,
    pub strategy: String,
    pub method: String,
    pub samples: u64,
    pub lambda: f64,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub final_fidelity: f64,
    pub converged: bool,
    /// `1 - (1 - 1/d) λ` for depolarizing rows.
    pub ideal_fidelity: Option<f64>,
    pub error: Option<String>,
}

/// `base_seed` XOR the first 8 bytes of SHA-256 over the labelled coordinates.
pub fn derive_seed(base_seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    base_seed ^ u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Fidelity of perfect reconstruction of a depolarized pure state against the pure state.
pub fn ideal_depolarized_fidelity(qubits: usize, lambda: f64) -> f64 {
    1.0 - (1.0 - 1.0 / (1u64 << qubits) as f64) * lambda
}

#[derive(Debug, Clone)]
struct RowTask {
    qubits: usize,
    rep: usize,
    lambda: Option<f64>,
    samples: u64,
    method: Method,
    strategy: Option<MappingStrategy>,
}

/// A generated target: the state that was measured, and the state fidelity is reported against.
pub struct RowTarget {
    pub measured: DensityMatrix,
    pub reference: DensityMatrix,
    pub seed: u64,
}

fn fmt_lambda(lambda: Option<f64>) -> String {
    lambda.map_or_else(|| "-".to_string(), |l| format!("{l:.6}"))
}

/// Build the target for a grid point. `expdecay` draws a purity uniformly in
/// `[1/d, 1]`; pure families draw a white-noise mixing `p` uniformly in `[0, 1]`,
/// except in `depolarizing_sweep` where `λ` comes from the grid and fidelity is
/// reported against the noiseless pure state.
pub fn make_target(spec: &ExperimentSpec, qubits: usize, rep: usize, lambda: Option<f64>) -> Result<RowTarget> {
    let family = spec.family;
    let seed = derive_seed(
        spec.base_seed,
        &["state", family.name(), &qubits.to_string(), &rep.to_string(), &fmt_lambda(lambda)],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match (family.canonical(), lambda) {
        (None, _) => {
            let floor = 1.0 / (1u64 << qubits) as f64;
            let p: f64 = floor + (1.0 - floor) * rng.random::<f64>();
            let rho = random_expdecay_state(qubits, p, rng.random())?;
            Ok(RowTarget { measured: rho.clone(), reference: rho, seed })
        }
        (Some(kind), Some(lambda)) => {
            let psi = make_canonical_state(kind, qubits)?;
            Ok(RowTarget { measured: depolarize(&psi, lambda)?, reference: DensityMatrix::from_pure(&psi), seed })
        }
        (Some(kind), None) => {
            let psi = make_canonical_state(kind, qubits)?;
            let rho = white_noise(&psi, rng.random::<f64>())?;
            Ok(RowTarget { measured: rho.clone(), reference: rho, seed })
        }
    }
}

fn build_tasks(spec: &ExperimentSpec) -> Vec<RowTask> {
    let lambdas: Vec<Option<f64>> = if spec.kind == ExperimentKind::DepolarizingSweep {
        spec.lambdas.iter().map(|&l| Some(l)).collect()
    } else {
        vec![None]
    };
    let mut tasks = Vec::new();
    for &qubits in &spec.qubits {
        for rep in 0..spec.repetitions {
            for &lambda in &lambdas {
                for &samples in &spec.samples {
                    for &method in &spec.methods {
                        match method {
                            Method::Nn => {
                                for &s in &spec.strategies {
                                    tasks.push(RowTask { qubits, rep, lambda, samples, method, strategy: Some(s) });
                                }
                            }
                            Method::Imle => {
                                tasks.push(RowTask { qubits, rep, lambda, samples, method, strategy: None })
                            }
                        }
                    }
                }
            }
        }
    }
    tasks
}

/// Output of a full experiment run.
pub struct ExperimentRun {
    pub records: Vec<ExperimentRecord>,
    /// Reconstructed and reference states per row, in row order.
    pub states: Vec<Option<(DensityMatrix, DensityMatrix)>>,
}

fn run_row(spec: &ExperimentSpec, task: &RowTask) -> (ExperimentRecord, Option<(DensityMatrix, DensityMatrix)>) {
    let mut record = ExperimentRecord {
        qubits: task.qubits,
        state_kind: spec.family.name().to_string(),
        state_seed: 0,
        purity: f64::NAN,
        strategy: task.strategy.map_or_else(|| "none".to_string(), |s| s.to_string()),
        method: task.method.name().to_string(),
        samples: task.samples,
        lambda: task.lambda.unwrap_or(0.0),
        iterations: 0,
        wall_seconds: 0.0,
        final_fidelity: 0.0,
        converged: false,
        ideal_fidelity: task.lambda.map(|l| ideal_depolarized_fidelity(task.qubits, l)),
        error: None,
    };
    match execute_row(spec, task, &mut record) {
        Ok(states) => (record, Some(states)),
        Err(e) => {
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

fn execute_row(spec: &ExperimentSpec, task: &RowTask, record: &mut ExperimentRecord) -> Result<(DensityMatrix, DensityMatrix)> {
    let target = make_target(spec, task.qubits, task.rep, task.lambda)?;
    record.state_seed = target.seed;
    record.purity = purity(&target.measured);
    let povm = ProductPovm::tetrahedral(task.qubits)?;
    let probs = born_probabilities_fast(&povm, &target.measured)?;
    let coords = [
        spec.family.name().to_string(),
        task.qubits.to_string(),
        task.rep.to_string(),
        fmt_lambda(task.lambda),
        task.samples.to_string(),
    ];
    let coord_refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let shot_seed = derive_seed(spec.base_seed, &[&["shots"], coord_refs.as_slice()].concat());
    let freqs = sample_frequencies(&probs, task.samples, shot_seed);
    let result: TrainResult = match task.method {
        Method::Nn => {
            let mut cfg = TrainConfig::new(task.qubits, task.strategy.expect("nn rows carry a strategy"));
            cfg.max_iterations = spec.nn_iterations;
            cfg.fidelity_target = spec.fidelity_target;
            cfg.eval_every = spec.eval_every;
            cfg.time_budget = spec.time_budget;
            cfg.seed = derive_seed(spec.base_seed, &[&["train"], coord_refs.as_slice()].concat());
            train(&freqs, &povm, Some(&target.measured), &cfg)?
        }
        Method::Imle => {
            let cfg = ImleConfig {
                max_iterations: spec.imle_iterations,
                fidelity_target: spec.fidelity_target,
                eval_every: spec.eval_every,
                time_budget: spec.time_budget,
                ..ImleConfig::default()
            };
            imle_reconstruct(&freqs, &povm, Some(&target.measured), &cfg)?
        }
    };
    record.iterations = result.iterations;
    record.wall_seconds = result.optimization_seconds;
    record.converged = result.converged;
    record.error = result.error.clone();
    record.final_fidelity = quantum_fidelity(&result.rho, &target.reference)?;
    Ok((result.rho, target.reference))
}

/// Run every grid point of `spec`. Rows may run concurrently but are returned
/// in grid order. Failures are recorded per row in the `error` column.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    spec.validate()?;
    let tasks = build_tasks(spec);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| TomoError::invalid(format!("thread pool: {e}")))?;
    let rows: Vec<_> = pool.install(|| tasks.par_iter().map(|t| run_row(spec, t)).collect());
    let (records, states) = rows.into_iter().unzip();
    let run = ExperimentRun { records, states };
    if let Some(dir) = &spec.output_dir {
        persist_states(dir, &run)?;
    }
    Ok(run)
}

/// Path of the persisted reconstruction for row `index`.
pub fn row_state_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("states").join(format!("row_{index:05}.qdm"))
}

/// Path of the persisted fidelity reference for row `index`.
pub fn row_reference_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("references").join(format!("row_{index:05}.qdm"))
}

fn persist_states(dir: &Path, run: &ExperimentRun) -> Result<()> {
    fs::create_dir_all(dir.join("states"))?;
    fs::create_dir_all(dir.join("references"))?;
    for (i, entry) in run.states.iter().enumerate() {
        if let Some((rho, reference)) = entry {
            rho.write_qdm1(std::io::BufWriter::new(fs::File::create(row_state_path(dir, i))?))?;
            reference.write_qdm1(std::io::BufWriter::new(fs::File::create(row_reference_path(dir, i))?))?;
        }
    }
    Ok(())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Recompute a row's fidelity from its persisted files.
pub fn recompute_row_fidelity(dir: &Path, index: usize) -> Result<f64> {
    let rho = DensityMatrix::read_qdm1(fs::File::open(row_state_path(dir, index))?)?;
    let reference = DensityMatrix::read_qdm1(fs::File::open(row_reference_path(dir, index))?)?;
    states::quantum_fidelity(&rho, &reference)
}
