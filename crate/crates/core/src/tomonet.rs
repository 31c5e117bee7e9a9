//! Three-layer feed-forward network trained under the negative log-likelihood
//! of the observed frequencies.
//!
//! The network is a per-state reparameterization: the same frequency vector
//! is its input at every iteration and the output θ is mapped to a density
//! matrix whose Born probabilities enter the loss.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::mapping::{map_forward, MappedState, MappingStrategy, ParamVector};
use crate::measurement::{
    adjoint_accumulate, born_probabilities_fast, FrequencyVector, ProbabilityDistribution, ProductPovm,
};
use crate::states::{classical_fidelity, DensityMatrix, FidelityReference};

/// Floor applied to estimated probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
/// Largest `K^N` accepted by the network constructor.
pub const MAX_NETWORK_OUTCOMES: usize = 1 << 20;

/// Layer sizes `(K^N, 2N, 4^N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl NetworkShape {
    pub fn new(qubits: usize, outcomes_per_qubit: usize) -> Result<Self> {
        if qubits == 0 {
            return Err(TomoError::invalid("at least one qubit is required"));
        }
        if outcomes_per_qubit < 2 {
            return Err(TomoError::invalid("a POVM needs at least two outcomes"));
        }
        let input = (outcomes_per_qubit as u32)
            .checked_pow(qubits as u32)
            .map(|v| v as usize)
            .ok_or_else(|| TomoError::ResourceGuard("input layer size overflows".into()))?;
        let output = 4usize
            .checked_pow(qubits as u32)
            .ok_or_else(|| TomoError::ResourceGuard("output layer size overflows".into()))?;
        Ok(Self { input, hidden: 2 * qubits, output })
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [w1, b1, w2, b2]
    }
}

/// `θ = W2 · leaky_relu(W1 · x + b1) + b2`, parameters stored flat as
/// `[W1 (row-major), b1, W2 (row-major), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    shape: NetworkShape,
    leaky_slope: f64,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(shape: NetworkShape, leaky_slope: f64) -> Self {
        Self { shape, leaky_slope, params: vec![0.0; shape.parameter_count()] }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, _, _] = self.shape.offsets();
        &self.params[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.shape.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.shape.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [_, _, _, b2] = self.shape.offsets();
        &self.params[b2..]
    }
}

/// Fan-balanced uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_network(qubits: usize, outcomes_per_qubit: usize, seed: u64) -> Result<Network> {
    let shape = NetworkShape::new(qubits, outcomes_per_qubit)?;
    if shape.input > MAX_NETWORK_OUTCOMES || shape.output > MAX_NETWORK_OUTCOMES {
        return Err(TomoError::ResourceGuard(format!(
            "network layers of size {} / {} exceed the cap of {MAX_NETWORK_OUTCOMES}",
            shape.input, shape.output
        )));
    }
    let mut net = Network::zeros(shape, DEFAULT_LEAKY_SLOPE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [w1, b1, w2, b2] = shape.offsets();
    let bound1 = (6.0 / (shape.input + shape.hidden) as f64).sqrt();
    for p in &mut net.params[w1..b1] {
        *p = rng.random_range(-bound1..bound1);
    }
    let bound2 = (6.0 / (shape.hidden + shape.output) as f64).sqrt();
    for p in &mut net.params[w2..b2] {
        *p = rng.random_range(-bound2..bound2);
    }
    Ok(net)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

struct Activations {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

fn forward_pass(net: &Network, input: &[f64]) -> Result<Activations> {
    let shape = net.shape;
    if input.len() != shape.input {
        return Err(TomoError::invalid(format!(
            "network expects {} inputs, got {}",
            shape.input,
            input.len()
        )));
    }
    let w1 = net.w1();
    let pre_hidden: Vec<f64> = (0..shape.hidden)
        .map(|h| {
            let row = &w1[h * shape.input..(h + 1) * shape.input];
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + net.b1()[h]
        })
        .collect();
    let hidden: Vec<f64> = pre_hidden.iter().map(|&z| leaky_relu(z, net.leaky_slope)).collect();
    let w2 = net.w2();
    let output = (0..shape.output)
        .map(|o| {
            let row = &w2[o * shape.hidden..(o + 1) * shape.hidden];
            row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + net.b2()[o]
        })
        .collect();
    Ok(Activations { pre_hidden, hidden, output })
}

/// Network output θ for the given input frequencies.
pub fn forward(net: &Network, input: &FrequencyVector) -> Result<ParamVector> {
    Ok(ParamVector(forward_pass(net, input.values())?.output))
}

/// `-Σ_k f_k log(max(P̂_k, ε))`; outcomes with `f_k = 0` contribute nothing.
pub fn nll_loss(estimate: &ProbabilityDistribution, freqs: &FrequencyVector) -> f64 {
    estimate
        .values()
        .iter()
        .zip(freqs.values())
        .filter(|(_, &f)| f != 0.0)
        .map(|(&p, &f)| -f * p.max(PROB_FLOOR).ln())
        .sum()
}

/// `dL/dP̂_k`: `-f_k / P̂_k` above the floor, zero where the floor is active.
pub fn nll_probability_gradient(estimate: &ProbabilityDistribution, freqs: &FrequencyVector) -> Vec<f64> {
    estimate
        .values()
        .iter()
        .zip(freqs.values())
        .map(|(&p, &f)| if f == 0.0 || p < PROB_FLOOR { 0.0 } else { -f / p })
        .collect()
}

/// Gradient of the loss with respect to `ρ̂`: `Σ_k (dL/dP̂_k) M_k`.
pub fn nll_state_gradient(
    povm: &ProductPovm,
    estimate: &ProbabilityDistribution,
    freqs: &FrequencyVector,
) -> Result<crate::linalg::CMatrix> {
    adjoint_accumulate(povm, &nll_probability_gradient(estimate, freqs))
}

/// Everything computed by one forward evaluation of the pipeline.
pub struct Evaluation {
    pub theta: ParamVector,
    pub mapped: MappedState,
    pub probabilities: ProbabilityDistribution,
    pub loss: f64,
    activations: Activations,
}

pub fn evaluate(
    net: &Network,
    freqs: &FrequencyVector,
    povm: &ProductPovm,
    strategy: MappingStrategy,
) -> Result<Evaluation> {
    let activations = forward_pass(net, freqs.values())?;
    let theta = ParamVector(activations.output.clone());
    let mapped = map_forward(strategy, &theta)?;
    let probabilities = born_probabilities_fast(povm, &mapped.rho)?;
    if probabilities.len() != freqs.len() {
        return Err(TomoError::invalid("frequency length does not match the POVM"));
    }
    let loss = nll_loss(&probabilities, freqs);
    Ok(Evaluation { theta, mapped, probabilities, loss, activations })
}

/// Backpropagate an evaluation to parameter gradients (same flat layout as
/// [`Network::params`]).
pub fn backpropagate(
    net: &Network,
    freqs: &FrequencyVector,
    povm: &ProductPovm,
    eval: &Evaluation,
) -> Result<Vec<f64>> {
    let cotangent = nll_state_gradient(povm, &eval.probabilities, freqs)?;
    let grad_theta = eval.mapped.backward(&cotangent)?;
    Ok(linear_backward(net, freqs.values(), &eval.activations, grad_theta.values()))
}

fn linear_backward(net: &Network, input: &[f64], act: &Activations, grad_out: &[f64]) -> Vec<f64> {
    let shape = net.shape;
    let [w1o, b1o, w2o, b2o] = shape.offsets();
    let mut grads = vec![0.0; shape.parameter_count()];
    grads[b2o..].copy_from_slice(grad_out);
    let w2 = net.w2();
    let mut grad_hidden = vec![0.0; shape.hidden];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = o * shape.hidden;
        for h in 0..shape.hidden {
            grads[w2o + row + h] = g * act.hidden[h];
            grad_hidden[h] += g * w2[row + h];
        }
    }
    for h in 0..shape.hidden {
        let slope = if act.pre_hidden[h] > 0.0 { 1.0 } else { net.leaky_slope };
        let g = grad_hidden[h] * slope;
        grads[b1o + h] = g;
        let row = &mut grads[w1o + h * shape.input..w1o + (h + 1) * shape.input];
        for (dst, x) in row.iter_mut().zip(input) {
            *dst = g * x;
        }
    }
    grads
}

/// Loss and its exact gradient with respect to all network parameters.
pub fn gradient(
    net: &Network,
    freqs: &FrequencyVector,
    povm: &ProductPovm,
    strategy: MappingStrategy,
) -> Result<(f64, Vec<f64>)> {
    let eval = evaluate(net, freqs, povm, strategy)?;
    let grads = backpropagate(net, freqs, povm, &eval)?;
    Ok((eval.loss, grads))
}

/// Rprop constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub step_init: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self { eta_plus: 1.2, eta_minus: 0.5, step_min: 1e-6, step_max: 50.0, step_init: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub config: RpropConfig,
    pub steps: Vec<f64>,
    /// Sign of the last applied gradient, 0 after a sign flip.
    pub prev_sign: Vec<f64>,
}

impl RpropState {
    pub fn new(len: usize, config: RpropConfig) -> Self {
        Self { config, steps: vec![config.step_init; len], prev_sign: vec![0.0; len] }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One Rprop update. After a sign change the step shrinks and that
/// coordinate is left in place for this iteration.
pub fn rprop_step(params: &mut [f64], grads: &[f64], state: &mut RpropState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.steps.len() {
        return Err(TomoError::invalid("rprop shapes do not match"));
    }
    let cfg = state.config;
    for i in 0..params.len() {
        let mut s = sign(grads[i]);
        let agreement = s * state.prev_sign[i];
        if agreement > 0.0 {
            state.steps[i] = (state.steps[i] * cfg.eta_plus).min(cfg.step_max);
        } else if agreement < 0.0 {
            state.steps[i] = (state.steps[i] * cfg.eta_minus).max(cfg.step_min);
            s = 0.0;
        }
        params[i] -= s * state.steps[i];
        state.prev_sign[i] = s;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub qubits: usize,
    pub strategy: MappingStrategy,
    pub max_iterations: usize,
    pub fidelity_target: f64,
    pub eval_every: usize,
    pub seed: u64,
    /// Optimization time budget in seconds.
    pub time_budget: Option<f64>,
    pub leaky_slope: f64,
}

impl TrainConfig {
    pub fn new(qubits: usize, strategy: MappingStrategy) -> Self {
        Self {
            qubits,
            strategy,
            max_iterations: 1000,
            fidelity_target: 0.99,
            eval_every: 10,
            seed: 0,
            time_budget: None,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Optimization seconds elapsed (fidelity evaluation excluded).
    pub t: f64,
    pub loss: f64,
    pub fq: Option<f64>,
    pub fc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FidelityTarget,
    StepTolerance,
    IterationCap,
    TimeBudget,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub method: String,
    /// Best-fidelity iterate when a target was supplied, else the last iterate.
    pub rho: DensityMatrix,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
    pub stop: StopReason,
    pub optimization_seconds: f64,
    pub evaluation_seconds: f64,
    pub best_fidelity: Option<f64>,
    /// Message of the error that aborted the run, if any.
    pub error: Option<String>,
}

/// JSON document for a [`TrainResult`]; the matrix itself goes to a QDM1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub converged: bool,
    pub iterations: usize,
    pub stop: StopReason,
    pub optimization_seconds: f64,
    pub evaluation_seconds: f64,
    pub best_fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trace: Vec<TraceRow>,
}

impl TrainResult {
    pub fn report(&self) -> TrainReport {
        TrainReport {
            method: self.method.clone(),
            converged: self.converged,
            iterations: self.iterations,
            stop: self.stop,
            optimization_seconds: self.optimization_seconds,
            evaluation_seconds: self.evaluation_seconds,
            best_fidelity: self.best_fidelity,
            error: self.error.clone(),
            trace: self.trace.clone(),
        }
    }

    /// Fidelity reported for the returned iterate.
    pub fn final_fidelity(&self) -> Option<f64> {
        self.best_fidelity.or_else(|| self.trace.last().and_then(|r| r.fq))
    }
}

/// Target state prepared for repeated quantum and classical fidelity checks.
pub(crate) struct TargetTracker {
    reference: FidelityReference,
    probabilities: ProbabilityDistribution,
}

impl TargetTracker {
    pub(crate) fn new(target: &DensityMatrix, povm: &ProductPovm) -> Result<Self> {
        Ok(Self {
            reference: FidelityReference::new(target),
            probabilities: born_probabilities_fast(povm, target)?,
        })
    }

    pub(crate) fn evaluate(&self, mapped: Option<&MappedState>, rho: &DensityMatrix, probs: &ProbabilityDistribution) -> Result<(f64, f64)> {
        let fq = match mapped.and_then(|m| m.spectral.as_ref()) {
            Some(spec) => self.reference.fidelity_spectral(spec)?,
            None => self.reference.fidelity(rho)?,
        };
        let fc = classical_fidelity(probs, &self.probabilities)?;
        Ok((fq, fc))
    }
}

/// Train a fresh network on fixed frequencies.
///
/// Stops at `max_iterations`, when the fidelity against `target` (checked every
/// `eval_every` iterations) reaches `fidelity_target`, or when the time budget
/// runs out. A numeric failure mid-run ends training with the partial trace
/// kept and `error` set.
pub fn train(
    freqs: &FrequencyVector,
    povm: &ProductPovm,
    target: Option<&DensityMatrix>,
    config: &TrainConfig,
) -> Result<TrainResult> {
    if povm.qubits() != config.qubits {
        return Err(TomoError::invalid("POVM qubit count does not match the config"));
    }
    if freqs.len() != povm.outcome_count() {
        return Err(TomoError::invalid(format!(
            "expected {} frequencies, got {}",
            povm.outcome_count(),
            freqs.len()
        )));
    }
    if config.eval_every == 0 {
        return Err(TomoError::invalid("eval_every must be at least 1"));
    }
    let mut net = init_network(config.qubits, povm.outcomes_per_qubit(), config.seed)?;
    net.leaky_slope = config.leaky_slope;
    let tracker = target.map(|t| TargetTracker::new(t, povm)).transpose()?;

    let mut rprop = RpropState::new(net.params.len(), RpropConfig::default());
    let mut trace = Vec::new();
    let mut opt_seconds = 0.0;
    let mut eval_seconds = 0.0;
    let mut best: Option<(f64, DensityMatrix)> = None;
    let mut last_rho: Option<DensityMatrix> = None;
    let mut converged = false;
    let mut stop = StopReason::IterationCap;
    let mut error = None;
    let mut iterations = 0;

    for it in 0..=config.max_iterations {
        let clock = Instant::now();
        let eval = match evaluate(&net, freqs, povm, config.strategy) {
            Ok(e) => e,
            Err(e) => {
                error = Some(e.to_string());
                stop = StopReason::Aborted;
                break;
            }
        };
        opt_seconds += clock.elapsed().as_secs_f64();
        let over_budget = config.time_budget.is_some_and(|b| opt_seconds >= b);
        let last = it == config.max_iterations || over_budget;

        if it % config.eval_every == 0 || last {
            let clock = Instant::now();
            let (fq, fc) = match &tracker {
                Some(tr) => {
                    let (fq, fc) = tr.evaluate(Some(&eval.mapped), &eval.mapped.rho, &eval.probabilities)?;
                    (Some(fq), Some(fc))
                }
                None => (None, None),
            };
            eval_seconds += clock.elapsed().as_secs_f64();
            trace.push(TraceRow { iter: it, t: opt_seconds, loss: eval.loss, fq, fc });
            if let Some(fq) = fq {
                if best.as_ref().is_none_or(|(b, _)| fq > *b) {
                    best = Some((fq, eval.mapped.rho.clone()));
                }
                if fq >= config.fidelity_target {
                    converged = true;
                    stop = StopReason::FidelityTarget;
                    last_rho = Some(eval.mapped.rho);
                    break;
                }
            }
        }
        if last {
            if over_budget && it < config.max_iterations {
                stop = StopReason::TimeBudget;
            }
            last_rho = Some(eval.mapped.rho);
            break;
        }

        let clock = Instant::now();
        let step = backpropagate(&net, freqs, povm, &eval).and_then(|g| rprop_step(&mut net.params, &g, &mut rprop));
        last_rho = Some(eval.mapped.rho);
        if let Err(e) = step {
            error = Some(e.to_string());
            stop = StopReason::Aborted;
            break;
        }
        opt_seconds += clock.elapsed().as_secs_f64();
        iterations = it + 1;
    }

    let best_fidelity = best.as_ref().map(|(f, _)| *f);
    let rho = match (best, last_rho) {
        (Some((_, rho)), _) => rho,
        (None, Some(rho)) => rho,
        (None, None) => DensityMatrix::maximally_mixed(config.qubits)?,
    };
    Ok(TrainResult {
        method: "nnqst".into(),
        rho,
        trace,
        converged,
        iterations,
        stop,
        optimization_seconds: opt_seconds,
        evaluation_seconds: eval_seconds,
        best_fidelity,
        error,
    })
}
