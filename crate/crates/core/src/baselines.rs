//! Iterative maximum-likelihood (RρR) reconstruction.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::linalg::{self, hermitize, CMatrix, C64};
use crate::measurement::{adjoint_accumulate, born_probabilities_fast, FrequencyVector, ProbabilityDistribution, ProductPovm};
use crate::states::DensityMatrix;
use crate::tomonet::{nll_loss, StopReason, TargetTracker, TraceRow, TrainResult, PROB_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImleConfig {
    pub max_iterations: usize,
    pub fidelity_target: f64,
    pub eval_every: usize,
    /// Stop once `‖ρ_{t+1} - ρ_t‖_F` drops below this.
    pub step_tolerance: f64,
    /// Dilution `ε`: `R ← (I + εR)/(1 + ε)`. `None` runs plain RρR.
    pub dilution: Option<f64>,
    pub time_budget: Option<f64>,
}

impl Default for ImleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            fidelity_target: 0.99,
            eval_every: 10,
            step_tolerance: 1e-12,
            dilution: None,
            time_budget: None,
        }
    }
}

/// `R = Σ_k (f_k / max(P̂_k, ε)) M_k`.
pub fn likelihood_operator(povm: &ProductPovm, freqs: &FrequencyVector, probs: &ProbabilityDistribution) -> Result<CMatrix> {
    let weights: Vec<f64> = freqs
        .values()
        .iter()
        .zip(probs.values())
        .map(|(&f, &p)| if f == 0.0 { 0.0 } else { f / p.max(PROB_FLOOR) })
        .collect();
    adjoint_accumulate(povm, &weights)
}

/// Run `ρ ← RρR / tr(RρR)` from `I/d`.
pub fn imle_reconstruct(
    freqs: &FrequencyVector,
    povm: &ProductPovm,
    target: Option<&DensityMatrix>,
    config: &ImleConfig,
) -> Result<TrainResult> {
    if freqs.len() != povm.outcome_count() {
        return Err(TomoError::invalid(format!(
            "expected {} frequencies, got {}",
            povm.outcome_count(),
            freqs.len()
        )));
    }
    if config.max_iterations == 0 || config.eval_every == 0 {
        return Err(TomoError::invalid("max_iterations and eval_every must be at least 1"));
    }
    let tracker = target.map(|t| TargetTracker::new(t, povm)).transpose()?;
    let dim = povm.dim();
    let mut rho = DensityMatrix::maximally_mixed(povm.qubits())?;
    let mut trace = Vec::new();
    let (mut opt_seconds, mut eval_seconds) = (0.0, 0.0);
    let mut best: Option<f64> = None;
    let mut stop = StopReason::IterationCap;
    let mut converged = false;
    let mut error = None;
    let mut iterations = 0;

    for it in 0..=config.max_iterations {
        let clock = Instant::now();
        let probs = born_probabilities_fast(povm, &rho)?;
        let loss = nll_loss(&probs, freqs);
        opt_seconds += clock.elapsed().as_secs_f64();
        let over_budget = config.time_budget.is_some_and(|b| opt_seconds >= b);
        let last = it == config.max_iterations || over_budget || stop == StopReason::StepTolerance;

        if it % config.eval_every == 0 || last {
            let clock = Instant::now();
            let (fq, fc) = match &tracker {
                Some(tr) => {
                    let (fq, fc) = tr.evaluate(None, &rho, &probs)?;
                    (Some(fq), Some(fc))
                }
                None => (None, None),
            };
            eval_seconds += clock.elapsed().as_secs_f64();
            trace.push(TraceRow { iter: it, t: opt_seconds, loss, fq, fc });
            if let Some(fq) = fq {
                best = Some(best.map_or(fq, |b: f64| b.max(fq)));
                if fq >= config.fidelity_target {
                    converged = true;
                    stop = StopReason::FidelityTarget;
                    break;
                }
            }
        }
        if last {
            if over_budget && it < config.max_iterations && stop != StopReason::StepTolerance {
                stop = StopReason::TimeBudget;
            }
            break;
        }

        let clock = Instant::now();
        let mut r = likelihood_operator(povm, freqs, &probs)?;
        if let Some(eps) = config.dilution {
            r = (linalg::identity(dim) + r * C64::new(eps, 0.0)) / C64::new(1.0 + eps, 0.0);
        }
        let next = hermitize(&(&r * rho.matrix() * &r));
        let tr = linalg::trace(&next).re;
        if !(tr.is_finite() && tr > 0.0) || !linalg::is_finite(&next) {
            error = Some(format!("iMLE iterate has trace {tr}"));
            stop = StopReason::Aborted;
            break;
        }
        let next = next / C64::new(tr, 0.0);
        let step = (&next - rho.matrix()).norm();
        rho = DensityMatrix::from_matrix_unchecked(next)?;
        opt_seconds += clock.elapsed().as_secs_f64();
        iterations = it + 1;
        if step < config.step_tolerance {
            stop = StopReason::StepTolerance;
            converged = true;
        }
    }

    Ok(TrainResult {
        method: "imle".into(),
        rho,
        trace,
        converged,
        iterations,
        stop,
        optimization_seconds: opt_seconds,
        evaluation_seconds: eval_seconds,
        best_fidelity: best,
        error,
    })
}
