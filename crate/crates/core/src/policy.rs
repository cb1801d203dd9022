//! Runtime controller selection with fail-safe diversion.

use nalgebra::DMatrix;

use crate::domain::{Choice, ContextVector, ControllerId, MonitorModel, PolicyDecision};
use crate::logistic::sigmoid;

/// Lowest-index argmin of a slice of logits.
pub(crate) fn argmin_index(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn decision_from_logit(best: usize, logit: f64, tau: f64) -> PolicyDecision {
    let predicted_violation = sigmoid(logit);
    let confidence = 1.0 - predicted_violation;
    let best_controller = ControllerId(best);
    let chosen = if confidence < tau {
        Choice::FailSafe
    } else {
        Choice::Controller(best_controller)
    };
    PolicyDecision {
        chosen,
        best_controller,
        predicted_violation,
        confidence,
    }
}

/// Pick the controller with the lowest predicted violation, diverting to the
/// fail-safe when its confidence `1 − σ(θ_cᵀξ)` falls strictly below `tau`.
///
/// σ is monotone, so the argmin is taken over the logits `θξ` from a single
/// matrix–vector product.
pub fn decide(monitor: &MonitorModel, xi: &ContextVector, tau: f64) -> PolicyDecision {
    let logits = monitor.theta() * xi.as_vector();
    let (best, logit) = argmin_index(logits.iter().copied());
    decision_from_logit(best, logit, tau)
}

/// [`decide`] for many contexts via one `K×d · d×N` product.
pub fn decide_batch(monitor: &MonitorModel, contexts: &[ContextVector], tau: f64) -> Vec<PolicyDecision> {
    if contexts.is_empty() {
        return Vec::new();
    }
    let d = monitor.dim();
    let xs = DMatrix::from_fn(d, contexts.len(), |i, j| contexts[j].as_slice()[i]);
    let logits = monitor.theta() * xs;
    logits
        .column_iter()
        .map(|col| {
            let (best, logit) = argmin_index(col.iter().copied());
            decision_from_logit(best, logit, tau)
        })
        .collect()
}
