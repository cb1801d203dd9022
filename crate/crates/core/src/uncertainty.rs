//! Epistemic uncertainty of each controller's fitted model.
//!
//! For controller `c` the learner keeps `H_c⁻¹`, the inverse of the
//! regularized Hessian `λI + Σ σ̇(θ_cᵀξ_s) ξ_s ξ_sᵀ` over the rounds where
//! `c` was pulled. The uncertainty of `c` in direction `ξ` is the norm
//! `‖ξ‖_{H_c⁻¹} = √(ξᵀ H_c⁻¹ ξ)`; the sampler pulls where it is largest.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ContextId, ContextVector, ControllerId};
use crate::error::{Error, Result};
use crate::logistic::dsigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Joint argmax over candidate contexts and controllers.
    MaxBoth,
    /// Context from the space distribution, then argmax over controllers.
    RandomContextMaxController,
    /// Uniform context and uniform controller.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    h_inv: Vec<DMatrix<f64>>,
    pull_counts: Vec<usize>,
}

/// Selected pair and its uncertainty score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub context_id: ContextId,
    pub controller: ControllerId,
    pub score: f64,
}

/// Every controller starts at `(1/λ) I`.
pub fn init_state(k: usize, d: usize, lambda: f64) -> Result<UncertaintyState> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    if k == 0 || d == 0 {
        return Err(Error::InvalidConfig("need at least one controller and one feature".into()));
    }
    Ok(UncertaintyState {
        h_inv: vec![DMatrix::identity(d, d) / lambda; k],
        pull_counts: vec![0; k],
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Sherman–Morrison: inverse of `H + w ξξᵀ` given `H⁻¹`.
pub fn sm_update(h_inv: &DMatrix<f64>, xi: &DVector<f64>, w: f64) -> DMatrix<f64> {
    let u = h_inv * xi;
    let denom = 1.0 + w * xi.dot(&u);
    let mut out = h_inv - (&u * u.transpose()) * (w / denom);
    symmetrize(&mut out);
    out
}

/// Inverse of `λI + Σ σ̇(θᵀξ) ξξᵀ` built from scratch.
pub fn rebuild<X: AsRef<[f64]>>(
    theta_c: &DVector<f64>,
    data_c: &[(X, bool)],
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let d = theta_c.len();
    if let Some((x, _)) = data_c.iter().find(|(x, _)| x.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.as_ref().len(),
        });
    }
    let mut h = DMatrix::identity(d, d) * lambda;
    for (x, _) in data_c {
        let x = DVector::from_column_slice(x.as_ref());
        let w = dsigmoid(theta_c.dot(&x));
        h.ger(w, &x, &x, 1.0);
    }
    let mut inv = h
        .cholesky()
        .ok_or_else(|| Error::Numeric("regularized Hessian is not positive definite".into()))?
        .inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `√(ξᵀ H⁻¹ ξ)`.
pub fn uncertainty_norm(xi: &DVector<f64>, h_inv: &DMatrix<f64>) -> Result<f64> {
    if h_inv.nrows() != xi.len() || h_inv.ncols() != xi.len() {
        return Err(Error::DimensionMismatch {
            expected: h_inv.nrows(),
            found: xi.len(),
        });
    }
    let q = xi.dot(&(h_inv * xi));
    if q < -1e-12 {
        return Err(Error::Numeric(format!("negative quadratic form {q}")));
    }
    Ok(q.max(0.0).sqrt())
}

impl UncertaintyState {
    pub fn n_controllers(&self) -> usize {
        self.h_inv.len()
    }

    pub fn h_inv(&self, c: ControllerId) -> &DMatrix<f64> {
        &self.h_inv[c.0]
    }

    pub fn pull_count(&self, c: ControllerId) -> usize {
        self.pull_counts[c.0]
    }

    pub fn norm(&self, xi: &ContextVector, c: ControllerId) -> Result<f64> {
        uncertainty_norm(xi.as_vector(), &self.h_inv[c.0])
    }

    /// Fold one pull of `c` in `ξ` into its inverse, weighting by
    /// `σ̇(θ_cᵀξ)` at the supplied (frozen) parameters.
    pub fn record(&mut self, c: ControllerId, xi: &ContextVector, theta_c: &DVector<f64>) {
        let w = dsigmoid(theta_c.dot(xi.as_vector()));
        self.h_inv[c.0] = sm_update(&self.h_inv[c.0], xi.as_vector(), w);
        self.pull_counts[c.0] += 1;
    }

    /// Replace controller `c`'s inverse with a fresh rebuild.
    pub fn reset(&mut self, c: ControllerId, h_inv: DMatrix<f64>) {
        self.h_inv[c.0] = h_inv;
    }
}

/// Choose the next `(context, controller)` pair to evaluate.
///
/// Ties go to the lowest controller index, then the lowest context id.
/// [`SamplingStrategy::RandomContextMaxController`] uses only the first
/// candidate; the caller is expected to have drawn it from the space
/// distribution.
pub fn select_pair<R: Rng + ?Sized>(
    candidates: &[(ContextId, &ContextVector)],
    state: &UncertaintyState,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let k = state.n_controllers();
    let scan = |pool: &[(ContextId, &ContextVector)]| -> Result<Selection> {
        let mut best: Option<Selection> = None;
        for &(context_id, xi) in pool {
            for c in 0..k {
                let controller = ControllerId(c);
                let score = state.norm(xi, controller)?;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        score > b.score
                            || (score == b.score
                                && (controller, context_id) < (b.controller, b.context_id))
                    }
                };
                if better {
                    best = Some(Selection {
                        context_id,
                        controller,
                        score,
                    });
                }
            }
        }
        Ok(best.expect("nonempty pool and at least one controller"))
    };
    match strategy {
        SamplingStrategy::MaxBoth => scan(candidates),
        SamplingStrategy::RandomContextMaxController => scan(&candidates[..1]),
        SamplingStrategy::UniformRandom => {
            let (context_id, xi) = candidates[rng.gen_range(0..candidates.len())];
            let controller = ControllerId(rng.gen_range(0..k));
            Ok(Selection {
                context_id,
                controller,
                score: state.norm(xi, controller)?,
            })
        }
    }
}
