//! Ridge-regularized logistic likelihood and its Newton solver.
//!
//! Each controller's violation probability is modelled as
//! `P(violation | ξ) = σ(θᵀξ)`. Parameters are fitted by minimizing
//!
//! ```text
//! L(θ) = −Σ [y log σ(θᵀξ) + (1 − y) log(1 − σ(θᵀξ))] + (λ/2)‖θ‖²
//! ```
//!
//! with damped Newton steps, then projected radially onto `‖θ‖ ≤ q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{ContextVector, ControllerId};
use crate::error::{Error, Result};

/// Regularizer tied to a parameter-norm bound `q`: `1 / (4 q² (2 + q)²)`.
pub fn lambda_for_bound(q: f64) -> f64 {
    1.0 / (4.0 * q * q * (2.0 + q) * (2.0 + q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub q_bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::for_bound(5.0)
    }
}

impl FitConfig {
    pub fn for_bound(q: f64) -> Self {
        Self {
            lambda: lambda_for_bound(q),
            tol: 1e-8,
            max_iter: 100,
            q_bound: q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("tol", self.tol)?;
        positive("q_bound", self.q_bound)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative σ(z)(1 − σ(z)), computed from `e^{−|z|}` so the tails keep
/// relative precision.
pub fn dsigmoid(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(theta: &DVector<f64>, x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn check_dims<X: AsRef<[f64]>>(d: usize, data: &[(X, bool)]) -> Result<()> {
    match data.iter().find(|(x, _)| x.as_ref().len() != d) {
        Some((x, _)) => Err(Error::DimensionMismatch {
            expected: d,
            found: x.as_ref().len(),
        }),
        None => Ok(()),
    }
}

/// Regularized negative log-likelihood of one controller's observations.
pub fn reg_nll<X: AsRef<[f64]>>(theta: &DVector<f64>, data: &[(X, bool)], lambda: f64) -> Result<f64> {
    check_dims(theta.len(), data)?;
    Ok(nll_unchecked(theta, data, lambda))
}

fn nll_unchecked<X: AsRef<[f64]>>(theta: &DVector<f64>, data: &[(X, bool)], lambda: f64) -> f64 {
    // −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
    let loss: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = dot(theta, x.as_ref());
            if *y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    loss + 0.5 * lambda * theta.norm_squared()
}

/// Gradient of [`reg_nll`]: `Σ (σ(θᵀξ) − y) ξ + λθ`.
pub fn reg_nll_gradient<X: AsRef<[f64]>>(
    theta: &DVector<f64>,
    data: &[(X, bool)],
    lambda: f64,
) -> Result<DVector<f64>> {
    check_dims(theta.len(), data)?;
    Ok(gradient_unchecked(theta, data, lambda))
}

fn gradient_unchecked<X: AsRef<[f64]>>(
    theta: &DVector<f64>,
    data: &[(X, bool)],
    lambda: f64,
) -> DVector<f64> {
    let mut grad = theta * lambda;
    for (x, y) in data {
        let x = x.as_ref();
        let r = sigmoid(dot(theta, x)) - f64::from(u8::from(*y));
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += r * xi;
        }
    }
    grad
}

/// `λI + Σ σ̇(θᵀξ) ξξᵀ`.
pub fn reg_hessian<X: AsRef<[f64]>>(theta: &DVector<f64>, data: &[(X, bool)], lambda: f64) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::identity(d, d) * lambda;
    for (x, _) in data {
        let x = x.as_ref();
        let w = dsigmoid(dot(theta, x));
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            let wi = w * x[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..d {
                h[(i, j)] += wi * x[j];
            }
        }
    }
    h
}

/// Scale `theta` onto the ball of radius `q` if it lies outside.
pub fn project_to_ball(theta: &mut DVector<f64>, q: f64) {
    let norm = theta.norm();
    if norm > q {
        *theta *= q / norm;
    }
}

/// Newton fit of the regularized likelihood, followed by projection.
///
/// Steps are damped by backtracking on the objective, which keeps the
/// iteration monotone when the starting point is far from the optimum.
pub fn fit_mle<X: AsRef<[f64]>>(
    data: &[(X, bool)],
    d: usize,
    cfg: &FitConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::InvalidConfig("fit dimension must be at least 1".into()));
    }
    check_dims(d, data)?;
    let mut theta = match warm_start {
        Some(w) if w.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: w.len(),
            })
        }
        Some(w) => w.clone(),
        None => DVector::zeros(d),
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit {
            iteration: 0,
            reason: "warm start is not finite".into(),
        });
    }

    for iteration in 0..cfg.max_iter {
        let grad = gradient_unchecked(&theta, data, cfg.lambda);
        let grad_norm = grad.norm();
        if !grad_norm.is_finite() {
            return Err(Error::Fit {
                iteration,
                reason: "gradient is not finite".into(),
            });
        }
        if grad_norm <= cfg.tol {
            break;
        }
        let hessian = reg_hessian(&theta, data, cfg.lambda);
        let step = hessian
            .cholesky()
            .ok_or_else(|| Error::Fit {
                iteration,
                reason: "Hessian is not positive definite".into(),
            })?
            .solve(&grad);

        let current = nll_unchecked(&theta, data, cfg.lambda);
        let slope = grad.dot(&step);
        // Below this decrement the objective cannot resolve a decrease, so
        // line search would stall; the full step is safe this close in.
        if 0.5 * slope <= 4.0 * f64::EPSILON * current.abs().max(1.0) {
            theta -= &step;
            break;
        }
        let mut scale = 1.0;
        let mut candidate = &theta - &step;
        while scale > 1e-12 {
            let value = nll_unchecked(&candidate, data, cfg.lambda);
            if value <= current - 1e-4 * scale * slope {
                break;
            }
            scale *= 0.5;
            candidate = &theta - &step * scale;
        }
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit {
                iteration,
                reason: "iterate is not finite".into(),
            });
        }
        theta = candidate;
    }

    project_to_ball(&mut theta, cfg.q_bound);
    Ok(theta)
}

/// Predicted violation probability `σ(θ_cᵀξ)`.
pub fn predict_violation(theta_c: &DVector<f64>, xi: &ContextVector) -> Result<f64> {
    if theta_c.len() != xi.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta_c.len(),
            found: xi.dim(),
        });
    }
    Ok(sigmoid(theta_c.dot(xi.as_vector())))
}

/// Embed `ξ` into block `i` of a `K·d` vector, zeros elsewhere.
pub fn pad_context(xi: &ContextVector, i: ControllerId, k: usize) -> Result<DVector<f64>> {
    if i.0 >= k {
        return Err(Error::InvalidController { index: i.0, k });
    }
    let d = xi.dim();
    let mut out = DVector::zeros(k * d);
    out.rows_mut(i.0 * d, d).copy_from(xi.as_vector());
    Ok(out)
}
