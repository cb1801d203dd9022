//! Ground-truth metrics and experiment drivers.
//!
//! Metrics are exact over the enumerated context space. Episode sweeps use
//! common random numbers: episode `m` always replays the same random stream
//! (start context, drift path and hazard draws) whatever the threshold or
//! monitor, so comparisons across thresholds and ensemble sizes are paired.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ContextSpace, MonitorModel};
use crate::envsim::{episodic_simulate, true_best_set, DriftModel, GroundTruthModel, Preset};
use crate::error::{Error, Result};
use crate::learner::{passive_run, run, LearnerConfig, LearningTrace};
use crate::logistic::dsigmoid;
use crate::policy::argmin_index;
use crate::stream_rng;

fn check_shapes(monitor: &MonitorModel, gt: &GroundTruthModel, space: &ContextSpace) -> Result<()> {
    if monitor.n_controllers() != gt.n_controllers() {
        return Err(Error::DimensionMismatch {
            expected: gt.n_controllers(),
            found: monitor.n_controllers(),
        });
    }
    if monitor.dim() != gt.dim() || space.dim() != gt.dim() {
        return Err(Error::DimensionMismatch {
            expected: gt.dim(),
            found: if monitor.dim() != gt.dim() { monitor.dim() } else { space.dim() },
        });
    }
    Ok(())
}

/// Monitor's argmin controller index per context.
fn monitor_choices(monitor: &MonitorModel, space: &ContextSpace) -> Vec<usize> {
    space
        .contexts()
        .iter()
        .map(|xi| argmin_index((monitor.theta() * xi.as_vector()).iter().copied()).0)
        .collect()
}

/// Worst-case gap, over contexts of positive weight, between the true
/// violation probability of the monitor's choice and the best achievable.
pub fn true_regret(monitor: &MonitorModel, gt: &GroundTruthModel, space: &ContextSpace) -> Result<f64> {
    check_shapes(monitor, gt, space)?;
    let choices = monitor_choices(monitor, space);
    let mut worst: f64 = 0.0;
    for ((xi, &w), &c) in space.contexts().iter().zip(space.weights()).zip(&choices) {
        if w <= 0.0 {
            continue;
        }
        let probs = gt.violation_probs(xi);
        worst = worst.max(probs[c] - probs.min());
    }
    Ok(worst)
}

/// Distribution-weighted fraction of contexts where the monitor picks a
/// truly optimal controller.
pub fn correct_controller_probability(
    monitor: &MonitorModel,
    gt: &GroundTruthModel,
    space: &ContextSpace,
) -> Result<f64> {
    check_shapes(monitor, gt, space)?;
    let choices = monitor_choices(monitor, space);
    Ok(space
        .contexts()
        .iter()
        .zip(space.weights())
        .zip(&choices)
        .filter(|((xi, _), &c)| true_best_set(gt, xi).iter().any(|b| b.0 == c))
        .map(|((_, &w), _)| w)
        .sum())
}

/// Expected one-shot reward `1 − σ(θ*_{π(ξ)}ᵀξ)` of the monitor's choice,
/// averaged over the space distribution (no fail-safe).
pub fn expected_reward(monitor: &MonitorModel, gt: &GroundTruthModel, space: &ContextSpace) -> Result<f64> {
    check_shapes(monitor, gt, space)?;
    let choices = monitor_choices(monitor, space);
    Ok(space
        .contexts()
        .iter()
        .zip(space.weights())
        .zip(&choices)
        .map(|((xi, &w), &c)| w * (1.0 - gt.violation_probs(xi)[c]))
        .sum())
}

/// [`true_regret`] at every checkpoint of a trace.
pub fn regret_curve(trace: &LearningTrace, gt: &GroundTruthModel, space: &ContextSpace) -> Result<Vec<(usize, f64)>> {
    trace
        .checkpoints
        .iter()
        .map(|cp| Ok((cp.round, true_regret(&cp.monitor, gt, space)?)))
        .collect()
}

/// Reference regret bound
/// `b γ_t(δ) √(q log(1 + t/(λκnd)) κnd / t)` with
/// `γ_t(δ) = q √(nd log(qt/(nd)) + log(t/δ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryBound {
    pub b: f64,
    pub q: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub n_controllers: usize,
    pub d: usize,
    pub delta: f64,
}

impl TheoryBound {
    /// Bound for a learner whose parameters live in `‖θ‖ ≤ q` and whose
    /// contexts satisfy `‖ξ‖ ≤ context_bound`, with κ = 1/σ̇(q·L) the worst
    /// inverse slope of σ over that region.
    pub fn for_problem(q: f64, lambda: f64, context_bound: f64, n_controllers: usize, d: usize, delta: f64) -> Self {
        Self {
            b: 1.0,
            q,
            lambda,
            kappa: 1.0 / dsigmoid(q * context_bound),
            n_controllers,
            d,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.b, self.q, self.lambda, self.kappa].iter().all(|v| *v > 0.0 && v.is_finite())
            && self.n_controllers > 0
            && self.d > 0
            && self.delta > 0.0
            && self.delta <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid theory bound parameters {self:?}")))
        }
    }

    /// Confidence width γ_t(δ); the radicand is clamped at zero for the
    /// small `t` where `log(qt/(nd))` is very negative.
    pub fn gamma(&self, t: f64) -> f64 {
        let nd = (self.n_controllers * self.d) as f64;
        let radicand = nd * (self.q * t / nd).ln() + (t / self.delta).ln();
        self.q * radicand.max(0.0).sqrt()
    }

    pub fn value(&self, t: f64) -> f64 {
        let nd = (self.n_controllers * self.d) as f64;
        let growth = (1.0 + t / (self.lambda * self.kappa * nd)).ln();
        self.b * self.gamma(t) * (self.q * growth * self.kappa * nd / t).sqrt()
    }

    /// Least-squares `b` for a measured curve (closed form, the bound is
    /// linear in `b`).
    pub fn fit_b(&self, measured: &[(usize, f64)]) -> Self {
        let unit = Self { b: 1.0, ..*self };
        let (num, den) = measured.iter().fold((0.0, 0.0), |(num, den), &(t, v)| {
            let g = unit.value(t as f64);
            (num + v * g, den + g * g)
        });
        Self {
            b: if den > 0.0 { num / den } else { 0.0 },
            ..*self
        }
    }
}

pub fn theory_curve(bound: &TheoryBound, rounds: &[usize]) -> Result<Vec<(usize, f64)>> {
    if rounds.is_empty() {
        return Err(Error::InvalidConfig("theory curve needs at least one round".into()));
    }
    Ok(rounds.iter().map(|&t| (t, bound.value(t as f64))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub avg_reward: f64,
    pub fp_rate: f64,
    pub fail_safe_rate: f64,
}

/// Episode-level evaluation settings shared by sweeps and studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Run `episodes` simulations per threshold, replaying the same episode
/// streams for every threshold.
pub fn threshold_sweep(
    monitor: &MonitorModel,
    gt: &GroundTruthModel,
    space: &ContextSpace,
    drift: &DriftModel,
    taus: &[f64],
    episodes: &EpisodeConfig,
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("threshold list is empty".into()));
    }
    if taus.iter().any(|t| !(0.0..=1.0).contains(t)) || taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("thresholds must lie in [0, 1] in ascending order".into()));
    }
    if episodes.episodes == 0 || episodes.steps == 0 {
        return Err(Error::InvalidConfig("need at least one episode of at least one step".into()));
    }
    check_shapes(monitor, gt, space)?;
    drift.validate(&space.schema)?;

    taus.iter()
        .map(|&tau| {
            let results = (0..episodes.episodes)
                .into_par_iter()
                .map(|m| {
                    let mut rng = stream_rng(episodes.seed, m as u64);
                    let start = space.sample(&mut rng);
                    episodic_simulate(gt, monitor, tau, space, drift, start, episodes.steps, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let ok = results.iter().filter(|r| !r.violated).count();
            let fail_safe: usize = results.iter().map(|r| r.fail_safe_steps).sum();
            let fp: usize = results.iter().map(|r| r.fp_switch_steps).sum();
            let steps: usize = results.iter().map(|r| r.steps).sum();
            Ok(SweepRow {
                tau,
                avg_reward: ok as f64 / episodes.episodes as f64,
                fp_rate: fp as f64 / fail_safe.max(1) as f64,
                fail_safe_rate: fail_safe as f64 / steps as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSweep {
    pub size: usize,
    pub monitor: MonitorModel,
    pub rows: Vec<SweepRow>,
}

/// Train one monitor per ensemble size (the first `k` controllers of the
/// preset) with the same learner budget and seed, then sweep each.
pub fn ensemble_size_study(
    preset: &Preset,
    sizes: &[usize],
    cfg: &LearnerConfig,
    taus: &[f64],
    episodes: &EpisodeConfig,
) -> Result<Vec<SizeSweep>> {
    let k = preset.truth.n_controllers();
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0 || s > k) {
        return Err(Error::InvalidConfig(format!("ensemble sizes must lie in 1..={k}")));
    }
    sizes
        .iter()
        .map(|&size| {
            let truth = preset.truth.truncated(size)?;
            let (monitor, _) = run(cfg, &truth, &preset.space)?;
            let rows = threshold_sweep(&monitor, &truth, &preset.space, &preset.drift, taus, episodes)?;
            Ok(SizeSweep { size, monitor, rows })
        })
        .collect()
}

/// Final true regret of the active and passive learners at the same budget
/// and seed.
pub fn active_vs_passive(preset: &Preset, cfg: &LearnerConfig) -> Result<(f64, f64)> {
    let (active, _) = run(cfg, &preset.truth, &preset.space)?;
    let (passive, _) = passive_run(cfg, &preset.truth, &preset.space)?;
    Ok((
        true_regret(&active, &preset.truth, &preset.space)?,
        true_regret(&passive, &preset.truth, &preset.space)?,
    ))
}

/// Derive the `i`-th study seed from a master seed.
pub fn derive_seed(master: u64, i: u64) -> u64 {
    use rand::RngCore;
    stream_rng(master, i).next_u64()
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
