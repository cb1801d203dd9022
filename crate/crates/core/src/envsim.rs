//! Synthetic monitor-guided system.
//!
//! A [`GroundTruthModel`] holds the hidden logistic parameters of every
//! controller together with the fail-safe's own failure probability. It
//! answers one-shot bandit queries and drives episodic simulations in which
//! the context drifts and a monitor re-decides at every step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Choice, ContextId, ContextSchema, ContextSpace, ContextVector, ControllerId, FeatureKind,
    MonitorModel, RawContext,
};
use crate::error::{Error, Result};
use crate::logistic::sigmoid;
use crate::policy::decide;

pub const DEFAULT_P_FAIL_SAFE: f64 = 0.01;
pub const PRESET_Q_BOUND: f64 = 5.0;

pub const PRESET_NAMES: [&str; 5] = [
    "rq1_4ctrl",
    "scenario1_like_biased",
    "scenario1_like_unbiased",
    "scenario2_like",
    "tiny_debug",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    pub name: String,
    pub theta_star: DMatrix<f64>,
    pub p_fail_safe: f64,
    pub q_bound: f64,
}

impl GroundTruthModel {
    pub fn new(name: impl Into<String>, theta_star: DMatrix<f64>, p_fail_safe: f64, q_bound: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_fail_safe) {
            return Err(Error::InvalidConfig(format!(
                "p_fail_safe must lie in [0, 1), got {p_fail_safe}"
            )));
        }
        // reuse the monitor's row-norm validation
        MonitorModel::new(theta_star.clone(), q_bound)?;
        Ok(Self {
            name: name.into(),
            theta_star,
            p_fail_safe,
            q_bound,
        })
    }

    pub fn n_controllers(&self) -> usize {
        self.theta_star.nrows()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.ncols()
    }

    /// Ground truth viewed as a monitor (the oracle monitor).
    pub fn oracle_monitor(&self) -> MonitorModel {
        MonitorModel::new(self.theta_star.clone(), self.q_bound).expect("validated at construction")
    }

    /// Ground truth restricted to the first `k` controllers.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_controllers() {
            return Err(Error::InvalidController {
                index: k,
                k: self.n_controllers(),
            });
        }
        Self::new(
            self.name.clone(),
            self.theta_star.rows(0, k).into_owned(),
            self.p_fail_safe,
            self.q_bound,
        )
    }

    /// True violation probabilities of all ensemble controllers in `ξ`.
    pub fn violation_probs(&self, xi: &ContextVector) -> DVector<f64> {
        (&self.theta_star * xi.as_vector()).map(sigmoid)
    }

    pub fn violation_prob(&self, choice: Choice, xi: &ContextVector) -> f64 {
        match choice {
            Choice::Controller(c) => sigmoid(self.theta_star.row(c.0).transpose().dot(xi.as_vector())),
            Choice::FailSafe => self.p_fail_safe,
        }
    }

    /// Smallest true violation probability over the ensemble.
    pub fn best_violation(&self, xi: &ContextVector) -> f64 {
        self.violation_probs(xi).min()
    }
}

/// Features that change during an episode, each with its per-step move
/// probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub features: Vec<(String, f64)>,
}

impl DriftModel {
    pub fn static_context() -> Self {
        Self { features: vec![] }
    }

    pub fn validate(&self, schema: &ContextSchema) -> Result<()> {
        let specs = schema.features();
        for (name, p) in &self.features {
            let spec = specs
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            if spec.kind == FeatureKind::Categorical {
                return Err(Error::InvalidConfig(format!(
                    "categorical feature `{name}` is fixed per episode and cannot drift"
                )));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidConfig(format!(
                    "p_move for `{name}` must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// A synthetic scenario: schema, enumerated space, ground truth and drift.
#[derive(Debug, Clone)]
pub struct Preset {
    pub schema: ContextSchema,
    pub space: ContextSpace,
    pub truth: GroundTruthModel,
    pub drift: DriftModel,
}

fn schema(categorical: &[(&str, usize)], binary: &[&str], cluster: &[(&str, usize)]) -> ContextSchema {
    ContextSchema {
        categorical_features: categorical.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        binary_features: binary.iter().map(|n| n.to_string()).collect(),
        cluster_features: cluster.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        include_bias: true,
    }
}

/// Builder for ground-truth rows addressed by feature name.
struct RowBuilder<'a> {
    schema: &'a ContextSchema,
    offsets: BTreeMap<String, usize>,
    row: Vec<f64>,
}

impl<'a> RowBuilder<'a> {
    fn new(schema: &'a ContextSchema) -> Self {
        let offsets = schema
            .features()
            .into_iter()
            .zip(schema.slot_offsets())
            .map(|(f, o)| (f.name, o))
            .collect();
        Self {
            schema,
            offsets,
            row: vec![0.0; schema.dim()],
        }
    }

    fn set(mut self, feature: &str, value_index: usize, weight: f64) -> Self {
        self.row[self.offsets[feature] + value_index] = weight;
        self
    }

    fn block(mut self, feature: &str, weights: &[f64]) -> Self {
        let o = self.offsets[feature];
        self.row[o..o + weights.len()].copy_from_slice(weights);
        self
    }

    fn bias(mut self, weight: f64) -> Self {
        assert!(self.schema.include_bias);
        *self.row.last_mut().unwrap() = weight;
        self
    }

    fn build(self) -> Vec<f64> {
        self.row
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let d = rows[0].len();
    DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c])
}

const WEATHER_TIME_PRESETS: usize = 14;
const DISTANCE_CLUSTERS: usize = 5;
const ENSEMBLE: usize = 15;

/// Three binary features and no bias, two controllers. The gaps between
/// them vary across the eight contexts, so the identification error
/// shrinks gradually rather than all at once.
fn tiny_debug() -> Result<Preset> {
    let mut schema = schema(&[], &["a", "b", "c"], &[]);
    schema.include_bias = false;
    let theta = matrix(vec![vec![0.26, 1.01, 0.28], vec![1.16, 0.73, -0.99]]);
    let drift = DriftModel {
        features: vec![("a".into(), 0.05), ("b".into(), 0.05), ("c".into(), 0.05)],
    };
    finish("tiny_debug", schema, theta, drift)
}

/// Four controllers, each the unique best on its own block of contexts:
/// one for a close car ahead and three for far-car weather presets.
fn rq1_4ctrl() -> Result<Preset> {
    // weather_time: ClearNoon, ClearSunset, HardRainNoon, HardRainSunset
    // distance: close, far
    let schema = schema(&[("weather_time", 4)], &["intersection"], &[("distance", 2)]);
    let close_specialist = RowBuilder::new(&schema)
        .set("intersection", 0, 0.2)
        .block("distance", &[-2.5, 1.5])
        .build();
    let weather_specialist = |own: usize| {
        let mut w = [1.0; 4];
        w[own] = -2.5;
        if own == 1 {
            // the clear-sky specialist also copes with ClearNoon
            w[0] = 0.0;
        }
        RowBuilder::new(&schema)
            .block("weather_time", &w)
            .set("intersection", 0, 0.2)
            .block("distance", &[2.0, -0.5])
            .build()
    };
    let theta = matrix(vec![
        close_specialist,
        weather_specialist(1),
        weather_specialist(2),
        weather_specialist(3),
    ]);
    // Only ClearNoon with a close car, or the other three presets with no
    // car nearby, carry weight; intersection is the only feature that drifts
    // so episodes stay on that support.
    let drift = DriftModel {
        features: vec![("intersection".into(), 0.05)],
    };
    let mut preset = finish("rq1_4ctrl", schema, theta, drift)?;
    let (wt, dist) = (0, 2);
    let on_support: Vec<bool> = (0..preset.space.len())
        .map(|id| {
            let raw = preset.space.raw(id);
            (raw.0[wt] == 0) == (raw.0[dist] == 0)
        })
        .collect();
    let n = on_support.iter().filter(|&&b| b).count() as f64;
    let weights = on_support.iter().map(|&b| if b { 1.0 / n } else { 0.0 }).collect();
    preset.space = preset.space.with_weights(weights)?;
    Ok(preset)
}

fn scenario1_schema() -> ContextSchema {
    schema(
        &[("weather_time", WEATHER_TIME_PRESETS)],
        &["intersection"],
        &[("distance", DISTANCE_CLUSTERS)],
    )
}

/// Fifteen specialists: one per weather-time preset (good there, poor
/// elsewhere and when a car is close) and one for close traffic.
fn scenario1_biased() -> Result<Preset> {
    let schema = scenario1_schema();
    let mut rows = Vec::with_capacity(ENSEMBLE);
    for own in 0..WEATHER_TIME_PRESETS {
        let mut w = vec![0.8; WEATHER_TIME_PRESETS];
        w[own] = -2.0;
        rows.push(
            RowBuilder::new(&schema)
                .block("weather_time", &w)
                .block("distance", &[1.5, 0.8, 0.0, 0.0, -0.3])
                .build(),
        );
    }
    rows.push(
        RowBuilder::new(&schema)
            .block("distance", &[-2.0, -1.5, 0.5, 1.0, 1.0])
            .bias(0.3)
            .build(),
    );
    let drift = DriftModel {
        features: vec![("intersection".into(), 0.05), ("distance".into(), 0.1)],
    };
    finish("scenario1_like_biased", schema, matrix(rows), drift)
}

/// Fifteen controllers of similar quality: a common base failure rate near
/// 0.2 plus small fixed per-controller perturbations.
fn scenario1_unbiased() -> Result<Preset> {
    let schema = scenario1_schema();
    let d = schema.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CE2_A210);
    let rows = (0..ENSEMBLE)
        .map(|_| {
            let mut row: Vec<f64> = (0..d).map(|_| 0.35 * standard_normal(&mut rng)).collect();
            row[d - 1] += -1.4;
            row
        })
        .collect();
    let drift = DriftModel {
        features: vec![("intersection".into(), 0.05), ("distance".into(), 0.1)],
    };
    finish("scenario1_like_unbiased", schema, matrix(rows), drift)
}

fn scenario2_like() -> Result<Preset> {
    let schema = schema(
        &[("weather_time", WEATHER_TIME_PRESETS)],
        &["intersection"],
        &[("car_distance", DISTANCE_CLUSTERS), ("pedestrian_distance", DISTANCE_CLUSTERS)],
    );
    let mut rows = Vec::with_capacity(ENSEMBLE);
    for own in 0..WEATHER_TIME_PRESETS {
        let mut w = vec![0.7; WEATHER_TIME_PRESETS];
        w[own] = -2.0;
        rows.push(
            RowBuilder::new(&schema)
                .block("weather_time", &w)
                .block("car_distance", &[1.2, 0.6, 0.0, 0.0, -0.2])
                .block("pedestrian_distance", &[1.2, 0.6, 0.0, 0.0, -0.2])
                .build(),
        );
    }
    rows.push(
        RowBuilder::new(&schema)
            .block("car_distance", &[-1.5, -1.0, 0.3, 0.6, 0.6])
            .block("pedestrian_distance", &[-1.5, -1.0, 0.3, 0.6, 0.6])
            .bias(0.3)
            .build(),
    );
    let drift = DriftModel {
        features: vec![
            ("intersection".into(), 0.05),
            ("car_distance".into(), 0.1),
            ("pedestrian_distance".into(), 0.1),
        ],
    };
    finish("scenario2_like", schema, matrix(rows), drift)
}

/// Box–Muller draw from N(0, 1).
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn finish(name: &str, schema: ContextSchema, theta: DMatrix<f64>, drift: DriftModel) -> Result<Preset> {
    let space = ContextSpace::enumerate(&schema)?;
    drift.validate(&schema)?;
    let truth = GroundTruthModel::new(name, theta, DEFAULT_P_FAIL_SAFE, PRESET_Q_BOUND)?;
    Ok(Preset {
        schema,
        space,
        truth,
        drift,
    })
}

/// Build a named preset.
pub fn make_preset(name: &str) -> Result<Preset> {
    match name {
        "tiny_debug" => tiny_debug(),
        "rq1_4ctrl" => rq1_4ctrl(),
        "scenario1_like_biased" => scenario1_biased(),
        "scenario1_like_unbiased" => scenario1_unbiased(),
        "scenario2_like" => scenario2_like(),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// One bandit-mode run: did `choice` violate the specification in `ξ`?
pub fn bandit_query<R: Rng + ?Sized>(gt: &GroundTruthModel, choice: Choice, xi: &ContextVector, rng: &mut R) -> bool {
    rng.gen::<f64>() < gt.violation_prob(choice, xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub violated: bool,
    pub steps: usize,
    pub switch_count: usize,
    pub fail_safe_steps: usize,
    pub fp_switch_steps: usize,
    pub log: Vec<(ContextId, Choice)>,
}

/// Advance the dynamic features by one step. Draws exactly two uniforms per
/// dynamic feature regardless of outcome, so paths are reproducible across
/// runs that differ only in the monitor.
fn drift_step<R: Rng + ?Sized>(raw: &mut RawContext, drift: &[(usize, usize, f64)], rng: &mut R) {
    for &(pos, cardinality, p_move) in drift {
        let moves = rng.gen::<f64>() < p_move;
        let up = rng.gen::<bool>();
        if !moves {
            continue;
        }
        let v = &mut raw.0[pos];
        if cardinality == 2 {
            *v = 1 - *v;
        } else if up {
            *v = (*v + 1).min(cardinality - 1);
        } else {
            *v = v.saturating_sub(1);
        }
    }
}

/// Simulate `n` steps starting from `start`.
///
/// At every step the context drifts, the monitor re-decides, and a per-step
/// hazard of `σ(θ*_chosenᵀξ)/n` (or `p_fail_safe/n`) is tested against one
/// uniform draw. The random stream consumed is independent of `monitor` and
/// `tau`.
#[allow(clippy::too_many_arguments)]
pub fn episodic_simulate<R: Rng + ?Sized>(
    gt: &GroundTruthModel,
    monitor: &MonitorModel,
    tau: f64,
    space: &ContextSpace,
    drift: &DriftModel,
    start: ContextId,
    n: usize,
    rng: &mut R,
) -> Result<EpisodeResult> {
    if n == 0 {
        return Err(Error::InvalidConfig("episode needs at least one step".into()));
    }
    if monitor.dim() != gt.dim() || monitor.n_controllers() != gt.n_controllers() || space.dim() != gt.dim() {
        return Err(Error::DimensionMismatch {
            expected: gt.dim(),
            found: monitor.dim(),
        });
    }
    drift.validate(&space.schema)?;
    let features = space.schema.features();
    let dynamic: Vec<(usize, usize, f64)> = drift
        .features
        .iter()
        .map(|(name, p)| {
            let pos = space.schema.feature_index(name).expect("validated");
            (pos, features[pos].cardinality, *p)
        })
        .collect();

    let mut raw = space.raw(start).clone();
    let mut result = EpisodeResult {
        violated: false,
        steps: n,
        switch_count: 0,
        fail_safe_steps: 0,
        fp_switch_steps: 0,
        log: Vec::with_capacity(n),
    };
    let mut previous: Option<Choice> = None;
    for step in 0..n {
        if step > 0 {
            drift_step(&mut raw, &dynamic, rng);
        }
        let id = space.id_of(&raw).expect("drift keeps contexts in range");
        let xi = space.context(id);
        let decision = decide(monitor, xi, tau);
        if decision.chosen.is_fail_safe() {
            result.fail_safe_steps += 1;
            if gt.best_violation(xi) <= 1.0 - tau {
                result.fp_switch_steps += 1;
            }
        }
        if previous.is_some_and(|p| p != decision.chosen) {
            result.switch_count += 1;
        }
        previous = Some(decision.chosen);
        let hazard = gt.violation_prob(decision.chosen, xi) / n as f64;
        if rng.gen::<f64>() < hazard {
            result.violated = true;
        }
        result.log.push((id, decision.chosen));
    }
    Ok(result)
}

/// True-best controllers in `ξ` (all within 1e-12 of the minimum logit).
pub fn true_best_set(gt: &GroundTruthModel, xi: &ContextVector) -> Vec<ControllerId> {
    let logits = &gt.theta_star * xi.as_vector();
    let min = logits.min();
    logits
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= min + 1e-12)
        .map(|(i, _)| ControllerId(i))
        .collect()
}
