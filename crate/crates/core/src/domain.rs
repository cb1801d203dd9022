//! Core value types: context schemas and their encodings, controller
//! identifiers, observations and monitor parameter matrices.
//!
//! A [`ContextSchema`] describes scenario-style contexts as a list of
//! discrete features. Each context encodes to a real vector laid out in
//! declaration order: one one-hot block per categorical feature, one 0/1
//! slot per binary feature, one one-hot block per clustered (discretized
//! continuous) feature, and finally an optional constant bias slot.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated contexts.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical,
    Binary,
    Cluster,
}

/// One raw (pre-encoding) feature of a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Number of admissible values; 2 for binary features.
    pub cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSchema {
    #[serde(default)]
    pub categorical_features: Vec<(String, usize)>,
    #[serde(default)]
    pub binary_features: Vec<String>,
    #[serde(default)]
    pub cluster_features: Vec<(String, usize)>,
    #[serde(default = "default_true")]
    pub include_bias: bool,
}

fn default_true() -> bool {
    true
}

/// Raw feature values in schema declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawContext(pub Vec<usize>);

impl ContextSchema {
    /// Features in slot order: categorical, binary, cluster.
    pub fn features(&self) -> Vec<FeatureSpec> {
        let categorical = self.categorical_features.iter().map(|(n, c)| FeatureSpec {
            name: n.clone(),
            kind: FeatureKind::Categorical,
            cardinality: *c,
        });
        let binary = self.binary_features.iter().map(|n| FeatureSpec {
            name: n.clone(),
            kind: FeatureKind::Binary,
            cardinality: 2,
        });
        let cluster = self.cluster_features.iter().map(|(n, c)| FeatureSpec {
            name: n.clone(),
            kind: FeatureKind::Cluster,
            cardinality: *c,
        });
        categorical.chain(binary).chain(cluster).collect()
    }

    /// Encoded dimension.
    pub fn dim(&self) -> usize {
        self.categorical_features.iter().map(|(_, c)| c).sum::<usize>()
            + self.binary_features.len()
            + self.cluster_features.iter().map(|(_, c)| c).sum::<usize>()
            + usize::from(self.include_bias)
    }

    /// Offset of each feature's first slot in the encoded vector.
    pub fn slot_offsets(&self) -> Vec<usize> {
        let mut offset = 0;
        self.features()
            .iter()
            .map(|f| {
                let start = offset;
                offset += match f.kind {
                    FeatureKind::Binary => 1,
                    _ => f.cardinality,
                };
                start
            })
            .collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features().iter().position(|f| f.name == name)
    }

    /// Number of distinct raw contexts.
    pub fn combinations(&self) -> u128 {
        self.features()
            .iter()
            .map(|f| f.cardinality as u128)
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for f in self.features() {
            if f.cardinality == 0 {
                return Err(Error::InvalidConfig(format!(
                    "feature `{}` has cardinality 0",
                    f.name
                )));
            }
            if !seen.insert(f.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "feature `{}` declared twice",
                    f.name
                )));
            }
        }
        if self.dim() == 0 {
            return Err(Error::InvalidConfig("schema encodes to dimension 0".into()));
        }
        Ok(())
    }

    /// Encode a named assignment. Every schema feature must be present.
    pub fn encode(&self, raw: &BTreeMap<String, usize>) -> Result<ContextVector> {
        let features = self.features();
        for name in raw.keys() {
            if !features.iter().any(|f| &f.name == name) {
                return Err(Error::UnknownFeature(name.clone()));
            }
        }
        let values = features
            .iter()
            .map(|f| {
                raw.get(&f.name)
                    .copied()
                    .ok_or_else(|| Error::MissingFeature(f.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.encode_raw(&RawContext(values))
    }

    /// Encode positional raw values (declaration order).
    pub fn encode_raw(&self, raw: &RawContext) -> Result<ContextVector> {
        let features = self.features();
        if raw.0.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: raw.0.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        for ((f, &value), offset) in features.iter().zip(&raw.0).zip(self.slot_offsets()) {
            if value >= f.cardinality {
                return Err(Error::Encoding {
                    feature: f.name.clone(),
                    value,
                    limit: f.cardinality,
                });
            }
            match f.kind {
                FeatureKind::Binary => out[offset] = value as f64,
                FeatureKind::Categorical | FeatureKind::Cluster => out[offset + value] = 1.0,
            }
        }
        if self.include_bias {
            *out.last_mut().expect("dim > 0 with bias") = 1.0;
        }
        Ok(ContextVector::from_vec_unchecked(out))
    }

    /// Inverse of [`encode_raw`](Self::encode_raw) for vectors produced by it.
    pub fn decode(&self, xi: &ContextVector) -> Result<RawContext> {
        if xi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: xi.dim(),
            });
        }
        let v = xi.as_slice();
        let raw = self
            .features()
            .iter()
            .zip(self.slot_offsets())
            .map(|(f, offset)| match f.kind {
                FeatureKind::Binary => Ok(usize::from(v[offset] == 1.0)),
                _ => v[offset..offset + f.cardinality]
                    .iter()
                    .position(|&x| x == 1.0)
                    .ok_or_else(|| Error::MissingFeature(f.name.clone())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RawContext(raw))
    }
}

/// Boundaries for discretizing a nonnegative distance into clusters.
///
/// With edges `[10, 20, 30, 50]` the clusters are `[0,10)`, `[10,20)`,
/// `[20,30)`, `[30,50)` and "far" (everything at or beyond 50).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceClusters {
    pub edges: Vec<f64>,
}

impl Default for DistanceClusters {
    fn default() -> Self {
        Self {
            edges: vec![10.0, 20.0, 30.0, 50.0],
        }
    }
}

impl DistanceClusters {
    pub fn cluster_count(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn cluster_of(&self, distance: f64) -> usize {
        self.edges.partition_point(|&edge| edge <= distance)
    }
}

/// Encoded context vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector(DVector<f64>);

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("context entry {i} is not finite")));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl AsRef<[f64]> for ContextVector {
    fn as_ref(&self) -> &[f64] {
        self.as_slice()
    }
}

/// Dense index of a context inside its [`ContextSpace`].
pub type ContextId = usize;

/// Finite enumerated context space with a sampling distribution.
#[derive(Debug, Clone)]
pub struct ContextSpace {
    pub schema: ContextSchema,
    raws: Vec<RawContext>,
    contexts: Vec<ContextVector>,
    weights: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl ContextSpace {
    /// All raw combinations in lexicographic order (first feature most
    /// significant), with a uniform distribution.
    pub fn enumerate(schema: &ContextSchema) -> Result<Self> {
        Self::enumerate_with_cap(schema, DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_with_cap(schema: &ContextSchema, cap: usize) -> Result<Self> {
        schema.validate()?;
        let size = schema.combinations();
        if size > cap as u128 {
            return Err(Error::Enumeration { size, cap });
        }
        let cards: Vec<usize> = schema.features().iter().map(|f| f.cardinality).collect();
        let mut raws = Vec::with_capacity(size as usize);
        let mut current = vec![0usize; cards.len()];
        for _ in 0..size {
            raws.push(RawContext(current.clone()));
            for pos in (0..cards.len()).rev() {
                current[pos] += 1;
                if current[pos] < cards[pos] {
                    break;
                }
                current[pos] = 0;
            }
        }
        let contexts = raws
            .iter()
            .map(|r| schema.encode_raw(r))
            .collect::<Result<Vec<_>>>()?;
        let n = contexts.len();
        Self::from_parts(schema.clone(), raws, contexts, vec![1.0 / n as f64; n])
    }

    fn from_parts(
        schema: ContextSchema,
        raws: Vec<RawContext>,
        contexts: Vec<ContextVector>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidConfig(format!("context distribution: {e}")))?;
        Ok(Self {
            schema,
            raws,
            contexts,
            weights,
            sampler,
        })
    }

    /// Replace the sampling distribution. Weights must be nonnegative and
    /// sum to one within 1e-12.
    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.contexts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.contexts.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "context weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "context weights sum to {total}, expected 1"
            )));
        }
        Self::from_parts(self.schema, self.raws, self.contexts, weights)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn context(&self, id: ContextId) -> &ContextVector {
        &self.contexts[id]
    }

    pub fn raw(&self, id: ContextId) -> &RawContext {
        &self.raws[id]
    }

    pub fn contexts(&self) -> &[ContextVector] {
        &self.contexts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Ids of contexts with positive weight, ascending.
    pub fn support(&self) -> Vec<ContextId> {
        (0..self.len()).filter(|&id| self.weights[id] > 0.0).collect()
    }

    /// Norm bound used for one-hot encodings.
    pub fn norm_bound(&self) -> f64 {
        (self.dim() as f64).sqrt()
    }

    /// Id of a raw context (inverse of the lexicographic enumeration).
    pub fn id_of(&self, raw: &RawContext) -> Option<ContextId> {
        let features = self.schema.features();
        if raw.0.len() != features.len() {
            return None;
        }
        let mut id = 0usize;
        for (f, &v) in features.iter().zip(&raw.0) {
            if v >= f.cardinality {
                return None;
            }
            id = id * f.cardinality + v;
        }
        Some(id)
    }

    /// Draw one context id from the space distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextId {
        self.sampler.sample(rng)
    }
}

/// Index of an ensemble controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ControllerId(pub usize);

impl ControllerId {
    pub fn checked(index: usize, k: usize) -> Result<Self> {
        if index < k {
            Ok(Self(index))
        } else {
            Err(Error::InvalidController { index, k })
        }
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What actually drives the plant: an ensemble member or the fail-safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    Controller(ControllerId),
    FailSafe,
}

impl Choice {
    pub fn is_fail_safe(self) -> bool {
        matches!(self, Choice::FailSafe)
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Controller(c) => write!(f, "{c}"),
            Choice::FailSafe => f.write_str("failsafe"),
        }
    }
}

/// One bandit round: a controller run in a context and whether it violated
/// its safety property.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub round: usize,
    pub context_id: ContextId,
    pub context: ContextVector,
    pub controller: ControllerId,
    pub violated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an observation; rounds must be strictly increasing.
    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if let Some(last) = self.observations.last() {
            if obs.round <= last.round {
                return Err(Error::InvalidConfig(format!(
                    "observation round {} does not follow round {}",
                    obs.round, last.round
                )));
            }
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// `(context, outcome)` pairs of one controller in round order.
    pub fn samples_for(&self, c: ControllerId) -> Vec<(&ContextVector, bool)> {
        self.observations
            .iter()
            .filter(|o| o.controller == c)
            .map(|o| (&o.context, o.violated))
            .collect()
    }
}

/// K×d parameter matrix, one row per controller, each row bounded in norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorModel {
    theta: DMatrix<f64>,
    q_bound: f64,
}

impl MonitorModel {
    pub fn new(theta: DMatrix<f64>, q_bound: f64) -> Result<Self> {
        if !(q_bound > 0.0 && q_bound.is_finite()) {
            return Err(Error::InvalidConfig(format!("q_bound must be positive, got {q_bound}")));
        }
        if theta.nrows() == 0 || theta.ncols() == 0 {
            return Err(Error::InvalidConfig("monitor must have at least one row and column".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("monitor parameters are not finite".into()));
        }
        for (c, row) in theta.row_iter().enumerate() {
            let norm = row.norm();
            if norm > q_bound * (1.0 + 1e-9) {
                return Err(Error::InvalidConfig(format!(
                    "row {c} has norm {norm} exceeding bound {q_bound}"
                )));
            }
        }
        Ok(Self { theta, q_bound })
    }

    pub fn zeros(k: usize, d: usize, q_bound: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(k, d), q_bound)
    }

    pub fn n_controllers(&self) -> usize {
        self.theta.nrows()
    }

    pub fn dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn q_bound(&self) -> f64 {
        self.q_bound
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn row(&self, c: ControllerId) -> DVector<f64> {
        self.theta.row(c.0).transpose()
    }

    /// Monitor restricted to the first `k` controllers.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_controllers() {
            return Err(Error::InvalidController {
                index: k,
                k: self.n_controllers(),
            });
        }
        Self::new(self.theta.rows(0, k).into_owned(), self.q_bound)
    }
}

/// Runtime decision for a single context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub chosen: Choice,
    pub best_controller: ControllerId,
    pub predicted_violation: f64,
    pub confidence: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weather_schema() -> ContextSchema {
        ContextSchema {
            categorical_features: vec![("weather".into(), 2)],
            binary_features: vec!["i".into()],
            cluster_features: vec![],
            include_bias: true,
        }
    }

    fn assign(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn encode_one_hot_layout() {
        let s = weather_schema();
        let v = s.encode(&assign(&[("weather", 1), ("i", 0)])).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        let v = s.encode(&assign(&[("weather", 0), ("i", 1)])).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let s = weather_schema();
        let err = s.encode(&assign(&[("weather", 2), ("i", 0)])).unwrap_err();
        assert!(err.to_string().contains("weather"), "{err}");
        let err = s.encode(&assign(&[("weather", 0), ("i", 2)])).unwrap_err();
        assert!(err.to_string().contains("`i`"), "{err}");
        assert!(matches!(
            s.encode(&assign(&[("weather", 0)])),
            Err(Error::MissingFeature(_))
        ));
        assert!(matches!(
            s.encode(&assign(&[("weather", 0), ("i", 0), ("rain", 1)])),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn dimension_formula() {
        let s = ContextSchema {
            categorical_features: vec![("wt".into(), 14)],
            binary_features: vec!["i".into()],
            cluster_features: vec![("dc".into(), 5), ("dp".into(), 5)],
            include_bias: true,
        };
        assert_eq!(s.dim(), 14 + 1 + 5 + 5 + 1);
        assert_eq!(s.combinations(), 700);
    }

    #[test]
    fn single_binary_space_has_two_contexts() {
        let s = ContextSchema {
            categorical_features: vec![],
            binary_features: vec!["i".into()],
            cluster_features: vec![],
            include_bias: false,
        };
        let space = ContextSpace::enumerate(&s).unwrap();
        assert_eq!(space.len(), 2);
        assert_eq!(space.context(0).as_slice(), &[0.0]);
        assert_eq!(space.context(1).as_slice(), &[1.0]);
    }

    #[test]
    fn enumeration_cap() {
        let s = ContextSchema {
            categorical_features: vec![("a".into(), 100), ("b".into(), 100)],
            binary_features: vec![],
            cluster_features: vec![],
            include_bias: false,
        };
        assert!(matches!(
            ContextSpace::enumerate_with_cap(&s, 9_999),
            Err(Error::Enumeration { size: 10_000, .. })
        ));
        assert_eq!(ContextSpace::enumerate_with_cap(&s, 10_000).unwrap().len(), 10_000);
    }

    #[test]
    fn ids_round_trip_through_raw() {
        let s = weather_schema();
        let space = ContextSpace::enumerate(&s).unwrap();
        for id in 0..space.len() {
            assert_eq!(space.id_of(space.raw(id)), Some(id));
            assert_eq!(&s.decode(space.context(id)).unwrap(), space.raw(id));
        }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let space = ContextSpace::enumerate(&weather_schema()).unwrap();
        let n = space.len();
        assert!(space.clone().with_weights(vec![0.5; n]).is_err());
        let mut w = vec![0.0; n];
        w[1] = 1.0;
        let space = space.with_weights(w).unwrap();
        let mut rng = rand::thread_rng();
        assert!((0..50).all(|_| space.sample(&mut rng) == 1));
    }

    #[test]
    fn distance_clusters_default() {
        let dc = DistanceClusters::default();
        assert_eq!(dc.cluster_count(), 5);
        assert_eq!(dc.cluster_of(0.0), 0);
        assert_eq!(dc.cluster_of(9.99), 0);
        assert_eq!(dc.cluster_of(10.0), 1);
        assert_eq!(dc.cluster_of(35.0), 3);
        assert_eq!(dc.cluster_of(50.0), 4);
        assert_eq!(dc.cluster_of(100.0), 4);
    }

    #[test]
    fn monitor_rejects_long_rows() {
        let theta = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 1.0]);
        assert!(MonitorModel::new(theta.clone(), 5.0).is_ok());
        assert!(MonitorModel::new(theta, 4.9).is_err());
    }

    #[test]
    fn dataset_rounds_strictly_increase() {
        let xi = ContextVector::new(vec![1.0]).unwrap();
        let obs = |round| Observation {
            round,
            context_id: 0,
            context: xi.clone(),
            controller: ControllerId(0),
            violated: false,
        };
        let mut ds = Dataset::new();
        ds.push(obs(1)).unwrap();
        ds.push(obs(3)).unwrap();
        assert!(ds.push(obs(3)).is_err());
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn context_vector_rejects_nan() {
        assert!(ContextVector::new(vec![1.0, f64::NAN]).is_err());
    }
}
