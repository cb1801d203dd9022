//! Active contextual monitor learning.
//!
//! Each round picks a `(context, controller)` pair, runs the controller in
//! that context, appends the binary outcome to the dataset and folds the
//! pull into the controller's inverse Hessian. Every `e` rounds (and at the
//! final round) all rows of θ are refitted from their previous values and
//! the inverses are rebuilt at the new estimates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Choice, ContextId, ContextSpace, ContextVector, ControllerId, Dataset, MonitorModel, Observation,
};
use crate::envsim::{bandit_query, GroundTruthModel};
use crate::error::{Error, Result};
use crate::logistic::{fit_mle, FitConfig};
use crate::uncertainty::{init_state, rebuild, select_pair, SamplingStrategy, UncertaintyState};

/// Default cap on the candidate pool drawn each round.
pub const DEFAULT_POOL_SIZE: usize = 512;

/// Anything that can run a controller in a context and report whether the
/// specification was violated.
pub trait Environment {
    fn n_controllers(&self) -> usize;
    fn dim(&self) -> usize;
    fn query(&self, controller: ControllerId, xi: &ContextVector, rng: &mut dyn RngCore) -> bool;
}

impl Environment for GroundTruthModel {
    fn n_controllers(&self) -> usize {
        GroundTruthModel::n_controllers(self)
    }

    fn dim(&self) -> usize {
        GroundTruthModel::dim(self)
    }

    fn query(&self, controller: ControllerId, xi: &ContextVector, rng: &mut dyn RngCore) -> bool {
        bandit_query(self, Choice::Controller(controller), xi, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Total rounds.
    #[serde(rename = "T")]
    pub rounds: usize,
    /// Rounds between refits.
    #[serde(rename = "e")]
    pub retrain_every: usize,
    #[serde(default = "default_pool")]
    pub n_candidates: usize,
    #[serde(default = "default_strategy")]
    pub strategy: SamplingStrategy,
    #[serde(default)]
    pub fit: FitConfig,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_pool() -> usize {
    DEFAULT_POOL_SIZE
}

fn default_strategy() -> SamplingStrategy {
    SamplingStrategy::MaxBoth
}

impl LearnerConfig {
    pub fn new(rounds: usize, retrain_every: usize, checkpoint_every: usize, seed: u64) -> Self {
        Self {
            rounds,
            retrain_every,
            n_candidates: DEFAULT_POOL_SIZE,
            strategy: SamplingStrategy::MaxBoth,
            fit: FitConfig::default(),
            checkpoint_every,
            seed,
        }
    }

    pub fn validate(&self, n_controllers: usize) -> Result<()> {
        self.fit.validate()?;
        if self.rounds < n_controllers {
            return Err(Error::InvalidConfig(format!(
                "T = {} leaves no room for the {n_controllers}-round initialization",
                self.rounds
            )));
        }
        for (name, v) in [
            ("e", self.retrain_every),
            ("checkpoint_every", self.checkpoint_every),
            ("n_candidates", self.n_candidates),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub context_id: ContextId,
    pub controller: ControllerId,
    pub violated: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub monitor: MonitorModel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningTrace {
    pub rows: Vec<TraceRow>,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Active,
    Passive,
}

/// Learner state across rounds.
struct Loop<'a> {
    cfg: &'a LearnerConfig,
    space: &'a ContextSpace,
    support: Vec<ContextId>,
    k: usize,
    d: usize,
    theta: DMatrix<f64>,
    state: UncertaintyState,
    per_controller: Vec<Vec<(ContextVector, bool)>>,
    dataset: Dataset,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a LearnerConfig, space: &'a ContextSpace, k: usize) -> Result<Self> {
        let d = space.dim();
        Ok(Self {
            cfg,
            space,
            support: space.support(),
            k,
            d,
            theta: DMatrix::zeros(k, d),
            state: init_state(k, d, cfg.fit.lambda)?,
            per_controller: vec![Vec::new(); k],
            dataset: Dataset::new(),
        })
    }

    fn theta_row(&self, c: ControllerId) -> DVector<f64> {
        self.theta.row(c.0).transpose()
    }

    /// Uniform draw without replacement from the support of the space
    /// distribution.
    fn pool(&self, rng: &mut ChaCha8Rng) -> Vec<ContextId> {
        let n = self.support.len();
        index::sample(rng, n, self.cfg.n_candidates.min(n))
            .into_iter()
            .map(|i| self.support[i])
            .collect()
    }

    fn select(&self, round: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(ContextId, ControllerId, f64)> {
        if round <= self.k {
            let id = self.space.sample(rng);
            let c = ControllerId(round - 1);
            return Ok((id, c, self.state.norm(self.space.context(id), c)?));
        }
        if mode == Mode::Passive {
            let id = self.space.sample(rng);
            let c = ControllerId(rng.gen_range(0..self.k));
            return Ok((id, c, self.state.norm(self.space.context(id), c)?));
        }
        let ids = match self.cfg.strategy {
            SamplingStrategy::RandomContextMaxController => vec![self.space.sample(rng)],
            SamplingStrategy::MaxBoth | SamplingStrategy::UniformRandom => self.pool(rng),
        };
        let candidates: Vec<(ContextId, &ContextVector)> =
            ids.iter().map(|&id| (id, self.space.context(id))).collect();
        let s = select_pair(&candidates, &self.state, self.cfg.strategy, rng)?;
        Ok((s.context_id, s.controller, s.score))
    }

    fn observe(&mut self, round: usize, id: ContextId, c: ControllerId, violated: bool) -> Result<()> {
        let xi = self.space.context(id).clone();
        let row = self.theta_row(c);
        self.state.record(c, &xi, &row);
        self.per_controller[c.0].push((xi.clone(), violated));
        self.dataset.push(Observation {
            round,
            context_id: id,
            context: xi,
            controller: c,
            violated,
        })
    }

    fn refit(&mut self) -> Result<()> {
        for c in 0..self.k {
            let warm = self.theta_row(ControllerId(c));
            let data = &self.per_controller[c];
            let fitted = fit_mle(data, self.d, &self.cfg.fit, Some(&warm))?;
            self.theta.set_row(c, &fitted.transpose());
            let h_inv = rebuild(&fitted, data, self.cfg.fit.lambda)?;
            self.state.reset(ControllerId(c), h_inv);
        }
        Ok(())
    }

    fn monitor(&self) -> Result<MonitorModel> {
        MonitorModel::new(self.theta.clone(), self.cfg.fit.q_bound)
    }
}

fn learn(
    cfg: &LearnerConfig,
    env: &dyn Environment,
    space: &ContextSpace,
    mode: Mode,
) -> Result<(MonitorModel, LearningTrace, Dataset)> {
    let k = env.n_controllers();
    cfg.validate(k)?;
    if env.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            found: space.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lp = Loop::new(cfg, space, k)?;
    let mut trace = LearningTrace::default();

    for round in 1..=cfg.rounds {
        let step = |lp: &mut Loop, rng: &mut ChaCha8Rng, trace: &mut LearningTrace| -> Result<()> {
            let (id, c, score) = lp.select(round, mode, rng)?;
            let violated = env.query(c, space.context(id), rng);
            lp.observe(round, id, c, violated)?;
            trace.rows.push(TraceRow {
                round,
                context_id: id,
                controller: c,
                violated,
                score,
            });
            let checkpoint = round % cfg.checkpoint_every == 0 || round == cfg.rounds;
            let refit = match mode {
                Mode::Active => round % cfg.retrain_every == 0 || round == cfg.rounds,
                Mode::Passive => checkpoint,
            };
            if refit {
                lp.refit()?;
            }
            if checkpoint {
                trace.checkpoints.push(Checkpoint {
                    round,
                    monitor: lp.monitor()?,
                });
            }
            Ok(())
        };
        step(&mut lp, &mut rng, &mut trace).map_err(|e| Error::AtRound {
            round,
            source: Box::new(e),
        })?;
    }
    Ok((lp.monitor()?, trace, lp.dataset))
}

/// Uncertainty-driven learning loop.
pub fn run(cfg: &LearnerConfig, env: &dyn Environment, space: &ContextSpace) -> Result<(MonitorModel, LearningTrace)> {
    learn(cfg, env, space, Mode::Active).map(|(m, t, _)| (m, t))
}

/// Like [`run`] but also returns the gathered dataset.
pub fn run_with_data(
    cfg: &LearnerConfig,
    env: &dyn Environment,
    space: &ContextSpace,
) -> Result<(MonitorModel, LearningTrace, Dataset)> {
    learn(cfg, env, space, Mode::Active)
}

/// Passive baseline: after the same one-pull-per-controller initialization,
/// pairs are drawn uniformly at random and the model is fitted only at
/// checkpoints. The data gathered never depends on the fitted model, so the
/// final monitor is a single fit on all `T` observations.
pub fn passive_run(
    cfg: &LearnerConfig,
    env: &dyn Environment,
    space: &ContextSpace,
) -> Result<(MonitorModel, LearningTrace)> {
    learn(cfg, env, space, Mode::Passive).map(|(m, t, _)| (m, t))
}
