//! End-to-end preset studies behind `ctxmon reproduce`.
//!
//! Every study runs one independent job per seed; results are collected in
//! seed order so the tables do not depend on the thread count.

use rayon::prelude::*;

use super::table::{fmt_sig9, Csv};
use crate::envsim::{make_preset, Preset};
use crate::error::Result;
use crate::eval::{
    active_vs_passive, correct_controller_probability, derive_seed, ensemble_size_study, expected_reward, median,
    regret_curve, EpisodeConfig, TheoryBound,
};
use crate::learner::{run, LearnerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Rq1,
    Rq3,
    Rq4,
    Regret,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Rq1 => "rq1",
            Study::Rq3 => "rq3",
            Study::Rq4 => "rq4",
            Study::Regret => "regret",
        }
    }
}

pub const REGRET_CHECKPOINTS: [usize; 4] = [250, 500, 1000, 2000];
pub const REGRET_DECAY_FACTOR: f64 = 0.5;
pub const THEORY_DELTA: f64 = 0.05;

pub const RQ1_ROUNDS: usize = 800;
pub const RQ1_RETRAIN: usize = 25;
pub const RQ1_MIN_CORRECT: f64 = 0.75;
pub const RQ1_MIN_REWARD: f64 = 0.7;
/// Rounds at the end of the run over which reward is averaged.
pub const RQ1_REWARD_WINDOW: usize = 100;
pub const RQ1_SEED_FRACTION: f64 = 0.8;

pub const RQ3_SEED_FRACTION: f64 = 0.7;

pub const RQ4_SIZES: [usize; 3] = [1, 5, 15];
pub const RQ4_TAU: f64 = 0.8;
pub const RQ4_ROUNDS: usize = 1500;
pub const RQ4_EPISODES: usize = 100;
pub const RQ4_STEPS: usize = 300;
pub const RQ4_SEED_FRACTION: f64 = 0.8;

/// Seeds `0..n` of the study derived from `master`.
pub fn study_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(master, i)).collect()
}

/// Smallest count that reaches `fraction` of `n`.
pub fn required(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn summary_table(criteria: &[Criterion]) -> Csv {
    let mut csv = Csv::new(["criterion", "value", "threshold", "pass"]);
    for c in criteria {
        csv.push(vec![c.name.clone(), fmt_sig9(c.value), fmt_sig9(c.threshold), c.pass.to_string()]);
    }
    csv
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretStudy {
    pub seeds: Vec<u64>,
    /// `regrets[s][i]` is the regret of seed `s` at `REGRET_CHECKPOINTS[i]`.
    pub regrets: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub bound: TheoryBound,
    pub theory: Vec<f64>,
}

impl RegretStudy {
    pub fn decay_ratio(&self) -> f64 {
        let first = self.medians[0];
        let last = *self.medians.last().unwrap();
        if first > 0.0 {
            last / first
        } else if last > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn decays(&self) -> bool {
        *self.medians.last().unwrap() <= REGRET_DECAY_FACTOR * self.medians[0]
    }

    pub fn bounded(&self) -> bool {
        // at the fitting round the curve equals the median up to rounding
        self.medians.iter().zip(&self.theory).all(|(m, t)| *m <= t * (1.0 + 1e-12))
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let worst = self
            .medians
            .iter()
            .zip(&self.theory)
            .map(|(m, t)| m - t)
            .fold(f64::NEG_INFINITY, f64::max);
        vec![
            Criterion {
                name: "median_regret_decay_ratio".into(),
                value: self.decay_ratio(),
                threshold: REGRET_DECAY_FACTOR,
                pass: self.decays(),
            },
            Criterion {
                name: "max_median_minus_theory".into(),
                value: worst,
                threshold: 0.0,
                pass: self.bounded(),
            },
        ]
    }

    pub fn table(&self) -> Csv {
        let mut csv = Csv::new(["seed", "round", "regret", "median", "theory"]);
        for (seed, row) in self.seeds.iter().zip(&self.regrets) {
            for (i, r) in row.iter().enumerate() {
                csv.push(vec![
                    seed.to_string(),
                    REGRET_CHECKPOINTS[i].to_string(),
                    fmt_sig9(*r),
                    fmt_sig9(self.medians[i]),
                    fmt_sig9(self.theory[i]),
                ]);
            }
        }
        csv
    }
}

/// Active learning on `tiny_debug`; median regret over seeds at each
/// checkpoint against the theory curve scaled to the first checkpoint.
pub fn regret_study(seeds: &[u64]) -> Result<RegretStudy> {
    let preset = make_preset("tiny_debug")?;
    let horizon = *REGRET_CHECKPOINTS.last().unwrap();
    let regrets = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnerConfig::new(horizon, 25, REGRET_CHECKPOINTS[0], seed);
            let (_, trace) = run(&cfg, &preset.truth, &preset.space)?;
            let curve = regret_curve(&trace, &preset.truth, &preset.space)?;
            Ok(REGRET_CHECKPOINTS
                .iter()
                .map(|t| curve.iter().find(|(r, _)| r == t).map_or(f64::NAN, |p| p.1))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let medians: Vec<f64> = (0..REGRET_CHECKPOINTS.len())
        .map(|i| median(&regrets.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect();
    let fit = &preset.truth;
    let bound = TheoryBound::for_problem(
        fit.q_bound,
        LearnerConfig::new(horizon, 25, 1, 0).fit.lambda,
        preset.space.norm_bound(),
        fit.n_controllers(),
        fit.dim(),
        THEORY_DELTA,
    )
    .fit_b(&[(REGRET_CHECKPOINTS[0], medians[0])]);
    let theory = REGRET_CHECKPOINTS.iter().map(|&t| bound.value(t as f64)).collect();
    Ok(RegretStudy {
        seeds: seeds.to_vec(),
        regrets,
        medians,
        bound,
        theory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rq1Seed {
    pub seed: u64,
    pub correct: f64,
    pub reward: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rq1Study {
    pub seeds: Vec<Rq1Seed>,
    /// Correct-controller probability at every checkpoint, per seed.
    pub curves: Vec<Vec<(usize, f64)>>,
}

impl Rq1Study {
    pub fn correct_seeds(&self) -> usize {
        self.seeds.iter().filter(|s| s.correct >= RQ1_MIN_CORRECT).count()
    }

    pub fn min_reward(&self) -> f64 {
        self.seeds.iter().map(|s| s.reward).fold(f64::INFINITY, f64::min)
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let need = required(RQ1_SEED_FRACTION, self.seeds.len());
        vec![
            Criterion {
                name: "seeds_with_correct_prob_at_least_0.75".into(),
                value: self.correct_seeds() as f64,
                threshold: need as f64,
                pass: self.correct_seeds() >= need,
            },
            Criterion {
                name: "min_reward_last_100_rounds".into(),
                value: self.min_reward(),
                threshold: RQ1_MIN_REWARD,
                pass: self.min_reward() >= RQ1_MIN_REWARD,
            },
        ]
    }

    pub fn table(&self) -> Csv {
        let mut csv = Csv::new(["seed", "correct_prob", "reward", "regret"]);
        for s in &self.seeds {
            csv.push(vec![s.seed.to_string(), fmt_sig9(s.correct), fmt_sig9(s.reward), fmt_sig9(s.regret)]);
        }
        csv
    }

    pub fn curve_table(&self) -> Csv {
        let mut csv = Csv::new(["seed", "round", "correct_prob"]);
        for (s, curve) in self.seeds.iter().zip(&self.curves) {
            for (round, p) in curve {
                csv.push(vec![s.seed.to_string(), round.to_string(), fmt_sig9(*p)]);
            }
        }
        csv
    }
}

/// Active learning on `rq1_4ctrl`. Reward is the expected fraction of
/// non-violating runs under the monitor's choice, averaged over the
/// checkpoints inside the last reward window.
pub fn rq1_study(seeds: &[u64]) -> Result<Rq1Study> {
    let preset = make_preset("rq1_4ctrl")?;
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnerConfig::new(RQ1_ROUNDS, RQ1_RETRAIN, RQ1_RETRAIN, seed);
            let (monitor, trace) = run(&cfg, &preset.truth, &preset.space)?;
            let mut curve = Vec::new();
            let mut rewards = Vec::new();
            for cp in &trace.checkpoints {
                curve.push((cp.round, correct_controller_probability(&cp.monitor, &preset.truth, &preset.space)?));
                if cp.round > RQ1_ROUNDS - RQ1_REWARD_WINDOW {
                    rewards.push(expected_reward(&cp.monitor, &preset.truth, &preset.space)?);
                }
            }
            let seed_result = Rq1Seed {
                seed,
                correct: correct_controller_probability(&monitor, &preset.truth, &preset.space)?,
                reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
                regret: crate::eval::true_regret(&monitor, &preset.truth, &preset.space)?,
            };
            Ok((seed_result, curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let (seeds, curves) = results.into_iter().unzip();
    Ok(Rq1Study { seeds, curves })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rq3Study {
    /// `(seed, active regret, passive regret)`.
    pub pairs: Vec<(u64, f64, f64)>,
}

impl Rq3Study {
    pub fn wins(&self) -> usize {
        self.pairs.iter().filter(|(_, a, p)| a <= p).count()
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let need = required(RQ3_SEED_FRACTION, self.pairs.len());
        vec![Criterion {
            name: "seeds_active_regret_at_most_passive".into(),
            value: self.wins() as f64,
            threshold: need as f64,
            pass: self.wins() >= need,
        }]
    }

    pub fn table(&self) -> Csv {
        let mut csv = Csv::new(["seed", "active_regret", "passive_regret"]);
        for (s, a, p) in &self.pairs {
            csv.push(vec![s.to_string(), fmt_sig9(*a), fmt_sig9(*p)]);
        }
        csv
    }
}

/// Active against passive learning on `rq1_4ctrl` at the same budget.
pub fn rq3_study(seeds: &[u64]) -> Result<Rq3Study> {
    let preset = make_preset("rq1_4ctrl")?;
    let pairs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnerConfig::new(RQ1_ROUNDS, RQ1_RETRAIN, RQ1_ROUNDS, seed);
            let (a, p) = active_vs_passive(&preset, &cfg)?;
            Ok((seed, a, p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rq3Study { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRow {
    pub size: usize,
    pub avg_reward: f64,
    pub fp_rate: f64,
    pub fail_safe_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rq4Study {
    pub seeds: Vec<u64>,
    /// One row per ensemble size, per seed.
    pub rows: Vec<Vec<SizeRow>>,
}

impl Rq4Study {
    pub fn wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|rows| rows.windows(2).all(|w| w[1].fail_safe_rate <= w[0].fail_safe_rate))
            .count()
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let need = required(RQ4_SEED_FRACTION, self.seeds.len());
        vec![Criterion {
            name: "seeds_fail_safe_rate_nonincreasing_in_size".into(),
            value: self.wins() as f64,
            threshold: need as f64,
            pass: self.wins() >= need,
        }]
    }

    pub fn table(&self) -> Csv {
        let mut csv = Csv::new(["seed", "size", "tau", "avg_reward", "fp_rate", "fail_safe_rate"]);
        for (seed, rows) in self.seeds.iter().zip(&self.rows) {
            for r in rows {
                csv.push(vec![
                    seed.to_string(),
                    r.size.to_string(),
                    fmt_sig9(RQ4_TAU),
                    fmt_sig9(r.avg_reward),
                    fmt_sig9(r.fp_rate),
                    fmt_sig9(r.fail_safe_rate),
                ]);
            }
        }
        csv
    }
}

/// Ensemble-size study on `scenario1_like_unbiased` at a fixed threshold.
/// Each seed trains and evaluates all sizes with the same learner and
/// episode seeds.
pub fn rq4_study(seeds: &[u64]) -> Result<Rq4Study> {
    let preset: Preset = make_preset("scenario1_like_unbiased")?;
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnerConfig::new(RQ4_ROUNDS, 25, RQ4_ROUNDS, seed);
            let episodes = EpisodeConfig {
                episodes: RQ4_EPISODES,
                steps: RQ4_STEPS,
                seed: derive_seed(seed, 1),
            };
            let sweeps = ensemble_size_study(&preset, &RQ4_SIZES, &cfg, &[RQ4_TAU], &episodes)?;
            Ok(sweeps
                .iter()
                .map(|s| SizeRow {
                    size: s.size,
                    avg_reward: s.rows[0].avg_reward,
                    fp_rate: s.rows[0].fp_rate,
                    fail_safe_rate: s.rows[0].fail_safe_rate,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rq4Study {
        seeds: seeds.to_vec(),
        rows,
    })
}
