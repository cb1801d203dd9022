//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 numerical failure.

pub mod config;
pub mod studies;
pub mod table;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{correct_controller_probability, threshold_sweep, true_regret, SweepRow};
use crate::learner::run;
use config::Config;
use studies::{study_seeds, summary_table, Criterion, Study};
use table::{fmt_sig9, parse_theta_table, theta_table, Csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ctxmon", version, about = "Learn and evaluate contextual runtime monitors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a monitor and write its trace, checkpoints, θ tables and sweep.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `learner.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate stored θ snapshots against the configured environment.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a preset study over several seeds and write a pass/fail summary.
    Reproduce {
        #[arg(value_enum)]
        which: Study,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_numeric() => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parse `args` and run the command. Errors go to stderr; the exit code is
/// returned.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let jobs = match command {
        Command::Learn { jobs, .. } | Command::Eval { jobs, .. } | Command::Reproduce { jobs, .. } => *jobs,
    };
    if jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Learn { config, out, seed, .. } => cmd_learn(config, out, *seed),
        Command::Eval { config, theta, out, .. } => cmd_eval(config, theta, out),
        Command::Reproduce {
            which,
            out,
            seeds,
            master_seed,
            ..
        } => cmd_reproduce(*which, out, *seeds, *master_seed),
    })
}

fn sweep_table(rows: &[SweepRow]) -> Csv {
    let mut csv = Csv::new(["tau", "avg_reward", "fp_rate", "fail_safe_rate"]);
    for r in rows {
        csv.push(vec![
            fmt_sig9(r.tau),
            fmt_sig9(r.avg_reward),
            fmt_sig9(r.fp_rate),
            fmt_sig9(r.fail_safe_rate),
        ]);
    }
    csv
}

fn write_manifest(out: &Path, command: &str, cfg: &Config) -> Result<()> {
    let mut text = String::from("[manifest]\n");
    text.push_str(&format!("command = \"{command}\"\n"));
    text.push_str(&format!("version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("seed = {}\n", cfg.learner.seed));
    text.push_str(&format!("config_sha256 = \"{}\"\n\n", cfg.hash()?));
    text.push_str(&cfg.to_toml()?);
    std::fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

/// Learn a monitor from `config_path` and write `trace.csv`,
/// `checkpoints.csv`, `theta_final.csv`, `theta_checkpoints.csv`,
/// `sweep.csv` and `manifest.toml` into `out`.
///
/// The manifest is itself a valid config that reruns the same experiment.
pub fn cmd_learn(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = Config::load(config_path)?;
    if let Some(s) = seed {
        cfg.learner.seed = s;
    }
    let (cfg, preset) = cfg.resolve()?;
    std::fs::create_dir_all(out)?;

    let (monitor, trace) = run(&cfg.learner, &preset.truth, &preset.space)?;

    let mut csv = Csv::new(["round", "context_id", "controller", "outcome", "score"]);
    for r in &trace.rows {
        csv.push(vec![
            r.round.to_string(),
            r.context_id.to_string(),
            r.controller.0.to_string(),
            u8::from(r.violated).to_string(),
            fmt_sig9(r.score),
        ]);
    }
    csv.write(&out.join("trace.csv"))?;

    let metrics = trace
        .checkpoints
        .par_iter()
        .map(|cp| {
            Ok((
                cp.round,
                true_regret(&cp.monitor, &preset.truth, &preset.space)?,
                correct_controller_probability(&cp.monitor, &preset.truth, &preset.space)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics_table(&metrics).write(&out.join("checkpoints.csv"))?;

    let last_round = trace.checkpoints.last().map_or(cfg.learner.rounds, |c| c.round);
    theta_table(&[(last_round, &monitor)]).write(&out.join("theta_final.csv"))?;
    let snaps: Vec<_> = trace.checkpoints.iter().map(|c| (c.round, &c.monitor)).collect();
    theta_table(&snaps).write(&out.join("theta_checkpoints.csv"))?;

    let rows = threshold_sweep(
        &monitor,
        &preset.truth,
        &preset.space,
        &preset.drift,
        &cfg.evaluation.taus,
        &cfg.evaluation.episode_config(),
    )?;
    sweep_table(&rows).write(&out.join("sweep.csv"))?;

    write_manifest(out, "learn", &cfg)
}

fn metrics_table(metrics: &[(usize, f64, f64)]) -> Csv {
    let mut csv = Csv::new(["round", "regret", "correct_prob"]);
    for (round, regret, correct) in metrics {
        csv.push(vec![round.to_string(), fmt_sig9(*regret), fmt_sig9(*correct)]);
    }
    csv
}

/// Evaluate every snapshot of a θ table: `metrics.csv` per round and
/// `sweep.csv` for the last snapshot.
pub fn cmd_eval(config_path: &Path, theta_path: &Path, out: &Path) -> Result<()> {
    let (cfg, preset) = Config::load(config_path)?.resolve()?;
    let snaps = parse_theta_table(&Csv::read(theta_path)?, cfg.learner.fit.q_bound)?;
    let (k, d) = (preset.truth.n_controllers(), preset.truth.dim());
    for (_, m) in &snaps {
        if m.n_controllers() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: m.n_controllers(),
            });
        }
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.dim(),
            });
        }
    }
    std::fs::create_dir_all(out)?;
    let metrics = snaps
        .par_iter()
        .map(|(round, m)| {
            Ok((
                *round,
                true_regret(m, &preset.truth, &preset.space)?,
                correct_controller_probability(m, &preset.truth, &preset.space)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics_table(&metrics).write(&out.join("metrics.csv"))?;

    let last = &snaps.last().expect("parsed table is nonempty").1;
    let rows = threshold_sweep(
        last,
        &preset.truth,
        &preset.space,
        &preset.drift,
        &cfg.evaluation.taus,
        &cfg.evaluation.episode_config(),
    )?;
    sweep_table(&rows).write(&out.join("sweep.csv"))?;
    write_manifest(out, "eval", &cfg)
}

/// Run a preset study. Per-seed tables are written before the summary so a
/// failing criterion still leaves the raw results on disk.
pub fn cmd_reproduce(which: Study, out: &Path, n_seeds: usize, master: u64) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be at least 1".into()));
    }
    std::fs::create_dir_all(out)?;
    let seeds = study_seeds(master, n_seeds);
    let criteria: Vec<Criterion> = match which {
        Study::Regret => {
            let s = studies::regret_study(&seeds)?;
            s.table().write(&out.join("regret.csv"))?;
            s.criteria()
        }
        Study::Rq1 => {
            let s = studies::rq1_study(&seeds)?;
            s.table().write(&out.join("rq1.csv"))?;
            s.curve_table().write(&out.join("rq1_curves.csv"))?;
            s.criteria()
        }
        Study::Rq3 => {
            let s = studies::rq3_study(&seeds)?;
            s.table().write(&out.join("rq3.csv"))?;
            s.criteria()
        }
        Study::Rq4 => {
            let s = studies::rq4_study(&seeds)?;
            s.table().write(&out.join("sizes.csv"))?;
            s.criteria()
        }
    };
    summary_table(&criteria).write(&out.join("summary.csv"))?;
    let manifest = format!(
        "[manifest]\ncommand = \"reproduce\"\nstudy = \"{}\"\nversion = \"{}\"\nmaster_seed = {master}\nseeds = {n_seeds}\n",
        which.name(),
        env!("CARGO_PKG_VERSION")
    );
    std::fs::write(out.join("manifest.toml"), manifest)?;
    for c in &criteria {
        println!(
            "{}: {} (threshold {}) {}",
            c.name,
            fmt_sig9(c.value),
            fmt_sig9(c.threshold),
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
