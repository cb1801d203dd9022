//! Declarative run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envsim::{make_preset, Preset};
use crate::error::{Error, Result};
use crate::eval::EpisodeConfig;
use crate::learner::LearnerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub preset: String,
    /// Overrides the preset's fail-safe failure probability.
    #[serde(default)]
    pub p_fail_safe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub taus: Vec<f64>,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            taus: (0..=10).map(|i| i as f64 / 10.0).collect(),
            episodes: 200,
            steps: 50,
            seed: 0,
        }
    }
}

impl EvaluationConfig {
    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            episodes: self.episodes,
            steps: self.steps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub environment: EnvironmentConfig,
    pub learner: LearnerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Run metadata when the file is a manifest written by a previous run.
    #[serde(default, skip_serializing)]
    pub manifest: Option<toml::Table>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Build the preset, apply overrides and check every section against it.
    /// Returns the preset together with the config with all defaults filled in.
    pub fn resolve(mut self) -> Result<(Self, Preset)> {
        let mut preset = make_preset(&self.environment.preset)?;
        match self.environment.p_fail_safe {
            Some(p) if !(0.0..=1.0).contains(&p) => {
                return Err(Error::InvalidConfig(format!(
                    "environment.p_fail_safe = {p} is not a probability"
                )))
            }
            Some(p) => preset.truth.p_fail_safe = p,
            None => self.environment.p_fail_safe = Some(preset.truth.p_fail_safe),
        }
        self.learner.validate(preset.truth.n_controllers())?;
        let ev = &self.evaluation;
        if ev.taus.is_empty() {
            return Err(Error::InvalidConfig("evaluation.taus is empty".into()));
        }
        if ev.taus.iter().any(|t| !(0.0..=1.0).contains(t)) || ev.taus.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig(
                "evaluation.taus must lie in [0, 1] in ascending order".into(),
            ));
        }
        if ev.episodes == 0 || ev.steps == 0 {
            return Err(Error::InvalidConfig(
                "evaluation.episodes and evaluation.steps must be at least 1".into(),
            ));
        }
        self.manifest = None;
        Ok((self, preset))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
