//! Experiment configuration: TOML parsing, validation, and defaults.

use crate::env::RuleKind;
use crate::games::{EnvParams, GameKind};
use crate::learners::Variant;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Tabular,
    A2c,
    Rule,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub learner: LearnerKind,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Required when learner = "rule".
    pub rule: Option<RuleKind>,
}

fn default_variant() -> Variant {
    Variant::Full
}

/// Punishment mechanism parameters (c, delta, epsilon, L, beta).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    /// Unit cost c paid by the punisher.
    pub cost: f64,
    /// Unit penalty delta borne by the target.
    pub penalty: f64,
    /// Tolerance epsilon in the ineffectiveness condition.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Window length L in timesteps; 0 means one episode.
    #[serde(default)]
    pub window_length: usize,
    /// Entropy temperature beta of the defection distribution.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_beta() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    #[serde(default = "default_collect_episodes")]
    pub collect_episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tabular_alpha")]
    pub tabular_alpha: f64,
    #[serde(default = "default_actor_lr")]
    pub actor_lr: f64,
    #[serde(default = "default_critic_lr")]
    pub critic_lr: f64,
    #[serde(default = "default_entropy")]
    pub entropy_coeff: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_fit_steps")]
    pub fit_steps: usize,
    #[serde(default = "default_fit_batch")]
    pub fit_batch: usize,
    #[serde(default = "default_fit_lr")]
    pub fit_lr: f64,
    #[serde(default = "default_buffer_capacity")]
    pub buffer_capacity: usize,
    /// Harm amplitude of the untrained-predictor ablation.
    #[serde(default = "default_random_harm_amplitude")]
    pub random_harm_amplitude: f64,
}

fn default_collect_episodes() -> usize {
    300
}
fn default_gamma() -> f64 {
    0.99
}
fn default_tabular_alpha() -> f64 {
    0.05
}
fn default_actor_lr() -> f64 {
    3e-4
}
fn default_critic_lr() -> f64 {
    1e-3
}
fn default_entropy() -> f64 {
    0.01
}
fn default_hidden() -> usize {
    64
}
fn default_fit_steps() -> usize {
    20_000
}
fn default_fit_batch() -> usize {
    64
}
fn default_fit_lr() -> f64 {
    1e-2
}
fn default_buffer_capacity() -> usize {
    50_000
}
fn default_random_harm_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, joined under the output root.
    pub dir: String,
    /// Metric row cadence in episodes (1 = every episode).
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Whether per-window telemetry is written.
    #[serde(default = "default_true")]
    pub windows: bool,
}

fn default_log_every() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub environment: EnvParams,
    pub agents: Vec<AgentConfig>,
    pub mechanism: MechanismConfig,
    pub training: TrainingConfig,
    pub outputs: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.name.is_empty() {
            cfg.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".to_string());
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mechanism.cost < 0.0 {
            return Err(invalid("mechanism.cost", "must be >= 0"));
        }
        if self.mechanism.penalty < 0.0 {
            return Err(invalid("mechanism.penalty", "must be >= 0"));
        }
        if self.mechanism.tolerance < 0.0 {
            return Err(invalid("mechanism.tolerance", "must be >= 0"));
        }
        if self.mechanism.beta <= 0.0 {
            return Err(invalid("mechanism.beta", "must be > 0"));
        }
        if self.training.seeds.is_empty() {
            return Err(invalid("training.seeds", "must not be empty"));
        }
        if self.training.episodes == 0 {
            return Err(invalid("training.episodes", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.training.gamma) {
            return Err(invalid("training.gamma", "must be in [0, 1)"));
        }
        if self.training.buffer_capacity == 0 {
            return Err(invalid("training.buffer_capacity", "must be >= 1"));
        }
        if self.outputs.log_every == 0 {
            return Err(invalid("outputs.log_every", "must be >= 1"));
        }
        if self.agents.is_empty() {
            return Err(invalid("agents", "must not be empty"));
        }
        for (k, agent) in self.agents.iter().enumerate() {
            if agent.learner == LearnerKind::Rule && agent.rule.is_none() {
                return Err(invalid(
                    &format!("agents[{k}].rule"),
                    "rule learners need a rule kind",
                ));
            }
            if agent.learner == LearnerKind::Tabular
                && !matches!(self.environment.name, GameKind::Ipgg | GameKind::Mipgg)
            {
                return Err(invalid(
                    &format!("agents[{k}].learner"),
                    "tabular learners only apply to public goods games",
                ));
            }
        }
        if let Some(n) = self.environment.num_agents {
            if self.agents.len() != 1 && self.agents.len() != n {
                return Err(invalid(
                    "agents",
                    format!("need 1 (replicated) or {n} entries, got {}", self.agents.len()),
                ));
            }
        }
        Ok(())
    }

    /// Per-agent configs expanded to the environment's roster size.
    pub fn roster(&self, num_agents: usize) -> Result<Vec<AgentConfig>, ConfigError> {
        if self.agents.len() == 1 {
            return Ok(vec![self.agents[0].clone(); num_agents]);
        }
        if self.agents.len() != num_agents {
            return Err(invalid(
                "agents",
                format!(
                    "environment has {num_agents} agents but config lists {}",
                    self.agents.len()
                ),
            ));
        }
        Ok(self.agents.clone())
    }

    /// Effective window length: explicit L, or one episode when 0.
    pub fn window_length(&self, horizon: usize) -> usize {
        if self.mechanism.window_length == 0 {
            horizon
        } else {
            self.mechanism.window_length
        }
    }
}

/// Resolve the output root: explicit flag, else APC_OUT_ROOT, else ./out.
pub fn output_root(flag: Option<&str>) -> std::path::PathBuf {
    if let Some(path) = flag {
        return path.into();
    }
    if let Ok(path) = std::env::var("APC_OUT_ROOT") {
        if !path.is_empty() {
            return path.into();
        }
    }
    "out".into()
}
