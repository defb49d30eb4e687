//! The JSON run configuration. Every field has a default; unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scas_core::agent::AgentConfig;
use scas_core::dynamics::DynamicsConfig;
use scas_core::env::{Behavior, PointNavConfig, StartMode};
use scas_core::scas_tabular::verify::VerifyConfig;

use crate::error::CliError;

/// Gain of the default behavior controller. Deliberately slower than the
/// greedy controller, so the dataset is suboptimal.
pub const DEFAULT_BEHAVIOR_GAIN: f64 = 0.3;
/// Action noise of the default behavior policy.
pub const DEFAULT_BEHAVIOR_NOISE: f64 = 0.3;
pub const DEFAULT_DATASET_SIZE: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPartConfig {
    pub behavior: Behavior,
    pub n_transitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Collected in order and concatenated.
    pub parts: Vec<DataPartConfig>,
    pub exclude_hole: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            parts: vec![DataPartConfig {
                behavior: Behavior::ScriptedPd {
                    gain: DEFAULT_BEHAVIOR_GAIN,
                    noise_std: DEFAULT_BEHAVIOR_NOISE,
                },
                n_transitions: DEFAULT_DATASET_SIZE,
            }],
            exclude_hole: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: StartMode,
    /// Absent means no perturbation protocol at all.
    pub perturb_steps: Option<usize>,
    pub episodes: usize,
    /// Number of evaluation seeds, expanded as `seed + i`.
    pub seeds: usize,
    /// Episodes per start mode for the periodic evaluation during training.
    pub training_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: StartMode::OodHole,
            perturb_steps: None,
            episodes: 200,
            seeds: 1,
            training_episodes: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    Lambda,
    Sigma,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Sigma => "sigma",
        }
    }

    pub fn apply(self, agent: &mut AgentConfig, value: f64) {
        match self {
            SweepParameter::Alpha => agent.alpha = value,
            SweepParameter::Lambda => agent.lambda = value,
            SweepParameter::Sigma => agent.sigma = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::Alpha,
            values: Vec::new(),
            seeds: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub env: PointNavConfig,
    pub data: DataConfig,
    pub dataset_path: Option<PathBuf>,
    pub dynamics: DynamicsConfig,
    /// Steps at which extra dynamics checkpoints are written.
    pub dynamics_checkpoints: Vec<u64>,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
    pub verify: VerifyConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate()?;
        self.dynamics.validate()?;
        self.agent.validate()?;
        if self.data.parts.is_empty() || self.data.parts.iter().any(|p| p.n_transitions == 0) {
            return Err(CliError::Usage(
                "data.parts must be nonempty with positive sizes".into(),
            ));
        }
        if self.eval.seeds == 0 {
            return Err(CliError::Usage("eval.seeds must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.agent.alpha, 5.0);
        assert_eq!(cfg.agent.lambda, 0.25);
        assert_eq!(cfg.agent.n_critics, 4);
        assert_eq!(cfg.dynamics.lr, 1e-3);
        assert!(cfg.seed.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"agent": {"alpah": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"env": {"goal": [1, 1], "colour": 3}}"#).is_err());
    }

    #[test]
    fn partial_documents_override_only_what_they_name() {
        let cfg = RunConfig::from_json(r#"{"seed": 3, "agent": {"lambda": 0.0}}"#).unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.agent.lambda, 0.0);
        assert_eq!(cfg.agent.alpha, 5.0);
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        assert!(matches!(
            RunConfig::default().require_seed(),
            Err(CliError::Usage(_))
        ));
    }
}
