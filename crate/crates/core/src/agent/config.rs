use serde::{Deserialize, Serialize};

use crate::error::{Result, ScasError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Scas,
    /// Actor regressed onto dataset actions by MSE; critics are not trained
    /// and no dynamics model is used.
    BehaviorCloning,
}

/// How the critic ensemble is reduced to `V(s) = Q(s, π(s))` inside the
/// regularizer weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueAggregation {
    Mean,
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub mode: TrainMode,
    pub alpha: f64,
    pub lambda: f64,
    /// State-perturbation std, in normalized state units.
    pub sigma: f64,
    pub gamma: f64,
    pub tau: f64,
    pub critic_lr: f64,
    /// Peak actor rate; decays on a cosine over `gradient_steps`.
    pub actor_lr: f64,
    pub batch: usize,
    pub policy_freq: u64,
    pub n_critics: usize,
    pub weight_clip: f64,
    pub gradient_steps: u64,
    /// Hidden widths shared by the actor and the critics.
    pub hidden: Vec<usize>,
    pub actor_final_scale: f64,
    pub value_aggregation: ValueAggregation,
    /// Metrics rows are emitted every `log_every` steps.
    pub log_every: u64,
    /// Evaluation cadence in steps; 0 disables evaluation.
    pub eval_every: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Scas,
            alpha: 5.0,
            lambda: 0.25,
            sigma: 0.003,
            gamma: 0.99,
            tau: 0.005,
            critic_lr: 3e-4,
            actor_lr: 2e-4,
            batch: 256,
            policy_freq: 2,
            n_critics: 4,
            weight_clip: 50.0,
            gradient_steps: 100_000,
            hidden: vec![64, 64],
            actor_final_scale: 0.01,
            value_aggregation: ValueAggregation::Mean,
            log_every: 1000,
            eval_every: 0,
        }
    }
}

impl AgentConfig {
    /// The behavior-cloning baseline with otherwise default settings.
    pub fn behavior_cloning() -> Self {
        Self {
            mode: TrainMode::BehaviorCloning,
            alpha: 0.0,
            lambda: 1.0,
            sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ScasError::InvalidInput(format!("agent config: {what}")));
        let finite = [
            self.alpha,
            self.lambda,
            self.sigma,
            self.gamma,
            self.tau,
            self.critic_lr,
            self.actor_lr,
            self.weight_clip,
            self.actor_final_scale,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite value");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.alpha < 0.0 || self.sigma < 0.0 {
            return bad("alpha and sigma must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if self.weight_clip <= 0.0 {
            return bad("weight_clip must be positive");
        }
        if self.critic_lr <= 0.0 || self.actor_lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        if self.batch == 0 || self.policy_freq == 0 || self.n_critics == 0 || self.log_every == 0 {
            return bad("batch, policy_freq, n_critics and log_every must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Whether training needs a dynamics model.
    pub fn uses_dynamics(&self) -> bool {
        self.mode == TrainMode::Scas && self.lambda > 0.0
    }
}
