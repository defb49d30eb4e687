use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::point_nav::{env_reset, env_step, PointNavConfig, StartMode};
use crate::error::{Result, ScasError};

pub const DEFAULT_PERTURB_MAGNITUDE: f64 = 0.5;

/// Gaussian action noise injected at `perturb_steps` step indices drawn
/// uniformly without replacement from `0..max_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbProtocol {
    pub noise_magnitude: f64,
    pub perturb_steps: usize,
}

impl PerturbProtocol {
    pub fn new(perturb_steps: usize) -> Self {
        Self {
            noise_magnitude: DEFAULT_PERTURB_MAGNITUDE,
            perturb_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    /// `s_0 … s_T`.
    pub states: Vec<Vec<f64>>,
    pub policy_actions: Vec<Vec<f64>>,
    pub executed_actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub episode_return: f64,
    pub reached_goal: bool,
    /// Steps taken before the first state outside the hole; the episode
    /// length when the agent never leaves.
    pub steps_out_of_ood: usize,
    pub left_ood: bool,
    pub perturb_steps: usize,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn run_episode<R: Rng + ?Sized>(
    config: &PointNavConfig,
    policy: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    protocol: Option<&PerturbProtocol>,
    mode: StartMode,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let mut perturb_at = vec![false; config.max_steps];
    let mut noise = None;
    if let Some(p) = protocol {
        if p.perturb_steps > config.max_steps {
            return Err(ScasError::InvalidInput(format!(
                "perturb_steps {} exceeds max_steps {}",
                p.perturb_steps, config.max_steps
            )));
        }
        // Zero steps draw nothing, so the run matches one without a protocol.
        if p.perturb_steps > 0 {
            for i in index::sample(rng, config.max_steps, p.perturb_steps) {
                perturb_at[i] = true;
            }
        }
        noise = Some(
            Normal::new(0.0, p.noise_magnitude)
                .map_err(|e| ScasError::InvalidInput(format!("noise magnitude: {e}")))?,
        );
    }

    let mut state = env_reset(config, mode, rng)?;
    let mut trace = EpisodeTrace {
        states: vec![state.clone()],
        policy_actions: Vec::new(),
        executed_actions: Vec::new(),
        rewards: Vec::new(),
        episode_return: 0.0,
        reached_goal: false,
        steps_out_of_ood: 0,
        left_ood: !config.in_hole(&state),
        perturb_steps: protocol.map_or(0, |p| p.perturb_steps),
    };
    for &perturbed in &perturb_at {
        let action = policy(&state);
        let mut executed = action.clone();
        if perturbed {
            let noise = noise.as_ref().expect("protocol present");
            for a in &mut executed {
                *a = (*a + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        let out = env_step(config, &state, &executed, rng)?;
        if !trace.left_ood {
            trace.steps_out_of_ood += 1;
            trace.left_ood = !config.in_hole(&out.next_state);
        }
        trace.policy_actions.push(action);
        trace.executed_actions.push(executed);
        trace.rewards.push(out.reward);
        trace.episode_return += out.reward;
        trace.states.push(out.next_state.clone());
        state = out.next_state;
        if out.done {
            trace.reached_goal = true;
            break;
        }
    }
    Ok(trace)
}
