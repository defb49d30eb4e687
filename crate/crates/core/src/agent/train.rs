use std::ops::ControlFlow;

use rand::Rng;

use super::{AgentConfig, AgentState, MetricsRow, Policy, TrainMode};
use crate::dynamics::DynamicsModel;
use crate::env::ContinuousDataset;
use crate::error::{Result, ScasError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub mean_steps_out_of_ood: f64,
}

/// Hooks into the training loop. `evaluate` receives a frozen copy of the
/// actor; returning `Break` from `record` stops training after that row.
pub trait TrainObserver {
    fn evaluate(&mut self, _step: u64, _policy: &Policy) -> Result<Option<EvalSummary>> {
        Ok(None)
    }

    fn record(&mut self, _row: &MetricsRow) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Default)]
struct Window {
    critic_loss: (f64, u32),
    objective: (f64, u32),
    mean_q: (f64, u32),
    max_weight: Option<f64>,
    max_raw_weight: Option<f64>,
}

fn mean((sum, n): (f64, u32)) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

fn add(acc: &mut (f64, u32), v: f64) {
    acc.0 += v;
    acc.1 += 1;
}

fn fold_max(acc: &mut Option<f64>, v: Option<f64>) {
    if let Some(v) = v {
        *acc = Some(acc.map_or(v, |a| a.max(v)));
    }
}

/// Critic update every step; every `policy_freq` steps a policy update
/// followed by the target update. Behavior cloning updates only the actor,
/// once per step.
pub fn train<R: Rng + ?Sized>(
    data: &ContinuousDataset,
    dynamics: Option<DynamicsModel>,
    config: &AgentConfig,
    rng: &mut R,
    observer: &mut dyn TrainObserver,
) -> Result<AgentState> {
    config.validate()?;
    let dynamics = match config.mode {
        TrainMode::BehaviorCloning => None,
        TrainMode::Scas => dynamics,
    };
    if let Some(d) = &dynamics {
        if !d.matches_statistics(&data.state_mean, &data.state_std) {
            return Err(ScasError::NormalizationMismatch);
        }
    }
    if config.gradient_steps > 0
        && config.uses_dynamics()
        && !dynamics.as_ref().is_some_and(DynamicsModel::is_trained)
    {
        return Err(ScasError::UntrainedDynamics);
    }
    let arrays = data.arrays();
    let mut state = AgentState::init(
        config.clone(),
        dynamics,
        data.state_mean.clone(),
        data.state_std.clone(),
        rng,
    )?;

    let mut window = Window::default();
    while state.step < config.gradient_steps {
        let batch = arrays.sample(config.batch, rng);
        let stats = match config.mode {
            TrainMode::Scas => {
                add(&mut window.critic_loss, state.critic_update(&batch));
                if (state.step + 1) % config.policy_freq == 0 {
                    Some(state.policy_update(&batch, rng)?)
                } else {
                    None
                }
            }
            TrainMode::BehaviorCloning => Some(state.bc_update(&batch)),
        };
        if let Some(s) = stats {
            add(&mut window.objective, s.objective);
            if let Some(q) = s.mean_q {
                add(&mut window.mean_q, q);
            }
            fold_max(&mut window.max_weight, s.max_weight);
            fold_max(&mut window.max_raw_weight, s.max_raw_weight);
        }
        state.step += 1;

        let step = state.step;
        let eval_due = config.eval_every > 0 && step % config.eval_every == 0;
        if step % config.log_every == 0 || eval_due || step == config.gradient_steps {
            let eval = if eval_due {
                observer.evaluate(step, &state.policy())?
            } else {
                None
            };
            let w = std::mem::take(&mut window);
            let row = MetricsRow {
                step,
                critic_loss: mean(w.critic_loss),
                policy_objective: mean(w.objective),
                mean_q: mean(w.mean_q),
                max_weight: w.max_weight,
                eval_return: eval.map(|e| e.mean_return),
                eval_steps_out_of_ood: eval.map(|e| e.mean_steps_out_of_ood),
                max_raw_weight: w.max_raw_weight,
            };
            if observer.record(&row)?.is_break() {
                log::info!("training stopped by observer at step {step}");
                break;
            }
        }
    }
    Ok(state)
}
