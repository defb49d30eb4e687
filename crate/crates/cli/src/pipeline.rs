//! Seeded building blocks shared by the subcommands and the acceptance
//! harness. Each phase draws from its own ChaCha stream of the run seed, so
//! phases can be skipped or reused without shifting the others.

use std::ops::ControlFlow;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scas_core::agent::{
    self, AgentState, EvalSummary, MetricsRow, MetricsWriter, Policy, TrainObserver,
};
use scas_core::dynamics::{train_dynamics, DynamicsModel};
use scas_core::env::{collect_dataset, ContinuousDataset, StartMode};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::evaluate_policy;

const STREAM_DATA: u64 = 0;
const STREAM_DYNAMICS: u64 = 1;
const STREAM_AGENT: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_dataset(cfg: &RunConfig, seed: u64) -> Result<ContinuousDataset, CliError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, STREAM_DATA);
    let parts = cfg
        .data
        .parts
        .iter()
        .map(|p| {
            collect_dataset(
                &cfg.env,
                &p.behavior,
                p.n_transitions,
                cfg.data.exclude_hole,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = ContinuousDataset::concat(parts)?;
    data.metadata.seed = Some(seed);
    Ok(data)
}

/// Fails when a dataset was generated for a different environment.
pub fn check_dataset_env(cfg: &RunConfig, data: &ContinuousDataset) -> Result<(), CliError> {
    if data.metadata.env != cfg.env {
        return Err(CliError::Usage(
            "dataset was generated with a different env config".into(),
        ));
    }
    Ok(())
}

/// Trains the dynamics model when the agent needs one. Returns the
/// requested checkpoints followed by the final model, or nothing.
pub fn dynamics_phase(
    cfg: &RunConfig,
    data: &ContinuousDataset,
    seed: u64,
) -> Result<Vec<DynamicsModel>, CliError> {
    if !cfg.agent.uses_dynamics() {
        return Ok(Vec::new());
    }
    let mut rng = stream_rng(seed, STREAM_DYNAMICS);
    Ok(train_dynamics(
        data,
        &cfg.dynamics,
        &cfg.dynamics_checkpoints,
        &mut rng,
    )?)
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub metrics_path: Option<&'a Path>,
    /// Stop once a row's `|mean_q|` exceeds this bound.
    pub stop_when_q_exceeds: Option<f64>,
}

struct PipelineObserver<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    writer: Option<MetricsWriter>,
    rows: Vec<MetricsRow>,
    stop_when_q_exceeds: Option<f64>,
}

impl TrainObserver for PipelineObserver<'_> {
    /// Return over in-distribution starts and steps out of the hole over
    /// hole starts, each on `training_episodes` episodes.
    fn evaluate(&mut self, step: u64, policy: &Policy) -> scas_core::Result<Option<EvalSummary>> {
        let n = self.cfg.eval.training_episodes;
        if n == 0 {
            return Ok(None);
        }
        let eval_seed = self.seed.wrapping_add(step);
        let in_dist = evaluate_policy(
            &self.cfg.env,
            policy,
            StartMode::InDist,
            None,
            n,
            &[eval_seed],
        )?;
        let hole = evaluate_policy(
            &self.cfg.env,
            policy,
            StartMode::OodHole,
            None,
            n,
            &[eval_seed],
        )?;
        Ok(Some(EvalSummary {
            mean_return: in_dist.episode_return.mean,
            mean_steps_out_of_ood: hole.steps_out_of_ood.mean,
        }))
    }

    fn record(&mut self, row: &MetricsRow) -> scas_core::Result<ControlFlow<()>> {
        if let Some(w) = &mut self.writer {
            w.write(row)?;
        }
        self.rows.push(row.clone());
        let exceeded = self
            .stop_when_q_exceeds
            .zip(row.mean_q)
            .is_some_and(|(bound, q)| q.abs() > bound);
        Ok(if exceeded {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    }
}

pub struct TrainOutcome {
    pub agent: AgentState,
    pub rows: Vec<MetricsRow>,
}

pub fn train_agent(
    cfg: &RunConfig,
    data: &ContinuousDataset,
    seed: u64,
    dynamics: Option<DynamicsModel>,
    options: TrainOptions<'_>,
) -> Result<TrainOutcome, CliError> {
    let writer = options
        .metrics_path
        .map(MetricsWriter::create)
        .transpose()?;
    let mut observer = PipelineObserver {
        cfg,
        seed,
        writer,
        rows: Vec::new(),
        stop_when_q_exceeds: options.stop_when_q_exceeds,
    };
    let mut rng = stream_rng(seed, STREAM_AGENT);
    let state = agent::train(data, dynamics, &cfg.agent, &mut rng, &mut observer)?;
    Ok(TrainOutcome {
        agent: state,
        rows: observer.rows,
    })
}

/// `±2·R_max/(1 − γ)` with `R_max` the largest `|r|` in the data.
pub fn bounded_q_band(data: &ContinuousDataset, gamma: f64) -> f64 {
    2.0 * data.max_abs_reward() / (1.0 - gamma)
}
