//! Agent checkpoints: a directory of parameter files plus `manifest.json`.
//! Optimizer moments are not stored; a loaded agent acts and evaluates but
//! restarts Adam if trained further.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentConfig, AgentState};
use crate::dynamics::DynamicsModel;
use crate::error::{Result, ScasError};
use crate::nn::{checkpoint, AdamState, Mlp};

pub const BUNDLE_FORMAT: &str = "scas-bundle/1";
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format: String,
    pub config: AgentConfig,
    pub seed: u64,
    pub step: u64,
    pub dataset_hash: String,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub n_critics: usize,
    /// Training steps of the bundled dynamics model, if any.
    pub dynamics_steps: Option<u64>,
}

fn critic_file(k: usize) -> String {
    format!("critic_{k}.params")
}

fn target_file(k: usize) -> String {
    format!("target_critic_{k}.params")
}

pub fn save_bundle(
    dir: &Path,
    state: &AgentState,
    seed: u64,
    dataset_hash: &str,
) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| ScasError::io(dir, e))?;
    checkpoint::save(&dir.join("actor.params"), &state.actor, seed, state.step)?;
    for (k, (c, t)) in state.critics.iter().zip(&state.target_critics).enumerate() {
        checkpoint::save(&dir.join(critic_file(k)), c, seed, state.step)?;
        checkpoint::save(&dir.join(target_file(k)), t, seed, state.step)?;
    }
    if let Some(d) = &state.dynamics {
        d.save(&dir.join("dynamics.params"), seed)?;
    }
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.to_string(),
        config: state.config.clone(),
        seed,
        step: state.step,
        dataset_hash: dataset_hash.to_string(),
        state_mean: state.state_mean.clone(),
        state_std: state.state_std.clone(),
        n_critics: state.critics.len(),
        dynamics_steps: state.dynamics.as_ref().map(|d| d.trained_steps),
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(&path, text).map_err(|e| ScasError::io(&path, e))?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<(AgentState, BundleManifest)> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| ScasError::io(&path, e))?;
    let manifest: BundleManifest =
        serde_json::from_slice(&bytes).map_err(|e| ScasError::format(&path, e.to_string()))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(ScasError::format(&path, "unsupported bundle format"));
    }
    manifest.config.validate()?;
    let load = |name: String| -> Result<Mlp> { Ok(checkpoint::load(&dir.join(name))?.0) };
    let actor = load("actor.params".into())?;
    let critics: Vec<Mlp> = (0..manifest.n_critics)
        .map(|k| load(critic_file(k)))
        .collect::<Result<_>>()?;
    let target_critics: Vec<Mlp> = (0..manifest.n_critics)
        .map(|k| load(target_file(k)))
        .collect::<Result<_>>()?;
    let dynamics = manifest
        .dynamics_steps
        .map(|_| {
            DynamicsModel::load(
                &dir.join("dynamics.params"),
                manifest.state_mean.clone(),
                manifest.state_std.clone(),
            )
        })
        .transpose()?;
    let cfg = &manifest.config;
    let state = AgentState {
        actor_adam: AdamState::new(actor.num_params(), cfg.actor_lr),
        critic_adams: critics
            .iter()
            .map(|c| AdamState::new(c.num_params(), cfg.critic_lr))
            .collect(),
        config: cfg.clone(),
        actor,
        critics,
        target_critics,
        dynamics,
        step: manifest.step,
        state_mean: manifest.state_mean.clone(),
        state_std: manifest.state_std.clone(),
    };
    Ok((state, manifest))
}
