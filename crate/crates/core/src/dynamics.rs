//! Deterministic one-step model `M_ω(s, a) → s'`, trained by mean squared
//! error in normalized state space. The target is the next state itself,
//! not a delta.

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{normalize, ContinuousDataset, TransitionArrays, ACTION_DIM, STATE_DIM};
use crate::error::{check_len, Result, ScasError};
use crate::nn::{checkpoint, AdamState, Mlp, MlpSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub hidden: Vec<usize>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 256,
            steps: 100_000,
            hidden: vec![64; 4],
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch == 0 || self.hidden.contains(&0) {
            return Err(ScasError::InvalidInput(format!(
                "invalid dynamics config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub net: Mlp,
    pub trained_steps: u64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

/// `[s | a]` rows.
pub fn model_input(s: ArrayView2<f64>, a: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[s, a]).expect("matching row counts")
}

impl DynamicsModel {
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        state_mean: Vec<f64>,
        state_std: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        check_len("dynamics state mean", STATE_DIM, state_mean.len())?;
        check_len("dynamics state std", STATE_DIM, state_std.len())?;
        let spec = MlpSpec::regression(STATE_DIM + ACTION_DIM, hidden, STATE_DIM)?;
        Ok(Self {
            net: Mlp::init(spec, rng, 1.0),
            trained_steps: 0,
            state_mean,
            state_std,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained_steps > 0
    }

    /// Prediction in normalized coordinates.
    pub fn predict_normalized(&self, s_norm: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_len("dynamics state", STATE_DIM, s_norm.len())?;
        check_len("dynamics action", ACTION_DIM, a.len())?;
        let x: Vec<f64> = s_norm.iter().chain(a).copied().collect();
        self.net.forward(&x)
    }

    /// Raw-state prediction: normalizes `s`, predicts, and maps back.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_len("dynamics state", STATE_DIM, s.len())?;
        let out = self.predict_normalized(&normalize(s, &self.state_mean, &self.state_std), a)?;
        Ok(out
            .iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((y, m), d)| y * d + m)
            .collect())
    }

    /// Gradient of `upstream · M(s, a)` with respect to `(s_norm, a)`.
    pub fn input_grad(
        &self,
        s_norm: &[f64],
        a: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("dynamics state", STATE_DIM, s_norm.len())?;
        check_len("dynamics action", ACTION_DIM, a.len())?;
        let x: Vec<f64> = s_norm.iter().chain(a).copied().collect();
        let (_, g) = self.net.grad(&x, upstream)?;
        Ok((g[..STATE_DIM].to_vec(), g[STATE_DIM..].to_vec()))
    }

    /// Mean over samples of `‖M(s, a) − s'‖²` in normalized space.
    pub fn mse(&self, data: &TransitionArrays) -> f64 {
        let pred = self
            .net
            .forward_batch(model_input(data.s.view(), data.a.view()).view());
        let diff = pred - &data.s2;
        diff.mapv(|d| d * d).sum() / data.len() as f64
    }

    pub fn matches_statistics(&self, mean: &[f64], std: &[f64]) -> bool {
        self.state_mean == mean && self.state_std == std
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        checkpoint::save(path, &self.net, seed, self.trained_steps)
    }

    /// Loads a checkpoint; statistics come from the dataset the model was
    /// trained on and are not stored in the parameter file.
    pub fn load(path: &Path, state_mean: Vec<f64>, state_std: Vec<f64>) -> Result<Self> {
        let (net, header) = checkpoint::load(path)?;
        if net.spec.input_dim() != STATE_DIM + ACTION_DIM || net.spec.output_dim() != STATE_DIM {
            return Err(ScasError::format(path, "not a dynamics-model checkpoint"));
        }
        Ok(Self {
            net,
            trained_steps: header.step,
            state_mean,
            state_std,
        })
    }
}

/// One Adam step on a minibatch; returns the minibatch loss.
fn train_step(model: &mut DynamicsModel, adam: &mut AdamState, batch: &TransitionArrays) -> f64 {
    let x = model_input(batch.s.view(), batch.a.view());
    let (pred, tape) = model.net.forward_batch_taped(x.view());
    let diff = pred - &batch.s2;
    let n = batch.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let upstream = diff * (2.0 / n);
    let mut grad = vec![0.0; model.net.num_params()];
    model
        .net
        .backward_batch(&tape, upstream.view(), Some(&mut grad), false);
    adam.step(&mut model.net.params, &grad, 1.0);
    model.trained_steps += 1;
    loss
}

/// Trains a fresh model for `config.steps` minibatch updates. Returns a
/// snapshot at each requested checkpoint step (steps beyond the run are
/// ignored) followed by the final model.
pub fn train_dynamics<R: Rng + ?Sized>(
    data: &ContinuousDataset,
    config: &DynamicsConfig,
    checkpoints: &[u64],
    rng: &mut R,
) -> Result<Vec<DynamicsModel>> {
    config.validate()?;
    if data.is_empty() {
        return Err(ScasError::InvalidInput("dataset is empty".into()));
    }
    let arrays = data.arrays();
    let mut model = DynamicsModel::init(
        &config.hidden,
        data.state_mean.clone(),
        data.state_std.clone(),
        rng,
    )?;
    let mut adam = AdamState::new(model.net.num_params(), config.lr);
    let mut wanted: Vec<u64> = checkpoints
        .iter()
        .copied()
        .filter(|&c| c <= config.steps)
        .collect();
    wanted.sort_unstable();
    wanted.dedup();

    let mut out = Vec::new();
    let mut next = wanted.iter().peekable();
    for step in 0..=config.steps {
        while next.peek().is_some_and(|&&c| c == step) {
            out.push(model.clone());
            next.next();
        }
        if step == config.steps {
            break;
        }
        let batch = arrays.sample(config.batch, rng);
        let loss = train_step(&mut model, &mut adam, &batch);
        if (step + 1) % 10_000 == 0 {
            log::info!("dynamics step {}: minibatch loss {loss:.3e}", step + 1);
        }
    }
    if out.last().map(|m| m.trained_steps) != Some(config.steps) {
        out.push(model);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_steps_returns_the_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = crate::env::PointNavConfig::default();
        let data =
            crate::env::collect_dataset(&cfg, &crate::env::Behavior::Random, 100, true, &mut rng)
                .unwrap();
        let dc = DynamicsConfig {
            steps: 0,
            ..DynamicsConfig::default()
        };
        let models = train_dynamics(&data, &dc, &[0], &mut rng).unwrap();
        assert_eq!(models.len(), 1);
        assert!(!models[0].is_trained());
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model =
            DynamicsModel::init(&[16, 16], vec![1.0, 2.0], vec![0.5, 1.5], &mut rng).unwrap();
        let s = [0.3, -0.7];
        let a = [0.4, -0.2];
        let target = [0.1, 0.5];
        let loss = |a: &[f64]| -> f64 {
            let y = model.predict_normalized(&s, a).unwrap();
            y.iter().zip(&target).map(|(y, t)| (y - t).powi(2)).sum()
        };
        let y = model.predict_normalized(&s, &a).unwrap();
        let up: Vec<f64> = y.iter().zip(&target).map(|(y, t)| 2.0 * (y - t)).collect();
        let (_, ga) = model.input_grad(&s, &a, &up).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut ap = a;
            ap[i] += h;
            let mut am = a;
            am[i] -= h;
            let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
            assert!(
                (fd - ga[i]).abs() <= 1e-3 * fd.abs().max(1e-3),
                "{fd} vs {}",
                ga[i]
            );
        }
        let check =
            finite_difference_check(&model.net, &[0.3, -0.7, 0.4, -0.2], &up, 1e-5).unwrap();
        assert!(check.max_rel_error() < 1e-4);
    }

    #[test]
    fn predictions_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = DynamicsModel::init(&[8], vec![0.0; 2], vec![1.0; 2], &mut rng).unwrap();
        let a = model.predict(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        let b = model.predict(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
