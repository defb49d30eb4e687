//! Offline actor-critic with the value-aware state-correction regularizer.
//!
//! All batches hold normalized states. The actor maximizes
//! `(1 − λ)·Q̄/mean|Q̄| − λ·R₂` where
//! `R₂ = mean_i w_i ‖M(ŝ_i, π(ŝ_i)) − s'_i‖²`, `ŝ = s + σ·ε` and
//! `w_i = min(exp(α(V(s'_i) − V(s_i))), weight_clip)` is held constant.

mod bundle;
mod config;
mod metrics;
mod train;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{model_input, DynamicsModel};
use crate::env::{normalize, TransitionArrays, ACTION_DIM, STATE_DIM};
use crate::error::{check_len, Result, ScasError};
use crate::nn::{cosine_lr_multiplier, polyak_update, AdamState, Mlp, MlpSpec, OutputActivation};

pub use bundle::{load_bundle, save_bundle, BundleManifest, BUNDLE_FORMAT};
pub use config::{AgentConfig, TrainMode, ValueAggregation};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_COLUMNS};
pub use train::{train, EvalSummary, NoObserver, TrainObserver};

/// Floor on the Q-normalization divisor.
pub const Q_SCALE_FLOOR: f64 = 1e-6;

/// A frozen deterministic policy acting on raw environment states.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

impl Policy {
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("policy state", STATE_DIM, s.len())?;
        self.actor
            .forward(&normalize(s, &self.state_mean, &self.state_std))
    }
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub config: AgentConfig,
    pub actor: Mlp,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    pub dynamics: Option<DynamicsModel>,
    pub actor_adam: AdamState,
    pub critic_adams: Vec<AdamState>,
    pub step: u64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

/// Output of [`AgentState::scas_regularizer`].
#[derive(Clone, Debug)]
pub struct RegularizerOutput {
    pub value: f64,
    /// `∂R₂/∂φ` for the actor parameters.
    pub actor_grad: Vec<f64>,
    /// Clipped per-sample weights.
    pub weights: Array1<f64>,
    /// Largest weight before clipping.
    pub max_raw_weight: f64,
    pub perturbed_states: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyStats {
    /// `(1 − λ)·Q̄/mean|Q̄| − λ·R₂` on the batch, before the step.
    pub objective: f64,
    /// Batch mean of the critic-averaged `Q(s, π(s))`; absent in
    /// behavior cloning.
    pub mean_q: Option<f64>,
    pub max_weight: Option<f64>,
    pub max_raw_weight: Option<f64>,
}

pub fn actor_spec(hidden: &[usize]) -> Result<MlpSpec> {
    let mut widths = vec![STATE_DIM];
    widths.extend_from_slice(hidden);
    widths.push(ACTION_DIM);
    MlpSpec::new(
        widths,
        OutputActivation::TanhScaled {
            scale: vec![1.0; ACTION_DIM],
        },
    )
}

pub fn critic_spec(hidden: &[usize]) -> Result<MlpSpec> {
    MlpSpec::regression(STATE_DIM + ACTION_DIM, hidden, 1)
}

fn action_columns(grad: Array2<f64>) -> Array2<f64> {
    grad.slice(s![.., STATE_DIM..]).to_owned()
}

impl AgentState {
    pub fn init<R: Rng + ?Sized>(
        config: AgentConfig,
        dynamics: Option<DynamicsModel>,
        state_mean: Vec<f64>,
        state_std: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        check_len("agent state mean", STATE_DIM, state_mean.len())?;
        check_len("agent state std", STATE_DIM, state_std.len())?;
        if let Some(d) = &dynamics {
            if !d.matches_statistics(&state_mean, &state_std) {
                return Err(ScasError::NormalizationMismatch);
            }
        }
        let actor = Mlp::init(actor_spec(&config.hidden)?, rng, config.actor_final_scale);
        let cspec = critic_spec(&config.hidden)?;
        let critics: Vec<Mlp> = (0..config.n_critics)
            .map(|_| Mlp::init(cspec.clone(), rng, 1.0))
            .collect();
        let critic_adams = critics
            .iter()
            .map(|c| AdamState::new(c.num_params(), config.critic_lr))
            .collect();
        Ok(Self {
            actor_adam: AdamState::new(actor.num_params(), config.actor_lr),
            target_critics: critics.clone(),
            critics,
            critic_adams,
            actor,
            dynamics,
            step: 0,
            state_mean,
            state_std,
            config,
        })
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actor: self.actor.clone(),
            state_mean: self.state_mean.clone(),
            state_std: self.state_std.clone(),
        }
    }

    /// Action for a raw environment state.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("agent state", STATE_DIM, s.len())?;
        self.actor
            .forward(&normalize(s, &self.state_mean, &self.state_std))
    }

    /// `Q_k(s, a)` for every critic in `nets`, one column per critic.
    fn q_values(nets: &[Mlp], s: ArrayView2<f64>, a: ArrayView2<f64>) -> Array2<f64> {
        let x = model_input(s, a);
        let mut q = Array2::zeros((s.nrows(), nets.len()));
        for (k, net) in nets.iter().enumerate() {
            q.column_mut(k)
                .assign(&net.forward_batch(x.view()).column(0));
        }
        q
    }

    /// `V(s) = agg_k Q_k(s, π(s))` with the actor treated as constant.
    pub fn values(&self, s: ArrayView2<f64>) -> Array1<f64> {
        let a = self.actor.forward_batch(s);
        let q = Self::q_values(&self.critics, s, a.view());
        match self.config.value_aggregation {
            ValueAggregation::Mean => q.mean_axis(Axis(1)).expect("at least one critic"),
            ValueAggregation::Min => {
                q.map_axis(Axis(1), |r| r.fold(f64::INFINITY, |m, &v| m.min(v)))
            }
        }
    }

    /// Bellman targets `r + γ(1 − done)·min_k Q'_k(s', π(s'))`.
    pub fn critic_targets(&self, batch: &TransitionArrays) -> Array1<f64> {
        let a2 = self.actor.forward_batch(batch.s2.view());
        let tq = Self::q_values(&self.target_critics, batch.s2.view(), a2.view());
        let min_q = tq.map_axis(Axis(1), |r| r.fold(f64::INFINITY, |m, &v| m.min(v)));
        let gamma = self.config.gamma;
        let mut y = Array1::zeros(batch.len());
        for i in 0..batch.len() {
            y[i] = batch.r[i] + gamma * (1.0 - batch.done[i]) * min_q[i];
            debug_assert!(y[i].abs() <= batch.r[i].abs() + gamma * min_q[i].abs() + 1e-9);
        }
        y
    }

    /// One Adam step per critic on the squared Bellman error; returns the
    /// mean loss over critics.
    pub fn critic_update(&mut self, batch: &TransitionArrays) -> f64 {
        let y = self.critic_targets(batch);
        let x = model_input(batch.s.view(), batch.a.view());
        let n = batch.len() as f64;
        let mut total = 0.0;
        for (net, adam) in self.critics.iter_mut().zip(&mut self.critic_adams) {
            let (q, tape) = net.forward_batch_taped(x.view());
            let diff = &q.column(0) - &y;
            total += diff.mapv(|d| d * d).sum() / n;
            let upstream = (diff * (2.0 / n)).insert_axis(Axis(1));
            let mut grad = vec![0.0; net.num_params()];
            net.backward_batch(&tape, upstream.view(), Some(&mut grad), false);
            adam.step(&mut net.params, &grad, 1.0);
        }
        total / self.critics.len() as f64
    }

    /// Draws `ŝ = s + σ·ε` in normalized space; σ = 0 draws nothing.
    pub fn perturb_states<R: Rng + ?Sized>(&self, s: ArrayView2<f64>, rng: &mut R) -> Array2<f64> {
        let mut out = s.to_owned();
        if self.config.sigma > 0.0 {
            for v in out.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += self.config.sigma * e;
            }
        }
        out
    }

    /// Clipped weights and the largest raw weight.
    pub fn regularizer_weights(&self, batch: &TransitionArrays) -> (Array1<f64>, f64) {
        let v = self.values(batch.s.view());
        let v2 = self.values(batch.s2.view());
        let mut max_raw = f64::NEG_INFINITY;
        let w = Array1::from_iter(v.iter().zip(&v2).map(|(&v, &v2)| {
            let raw = (self.config.alpha * (v2 - v)).exp();
            max_raw = max_raw.max(raw);
            raw.min(self.config.weight_clip)
        }));
        (w, max_raw)
    }

    /// `R₂` and its actor gradient for fixed weights and perturbed states.
    pub fn weighted_alignment(
        &self,
        perturbed: ArrayView2<f64>,
        s2: ArrayView2<f64>,
        weights: &Array1<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let dynamics = self.trained_dynamics()?;
        let n = perturbed.nrows() as f64;
        let (a_hat, actor_tape) = self.actor.forward_batch_taped(perturbed);
        let (pred, dyn_tape) = dynamics
            .net
            .forward_batch_taped(model_input(perturbed, a_hat.view()).view());
        let mut err = pred - s2;
        let value = err
            .rows()
            .into_iter()
            .zip(weights)
            .map(|(r, w)| w * r.dot(&r))
            .sum::<f64>()
            / n;
        for (mut row, w) in err.rows_mut().into_iter().zip(weights) {
            row *= 2.0 * w / n;
        }
        let d_input = dynamics
            .net
            .backward_batch(&dyn_tape, err.view(), None, true)
            .expect("input gradient requested");
        let mut grad = vec![0.0; self.actor.num_params()];
        self.actor.backward_batch(
            &actor_tape,
            action_columns(d_input).view(),
            Some(&mut grad),
            false,
        );
        Ok((value, grad))
    }

    fn trained_dynamics(&self) -> Result<&DynamicsModel> {
        match &self.dynamics {
            Some(d) if d.is_trained() => Ok(d),
            _ => Err(ScasError::UntrainedDynamics),
        }
    }

    pub fn scas_regularizer<R: Rng + ?Sized>(
        &self,
        batch: &TransitionArrays,
        rng: &mut R,
    ) -> Result<RegularizerOutput> {
        self.trained_dynamics()?;
        if batch.is_empty() {
            return Err(ScasError::InvalidInput("empty batch".into()));
        }
        let (weights, max_raw_weight) = self.regularizer_weights(batch);
        let perturbed = self.perturb_states(batch.s.view(), rng);
        let (value, actor_grad) =
            self.weighted_alignment(perturbed.view(), batch.s2.view(), &weights)?;
        Ok(RegularizerOutput {
            value,
            actor_grad,
            weights,
            max_raw_weight,
            perturbed_states: perturbed,
        })
    }

    /// Value and actor gradient of `mean(Q̄)/mean|Q̄|`, the divisor held
    /// constant.
    pub fn normalized_q(&self, s: ArrayView2<f64>) -> (f64, f64, Vec<f64>) {
        let n = s.nrows() as f64;
        let k = self.critics.len() as f64;
        let (a, actor_tape) = self.actor.forward_batch_taped(s);
        let x = model_input(s, a.view());
        let mut q_bar = Array1::<f64>::zeros(s.nrows());
        let mut tapes = Vec::with_capacity(self.critics.len());
        for net in &self.critics {
            let (q, tape) = net.forward_batch_taped(x.view());
            q_bar += &q.column(0);
            tapes.push(tape);
        }
        q_bar /= k;
        let mean_q = q_bar.mean().expect("nonempty batch");
        let scale = (q_bar.mapv(f64::abs).sum() / n).max(Q_SCALE_FLOOR);
        let upstream = Array2::from_elem((s.nrows(), 1), 1.0 / (n * k * scale));
        let mut d_action = Array2::<f64>::zeros((s.nrows(), ACTION_DIM));
        for (net, tape) in self.critics.iter().zip(&tapes) {
            let g = net
                .backward_batch(tape, upstream.view(), None, true)
                .expect("input gradient requested");
            d_action += &g.slice(s![.., STATE_DIM..]);
        }
        let mut grad = vec![0.0; self.actor.num_params()];
        self.actor
            .backward_batch(&actor_tape, d_action.view(), Some(&mut grad), false);
        (mean_q / scale, mean_q, grad)
    }

    /// Ascends the combined objective with one Adam step on the actor, then
    /// Polyak-averages the target critics.
    pub fn policy_update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionArrays,
        rng: &mut R,
    ) -> Result<PolicyStats> {
        let lambda = self.config.lambda;
        let (q_term, mean_q, q_grad) = self.normalized_q(batch.s.view());
        let mut loss_grad: Vec<f64> = q_grad.iter().map(|g| -(1.0 - lambda) * g).collect();
        let mut objective = (1.0 - lambda) * q_term;
        let (mut max_weight, mut max_raw_weight) = (None, None);
        if lambda > 0.0 {
            let reg = self.scas_regularizer(batch, rng)?;
            for (g, r) in loss_grad.iter_mut().zip(&reg.actor_grad) {
                *g += lambda * r;
            }
            objective -= lambda * reg.value;
            max_weight = Some(reg.weights.fold(f64::NEG_INFINITY, |m, &w| m.max(w)));
            max_raw_weight = Some(reg.max_raw_weight);
        }
        let mult = cosine_lr_multiplier(self.step, self.config.gradient_steps);
        self.actor_adam
            .step(&mut self.actor.params, &loss_grad, mult);
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            polyak_update(&mut t.params, &c.params, self.config.tau);
        }
        Ok(PolicyStats {
            objective,
            mean_q: Some(mean_q),
            max_weight,
            max_raw_weight,
        })
    }

    /// Behavior-cloning step on `mean_i ‖π(s_i) − a_i‖²`.
    pub fn bc_update(&mut self, batch: &TransitionArrays) -> PolicyStats {
        let n = batch.len() as f64;
        let (a, tape) = self.actor.forward_batch_taped(batch.s.view());
        let diff = a - &batch.a;
        let loss = diff.mapv(|d| d * d).sum() / n;
        let upstream = diff * (2.0 / n);
        let mut grad = vec![0.0; self.actor.num_params()];
        self.actor
            .backward_batch(&tape, upstream.view(), Some(&mut grad), false);
        let mult = cosine_lr_multiplier(self.step, self.config.gradient_steps);
        self.actor_adam.step(&mut self.actor.params, &grad, mult);
        PolicyStats {
            objective: -loss,
            mean_q: None,
            max_weight: None,
            max_raw_weight: None,
        }
    }

    /// All network parameters in a fixed order, for equality checks.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.actor
            .params
            .iter()
            .chain(self.critics.iter().flat_map(|c| c.params.iter()))
            .chain(self.target_critics.iter().flat_map(|c| c.params.iter()))
    }
}

#[cfg(test)]
mod tests;
