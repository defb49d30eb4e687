//! Batch check of the tabular closed forms against the brute-force search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instances::random_instance;
use super::{
    brute_force_maximizer, closed_form_policy, regularizer_value, support_violation,
    value_aware_transition, RegularizerSpec, RegularizerVariant, MAX_ACTIONS, MAX_GRID,
    MAX_VISITED_STATES,
};
use crate::error::{Result, ScasError};
use crate::tabular::{empirical_models, kl_divergence, TabularPolicy, ValueTable};

pub const ALIGNMENT_KL_TOL: f64 = 1e-10;
pub const SUPPORT_TOL: f64 = 1e-6;
pub const ALPHA_ZERO_TOL: f64 = 1e-14;
pub const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub instances: usize,
    /// Upper bound; each instance draws its size from `2..=states`.
    pub states: usize,
    pub actions: usize,
    pub grid: usize,
    pub alphas: Vec<f64>,
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            states: 6,
            actions: 4,
            grid: 50,
            alphas: vec![0.0, 1.0, 5.0],
            stochastic: false,
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states > MAX_VISITED_STATES || self.actions > MAX_ACTIONS {
            return Err(ScasError::InstanceTooLarge(format!(
                "{} states × {} actions exceeds {MAX_VISITED_STATES} × {MAX_ACTIONS}",
                self.states, self.actions
            )));
        }
        if self.grid == 0 || self.grid > MAX_GRID {
            return Err(ScasError::InstanceTooLarge(format!(
                "grid {} outside 1..={MAX_GRID}",
                self.grid
            )));
        }
        if self.states < 2 || self.actions < 2 {
            return Err(ScasError::InvalidInput(
                "states and actions must both be at least 2".into(),
            ));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(ScasError::InvalidInput(
                "alphas must be a nonempty list of finite values ≥ 0".into(),
            ));
        }
        Ok(())
    }

    pub fn argmax_tol(&self) -> f64 {
        2.0 / self.grid as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub index: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_transitions: usize,
    pub alpha: f64,
    /// Largest OOD mass over both regularizer maximizers.
    pub support_violation: f64,
    /// `max_s KL(N*(·|s) ‖ M(·|s, π*))`; deterministic instances only.
    pub alignment_kl: Option<f64>,
    /// ∞-norm distance of each maximizer to `π*`; deterministic only.
    pub argmax_gap: Option<f64>,
    /// How far either maximizer's objective exceeds that of `π*`.
    pub objective_excess: Option<f64>,
    pub alpha_zero_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub instances: usize,
    pub max_support_violation: f64,
    pub max_alignment_kl: Option<f64>,
    pub max_argmax_gap: Option<f64>,
    pub max_objective_excess: Option<f64>,
    pub max_alpha_zero_gap: f64,
    pub passed: bool,
    pub reports: Vec<InstanceReport>,
}

fn sup_gap(a: &TabularPolicy, b: &TabularPolicy, states: impl Iterator<Item = usize>) -> f64 {
    states
        .flat_map(|s| {
            a.probs[s]
                .iter()
                .zip(&b.probs[s])
                .map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

fn max_opt(acc: Option<f64>, x: Option<f64>) -> Option<f64> {
    match (acc, x) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, None) => a,
        (None, b) => b,
    }
}

pub fn verify(cfg: &VerifyConfig) -> Result<VerificationSummary> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for index in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
        let n = rng.random_range(2..=cfg.states);
        let k = rng.random_range(2..=cfg.actions);
        let inst = random_instance(n, k, cfg.stochastic, &mut rng)?;
        let models = empirical_models((n, k), &inst.data)?;

        let zero = value_aware_transition(&models, &inst.values, 0.0)?;
        let alpha_zero_gap = models
            .visited_states()
            .iter()
            .flat_map(|&s| {
                zero.row(s)
                    .expect("visited")
                    .iter()
                    .zip(models.state_transition(s))
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);

        for &alpha in &cfg.alphas {
            let report = check_alpha(cfg, index, &inst.values, &models, &inst.data, alpha)?;
            reports.push(InstanceReport {
                alpha_zero_gap,
                ..report
            });
        }
    }

    let max_support_violation = reports
        .iter()
        .map(|r| r.support_violation)
        .fold(0.0, f64::max);
    let max_alignment_kl = reports.iter().map(|r| r.alignment_kl).fold(None, max_opt);
    let max_argmax_gap = reports.iter().map(|r| r.argmax_gap).fold(None, max_opt);
    let max_objective_excess = reports
        .iter()
        .map(|r| r.objective_excess)
        .fold(None, max_opt);
    let max_alpha_zero_gap = reports.iter().map(|r| r.alpha_zero_gap).fold(0.0, f64::max);
    let passed = max_support_violation <= SUPPORT_TOL
        && max_alignment_kl.is_none_or(|x| x <= ALIGNMENT_KL_TOL)
        && max_argmax_gap.is_none_or(|x| x <= cfg.argmax_tol())
        && max_objective_excess.is_none_or(|x| x <= OBJECTIVE_TOL)
        && max_alpha_zero_gap <= ALPHA_ZERO_TOL;
    Ok(VerificationSummary {
        instances: cfg.instances,
        max_support_violation,
        max_alignment_kl,
        max_argmax_gap,
        max_objective_excess,
        max_alpha_zero_gap,
        passed,
        reports,
    })
}

fn check_alpha(
    cfg: &VerifyConfig,
    index: usize,
    values: &ValueTable,
    models: &crate::tabular::EmpiricalModels,
    data: &crate::tabular::TabularDataset,
    alpha: f64,
) -> Result<InstanceReport> {
    let (n, k) = (models.n_states(), models.n_actions());
    let mut maximizers = Vec::new();
    for variant in [RegularizerVariant::RBar, RegularizerVariant::RBar1] {
        let spec = RegularizerSpec {
            variant,
            alpha,
            values: values.clone(),
        };
        let pi = brute_force_maximizer(&spec, models, data, cfg.grid)?;
        maximizers.push((spec, pi));
    }
    let violation = maximizers
        .iter()
        .map(|(_, pi)| support_violation(pi, models))
        .fold(0.0, f64::max);

    let (mut alignment_kl, mut argmax_gap, mut objective_excess) = (None, None, None);
    if models.is_deterministic() {
        let closed = closed_form_policy(models, values, alpha)?;
        let target = value_aware_transition(models, values, alpha)?;
        let mut kl = 0.0f64;
        for &s in models.visited_states() {
            let induced = models.policy_dynamics(s, &closed.probs[s]);
            kl = kl.max(kl_divergence(target.row(s).expect("visited"), &induced)?);
        }
        alignment_kl = Some(kl);
        let mut gap = 0.0f64;
        let mut excess = f64::NEG_INFINITY;
        for (spec, pi) in &maximizers {
            gap = gap.max(sup_gap(
                pi,
                &closed,
                models.visited_states().iter().copied(),
            ));
            let found = regularizer_value(spec, pi, models, data)?;
            let best = regularizer_value(spec, &closed, models, data)?;
            excess = excess.max(found - best);
        }
        argmax_gap = Some(gap);
        objective_excess = Some(excess);
    }
    Ok(InstanceReport {
        index,
        n_states: n,
        n_actions: k,
        n_transitions: data.transitions.len(),
        alpha,
        support_violation: violation,
        alignment_kl,
        argmax_gap,
        objective_excess,
        alpha_zero_gap: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_deterministic_batch_passes() {
        let cfg = VerifyConfig {
            instances: 5,
            ..VerifyConfig::default()
        };
        let summary = verify(&cfg).unwrap();
        assert!(summary.passed, "{summary:?}");
        assert_eq!(summary.reports.len(), 15);
        assert!(summary.max_argmax_gap.is_some());
    }

    #[test]
    fn stochastic_batch_has_no_argmax_gap() {
        let cfg = VerifyConfig {
            instances: 3,
            stochastic: true,
            ..VerifyConfig::default()
        };
        let summary = verify(&cfg).unwrap();
        assert!(summary.max_argmax_gap.is_none());
        assert!(summary.max_support_violation <= SUPPORT_TOL);
    }

    #[test]
    fn too_many_states_is_refused() {
        let cfg = VerifyConfig {
            states: 20,
            ..VerifyConfig::default()
        };
        assert!(matches!(verify(&cfg), Err(ScasError::InstanceTooLarge(_))));
    }
}
