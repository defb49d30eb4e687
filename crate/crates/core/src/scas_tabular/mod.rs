//! Closed-form value-aware objects on tabular MDPs and a brute-force search
//! that checks them.
//!
//! With empirical models β, M, N of a dataset and a value table V:
//!
//! * `N*(s'|s) = exp(α V(s')) N(s'|s) / Z(s)` is the value-aware transition.
//! * `π*(a|s) ∝ exp(α V(M(s, a))) β(a|s)` maximizes both in-distribution
//!   regularizers when M is deterministic, and reproduces `N*` through M.
//! * The regularizers are dataset averages of `w(s, s') · log M(s'|s, π)`
//!   with `w = exp(α V(s'))/Z(s)` ([`RegularizerVariant::RBar`]) or
//!   `w = exp(α (V(s') − V(s)))` ([`RegularizerVariant::RBar1`]).

mod brute_force;
pub mod instances;
pub mod verify;

use serde::{Deserialize, Serialize};

pub use brute_force::{brute_force_maximizer, MAX_ACTIONS, MAX_GRID, MAX_VISITED_STATES};

use crate::error::{Result, ScasError};
use crate::tabular::{kl_divergence, EmpiricalModels, TabularDataset, TabularPolicy, ValueTable};

#[derive(Clone, Debug, PartialEq)]
pub struct ValueAwareTransition {
    /// `N*[s]`, defined for visited states only.
    pub probs: Vec<Option<Vec<f64>>>,
    pub alpha: f64,
    /// `Z(s) = Σ_{s'} exp(α V(s')) N(s'|s)`.
    pub z: Vec<Option<f64>>,
    /// `ln Z(s)`, finite even where `Z` itself overflows.
    pub log_z: Vec<Option<f64>>,
}

impl ValueAwareTransition {
    pub fn row(&self, s: usize) -> Option<&[f64]> {
        self.probs[s].as_deref()
    }
}

fn check_alpha_and_values(alpha: f64, values: &ValueTable, n_states: usize) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ScasError::InvalidInput(format!(
            "alpha must be ≥ 0, got {alpha}"
        )));
    }
    if values.v.len() != n_states {
        return Err(ScasError::InvalidInput(format!(
            "value table has {} entries, expected {n_states}",
            values.v.len()
        )));
    }
    if values.v.iter().any(|v| !v.is_finite()) {
        return Err(ScasError::InvalidInput(
            "value table has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Normalizes `exp(α·v_i)·base_i` over the support of `base`, shifting by the
/// largest exponent first. Returns the distribution and `ln Σ exp(α v) base`.
fn tilt(base: &[f64], exponents: impl Fn(usize) -> f64) -> (Vec<f64>, f64) {
    let shift = base
        .iter()
        .enumerate()
        .filter(|(_, &b)| b > 0.0)
        .map(|(i, _)| exponents(i))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if b > 0.0 {
                (exponents(i) - shift).exp() * b
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    (out, shift + total.ln())
}

pub fn value_aware_transition(
    models: &EmpiricalModels,
    values: &ValueTable,
    alpha: f64,
) -> Result<ValueAwareTransition> {
    let n = models.n_states();
    check_alpha_and_values(alpha, values, n)?;
    let mut probs = vec![None; n];
    let mut z = vec![None; n];
    let mut log_z = vec![None; n];
    for &s in models.visited_states() {
        let (row, lz) = tilt(models.state_transition(s), |s2| alpha * values.v[s2]);
        probs[s] = Some(row);
        z[s] = Some(lz.exp());
        log_z[s] = Some(lz);
    }
    Ok(ValueAwareTransition {
        probs,
        alpha,
        z,
        log_z,
    })
}

/// `α E_{s'∼q} V(s') − KL(q ‖ n)`, the per-state objective that `N*(·|s)`
/// maximizes. `−∞` when `q` puts mass outside the support of `n`.
pub fn transition_objective(
    q: &[f64],
    n_row: &[f64],
    values: &ValueTable,
    alpha: f64,
) -> Result<f64> {
    check_alpha_and_values(alpha, values, n_row.len())?;
    crate::error::check_len("transition objective", n_row.len(), q.len())?;
    let kl = kl_divergence(q, n_row)?;
    let gain: f64 = q.iter().zip(&values.v).map(|(p, v)| p * v).sum();
    Ok(alpha * gain - kl)
}

/// `π*(a|s) ∝ exp(α V(M(s, a))) β(a|s)`; requires deterministic empirical
/// dynamics. Unvisited states get a uniform row, which no objective reads.
pub fn closed_form_policy(
    models: &EmpiricalModels,
    values: &ValueTable,
    alpha: f64,
) -> Result<TabularPolicy> {
    let (n, k) = (models.n_states(), models.n_actions());
    check_alpha_and_values(alpha, values, n)?;
    if !models.is_deterministic() {
        return Err(ScasError::Precondition(
            "closed-form policy requires deterministic empirical dynamics".into(),
        ));
    }
    let mut pi = TabularPolicy::uniform(n, k);
    for &s in models.visited_states() {
        let succ: Vec<Option<usize>> = (0..k).map(|a| models.successor(s, a)).collect();
        let (row, _) = tilt(models.beta(s), |a| {
            alpha * values.v[succ[a].expect("β(a|s) > 0 implies an observed successor")]
        });
        pi.probs[s] = row;
    }
    Ok(pi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerVariant {
    /// Weight `exp(α V(s')) / Z(s)`.
    RBar,
    /// Weight `exp(α V(s')) / exp(α V(s))`.
    RBar1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerSpec {
    pub variant: RegularizerVariant,
    pub alpha: f64,
    pub values: ValueTable,
}

/// Per-state terms of a regularizer: `(s', Σ over dataset pairs of weight)`.
/// The dataset-level objective is `(1/|D|) Σ_s Σ_{s'} k(s, s') log M(s'|s, π)`.
pub(crate) fn successor_weights(
    spec: &RegularizerSpec,
    models: &EmpiricalModels,
    data: &TabularDataset,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = models.n_states();
    check_alpha_and_values(spec.alpha, &spec.values, n)?;
    let v = &spec.values.v;
    let log_norm: Vec<f64> = match spec.variant {
        RegularizerVariant::RBar => {
            let vat = value_aware_transition(models, &spec.values, spec.alpha)?;
            vat.log_z.iter().map(|z| z.unwrap_or(0.0)).collect()
        }
        RegularizerVariant::RBar1 => v.iter().map(|x| spec.alpha * x).collect(),
    };
    let mut pair_counts = vec![vec![0usize; n]; n];
    for t in &data.transitions {
        pair_counts[t.s][t.s2] += 1;
    }
    Ok((0..n)
        .map(|s| {
            pair_counts[s]
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(s2, &c)| (s2, c as f64 * (spec.alpha * v[s2] - log_norm[s]).exp()))
                .collect()
        })
        .collect())
}

/// Exact dataset expectation of the in-distribution regularizer; `−∞` when
/// some dataset pair has zero likelihood under `M(·|s, π)`.
pub fn regularizer_value(
    spec: &RegularizerSpec,
    pi: &TabularPolicy,
    models: &EmpiricalModels,
    data: &TabularDataset,
) -> Result<f64> {
    data.validate(models.n_states(), models.n_actions())?;
    let weights = successor_weights(spec, models, data)?;
    let mut total = 0.0;
    for (s, terms) in weights.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let next = models.policy_dynamics(s, &pi.probs[s]);
        for &(s2, k) in terms {
            if next[s2] <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += k * next[s2].ln();
        }
    }
    Ok(total / data.transitions.len() as f64)
}

/// `max_s Σ_a 1[β(a|s) = 0] π(a|s)` over visited states.
pub fn support_violation(pi: &TabularPolicy, models: &EmpiricalModels) -> f64 {
    models
        .visited_states()
        .iter()
        .map(|&s| {
            models
                .beta(s)
                .iter()
                .zip(&pi.probs[s])
                .filter(|(&b, _)| b == 0.0)
                .map(|(_, &p)| p)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
