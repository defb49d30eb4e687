use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScasError};

/// Tolerance for "rows sum to one" checks on stored distributions.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Default convergence tolerance of the value solvers.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
/// Above this many states policy evaluation switches from LU to sweeps.
pub const DIRECT_SOLVE_MAX_STATES: usize = 512;

/// A finite, discounted MDP. Indexing is `transition[s][a][s']`,
/// `reward[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    discount: f64,
    initial_dist: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    discount: f64,
    initial_dist: Vec<f64>,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = ScasError;

    fn try_from(raw: RawMdp) -> Result<Self> {
        let mdp = TabularMdp::new(raw.transition, raw.reward, raw.discount, raw.initial_dist)?;
        if mdp.n_states != raw.n_states || mdp.n_actions != raw.n_actions {
            return Err(ScasError::InvalidInput(format!(
                "declared shape ({}, {}) disagrees with tensors ({}, {})",
                raw.n_states, raw.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for RawMdp {
    fn from(m: TabularMdp) -> Self {
        RawMdp {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.transition,
            reward: m.reward,
            discount: m.discount,
            initial_dist: m.initial_dist,
        }
    }
}

pub(crate) fn check_distribution(row: &[f64], tol: f64, what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(ScasError::InvalidInput(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(ScasError::InvalidInput(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(ScasError::InvalidInput(
                "MDP needs at least one state".into(),
            ));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(ScasError::InvalidInput(
                "MDP needs at least one action".into(),
            ));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(ScasError::InvalidInput(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        if reward.len() != n_states || initial_dist.len() != n_states {
            return Err(ScasError::InvalidInput(
                "reward and initial distribution must cover every state".into(),
            ));
        }
        for s in 0..n_states {
            if transition[s].len() != n_actions || reward[s].len() != n_actions {
                return Err(ScasError::InvalidInput(format!(
                    "state {s} does not list {n_actions} actions"
                )));
            }
            if reward[s].iter().any(|r| !r.is_finite()) {
                return Err(ScasError::InvalidInput(format!("non-finite reward at {s}")));
            }
            for a in 0..n_actions {
                if transition[s][a].len() != n_states {
                    return Err(ScasError::InvalidInput(format!(
                        "P[{s}][{a}] has {} entries, expected {n_states}",
                        transition[s][a].len()
                    )));
                }
                check_distribution(&transition[s][a], STOCHASTIC_TOL, &format!("P[{s}][{a}]"))?;
            }
        }
        check_distribution(&initial_dist, STOCHASTIC_TOL, "initial distribution")?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            initial_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// True when every `P[s][a]` is one-hot.
    pub fn is_deterministic(&self) -> bool {
        self.transition
            .iter()
            .flatten()
            .all(|row| row.iter().filter(|&&p| p > 0.0).count() == 1)
    }

    fn q_backup(&self, values: &[f64], s: usize, a: usize) -> f64 {
        let next: f64 = self.transition[s][a]
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum();
        self.reward[s][a] + self.discount * next
    }

    /// `(T^π V)(s)`.
    pub fn policy_backup(&self, pi: &TabularPolicy, values: &[f64]) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| pi.probs[s][a] * self.q_backup(values, s, a))
                    .sum()
            })
            .collect()
    }

    /// `(T* V)(s)`.
    pub fn optimal_backup(&self, values: &[f64]) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.q_backup(values, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// `probs[s][a] = π(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.probs.len() != n_states {
            return Err(ScasError::InvalidInput(format!(
                "policy covers {} states, MDP has {n_states}",
                self.probs.len()
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(ScasError::InvalidInput(format!(
                    "policy row {s} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            check_distribution(row, STOCHASTIC_TOL, &format!("π(·|{s})"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
}

impl ValueTable {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ScasError::InvalidInput(
                "value table has non-finite entries".into(),
            ));
        }
        Ok(Self { v })
    }
}

/// One `(s, a, r, s')` record of a tabular dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub transitions: Vec<TabularTransition>,
}

impl TabularDataset {
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(ScasError::InvalidInput("dataset is empty".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.s >= n_states || t.s2 >= n_states || t.a >= n_actions {
                return Err(ScasError::InvalidInput(format!(
                    "transition {i} ({}, {}, {}) out of bounds",
                    t.s, t.a, t.s2
                )));
            }
            if !t.r.is_finite() {
                return Err(ScasError::InvalidInput(format!(
                    "transition {i} has non-finite reward"
                )));
            }
        }
        Ok(())
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `V^π` of `pi`, accurate to `tol` in Bellman residual.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &TabularPolicy, tol: f64) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(ScasError::InvalidInput("tolerance must be positive".into()));
    }
    pi.validate(mdp.n_states, mdp.n_actions)?;
    let n = mdp.n_states;
    let gamma = mdp.discount;

    let r_pi: Vec<f64> = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| pi.probs[s][a] * mdp.reward[s][a])
                .sum()
        })
        .collect();

    if gamma == 0.0 {
        return ValueTable::new(r_pi);
    }

    if n <= DIRECT_SOLVE_MAX_STATES {
        // (I − γ P_π) V = R_π
        let mut lhs = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for a in 0..mdp.n_actions {
                let w = pi.probs[s][a];
                if w == 0.0 {
                    continue;
                }
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    lhs[(s, s2)] -= gamma * w * p;
                }
            }
        }
        let v = lhs
            .lu()
            .solve(&DVector::from_vec(r_pi))
            .ok_or_else(|| ScasError::InvalidInput("singular policy-evaluation system".into()))?;
        return ValueTable::new(v.iter().copied().collect());
    }

    let mut v = vec![0.0; n];
    loop {
        let next = mdp.policy_backup(pi, &v);
        let residual = sup_distance(&next, &v);
        v = next;
        // ‖T V_k − V_k‖ ≤ ε(1−γ)/γ keeps the residual of V_{k+1} below ε.
        if residual * gamma <= tol * (1.0 - gamma) {
            return ValueTable::new(v);
        }
    }
}

/// Value iteration to within `tol` (sup norm) of `V*`.
pub fn optimal_values(mdp: &TabularMdp, tol: f64) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(ScasError::InvalidInput("tolerance must be positive".into()));
    }
    let gamma = mdp.discount;
    let mut v = vec![0.0; mdp.n_states];
    loop {
        let next = mdp.optimal_backup(&v);
        let change = sup_distance(&next, &v);
        v = next;
        if gamma == 0.0 || change * gamma <= tol * (1.0 - gamma) {
            return ValueTable::new(v);
        }
    }
}

/// `KL(p ‖ q)` with `0·log(0/q) = 0`; `+∞` when `supp(p) ⊄ supp(q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(ScasError::InvalidInput(format!(
            "KL arguments have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, 1e-9, "KL argument p")?;
    check_distribution(q, 1e-9, "KL argument q")?;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave tiny negatives for p ≈ q.
    Ok(total.max(0.0))
}
