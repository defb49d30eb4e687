//! Random tabular instances for exercising the closed forms.
//!
//! Every visited state is observed under a nonempty, proper subset of the
//! actions, so β always has zero entries. In deterministic instances the
//! observed actions of a state lead to pairwise distinct successors; without
//! that the maximizer is not unique and no pointwise comparison is possible.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Result, ScasError};
use crate::tabular::{
    empirical_models, optimal_values, TabularDataset, TabularMdp, TabularTransition, ValueTable,
    DEFAULT_SOLVER_TOL,
};

pub const INSTANCE_DISCOUNT: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct TabularInstance {
    pub mdp: TabularMdp,
    pub data: TabularDataset,
    /// `V*` of `mdp`, the value table used in the weights.
    pub values: ValueTable,
}

/// Draws an instance with `n_states` states and `n_actions` actions.
pub fn random_instance<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<TabularInstance> {
    if n_states < 2 || n_actions < 2 {
        return Err(ScasError::InvalidInput(format!(
            "instances need at least 2 states and 2 actions, got {n_states}×{n_actions}"
        )));
    }
    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            let mut order: Vec<usize> = (0..n_states).collect();
            order.shuffle(rng);
            (0..n_actions)
                .map(|a| {
                    if stochastic {
                        random_sparse_distribution(n_states, rng)
                    } else {
                        let mut row = vec![0.0; n_states];
                        row[order[a % n_states]] = 1.0;
                        row
                    }
                })
                .collect()
        })
        .collect();
    let reward: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mdp = TabularMdp::new(
        transition,
        reward,
        INSTANCE_DISCOUNT,
        vec![1.0 / n_states as f64; n_states],
    )?;
    let values = optimal_values(&mdp, DEFAULT_SOLVER_TOL)?;

    loop {
        let data = random_dataset(&mdp, stochastic, rng);
        // A stochastic instance must also look stochastic in its data.
        if !stochastic || !empirical_models((n_states, n_actions), &data)?.is_deterministic() {
            return Ok(TabularInstance { mdp, data, values });
        }
    }
}

fn random_dataset<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    stochastic: bool,
    rng: &mut R,
) -> TabularDataset {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut sources: Vec<usize> = (0..n_states).filter(|_| rng.random_bool(0.75)).collect();
    if sources.is_empty() {
        sources.push(rng.random_range(0..n_states));
    }
    let mut transitions = Vec::new();
    for &s in &sources {
        // Distinct successors bound the subset size when states are scarce.
        let max_size = (n_actions - 1).min(if stochastic { n_actions } else { n_states });
        let size = rng.random_range(1..=max_size);
        let mut actions: Vec<usize> = (0..n_actions).collect();
        actions.shuffle(rng);
        let mut chosen = Vec::with_capacity(size);
        let mut used = vec![false; n_states];
        for &a in &actions {
            if chosen.len() == size {
                break;
            }
            if !stochastic {
                let succ = sample_index(mdp.transition(s, a), rng);
                if used[succ] {
                    continue;
                }
                used[succ] = true;
            }
            chosen.push(a);
        }
        for &a in &chosen {
            let row = mdp.transition(s, a);
            let copies = if stochastic {
                rng.random_range(3..=8)
            } else {
                rng.random_range(1..=4)
            };
            for _ in 0..copies {
                transitions.push(TabularTransition {
                    s,
                    a,
                    r: mdp.reward(s, a),
                    s2: sample_index(row, rng),
                });
            }
        }
    }
    TabularDataset { transitions }
}

/// Dirichlet(1, …) mass on 2 or 3 random successors.
fn random_sparse_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let k = rng.random_range(2..=3.min(n));
    let mut support: Vec<usize> = (0..n).collect();
    support.shuffle(rng);
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid shape");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(1e-3)).collect();
    let total: f64 = draws.iter().sum();
    let mut row = vec![0.0; n];
    for (&s, d) in support[..k].iter().zip(&draws) {
        row[s] = d / total;
    }
    row
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("nonempty distribution")
}
