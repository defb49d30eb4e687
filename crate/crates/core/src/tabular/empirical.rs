use std::collections::BTreeSet;

use super::mdp::TabularDataset;
use crate::error::Result;

/// Count-based models of a tabular dataset: behavior policy β, dynamics M and
/// state-transition model N.
///
/// β and N rows exist only for states that occur as a source state in the
/// data; asking for any other row panics. M rows of unobserved `(s, a)` pairs
/// are all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModels {
    n_states: usize,
    n_actions: usize,
    beta: Vec<Option<Vec<f64>>>,
    dynamics: Vec<Vec<Vec<f64>>>,
    state_transition: Vec<Option<Vec<f64>>>,
    visited: BTreeSet<usize>,
    counts: Vec<Vec<Vec<usize>>>,
}

impl EmpiricalModels {
    pub fn from_dataset(n_states: usize, n_actions: usize, data: &TabularDataset) -> Result<Self> {
        data.validate(n_states, n_actions)?;
        let mut counts = vec![vec![vec![0usize; n_states]; n_actions]; n_states];
        let mut pair_counts = vec![vec![0usize; n_states]; n_states];
        for t in &data.transitions {
            counts[t.s][t.a][t.s2] += 1;
            pair_counts[t.s][t.s2] += 1;
        }

        let mut beta = vec![None; n_states];
        let mut state_transition = vec![None; n_states];
        let mut dynamics = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        let mut visited = BTreeSet::new();
        for s in 0..n_states {
            let sa: Vec<usize> = counts[s].iter().map(|row| row.iter().sum()).collect();
            let n_s: usize = sa.iter().sum();
            if n_s == 0 {
                continue;
            }
            visited.insert(s);
            beta[s] = Some(sa.iter().map(|&c| c as f64 / n_s as f64).collect());
            state_transition[s] = Some(
                pair_counts[s]
                    .iter()
                    .map(|&c| c as f64 / n_s as f64)
                    .collect(),
            );
            for a in 0..n_actions {
                if sa[a] > 0 {
                    dynamics[s][a] = counts[s][a]
                        .iter()
                        .map(|&c| c as f64 / sa[a] as f64)
                        .collect();
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            beta,
            dynamics,
            state_transition,
            visited,
            counts,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn visited_states(&self) -> &BTreeSet<usize> {
        &self.visited
    }

    pub fn is_visited(&self, s: usize) -> bool {
        self.visited.contains(&s)
    }

    pub fn beta_row(&self, s: usize) -> Option<&[f64]> {
        self.beta[s].as_deref()
    }

    /// β(·|s).
    ///
    /// # Panics
    /// If `s` never occurs as a source state in the data.
    pub fn beta(&self, s: usize) -> &[f64] {
        self.beta_row(s)
            .unwrap_or_else(|| panic!("β(·|{s}) is undefined: state {s} is not in the dataset"))
    }

    /// M(·|s, a); all zeros when `(s, a)` was never observed.
    pub fn dynamics(&self, s: usize, a: usize) -> &[f64] {
        &self.dynamics[s][a]
    }

    pub fn state_transition_row(&self, s: usize) -> Option<&[f64]> {
        self.state_transition[s].as_deref()
    }

    /// N(·|s).
    ///
    /// # Panics
    /// If `s` never occurs as a source state in the data.
    pub fn state_transition(&self, s: usize) -> &[f64] {
        self.state_transition_row(s)
            .unwrap_or_else(|| panic!("N(·|{s}) is undefined: state {s} is not in the dataset"))
    }

    /// Number of `(s, a, s')` occurrences in the data.
    pub fn count(&self, s: usize, a: usize, s2: usize) -> usize {
        self.counts[s][a][s2]
    }

    /// M(·|s, π(·|s)) = Σ_a π(a|s) M(·|s, a).
    pub fn policy_dynamics(&self, s: usize, pi_row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (a, &w) in pi_row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(&self.dynamics[s][a]) {
                *o += w * m;
            }
        }
        out
    }

    /// True when every observed `(s, a)` pair has a single successor.
    pub fn is_deterministic(&self) -> bool {
        self.visited.iter().all(|&s| {
            (0..self.n_actions).all(|a| {
                let support = self.counts[s][a].iter().filter(|&&c| c > 0).count();
                support <= 1
            })
        })
    }

    /// The unique successor of an observed pair under deterministic dynamics.
    pub fn successor(&self, s: usize, a: usize) -> Option<usize> {
        let mut it = self.counts[s][a].iter().enumerate().filter(|(_, &c)| c > 0);
        match (it.next(), it.next()) {
            (Some((s2, _)), None) => Some(s2),
            _ => None,
        }
    }
}

/// Convenience wrapper over [`EmpiricalModels::from_dataset`].
pub fn empirical_models(shape: (usize, usize), data: &TabularDataset) -> Result<EmpiricalModels> {
    EmpiricalModels::from_dataset(shape.0, shape.1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::TabularTransition;

    fn data(rows: &[(usize, usize, usize)]) -> TabularDataset {
        TabularDataset {
            transitions: rows
                .iter()
                .map(|&(s, a, s2)| TabularTransition { s, a, r: 0.0, s2 })
                .collect(),
        }
    }

    #[test]
    fn single_observed_pair() {
        let m = empirical_models((3, 2), &data(&[(0, 0, 1), (0, 0, 1)])).unwrap();
        assert_eq!(m.dynamics(0, 0), &[0.0, 1.0, 0.0]);
        assert_eq!(m.beta(0), &[1.0, 0.0]);
        assert_eq!(m.dynamics(0, 1), &[0.0, 0.0, 0.0]);
        assert!(m.is_deterministic());
        assert_eq!(m.successor(0, 0), Some(1));
    }

    #[test]
    fn count_normalization() {
        let m = empirical_models((3, 2), &data(&[(0, 0, 1), (0, 1, 2)])).unwrap();
        assert_eq!(m.beta(0), &[0.5, 0.5]);
        assert_eq!(m.state_transition(0), &[0.0, 0.5, 0.5]);
        assert_eq!(
            m.visited_states().iter().copied().collect::<Vec<_>>(),
            vec![0]
        );
        assert!(m.beta_row(1).is_none());
    }

    #[test]
    #[should_panic(expected = "undefined")]
    fn unvisited_beta_row_panics() {
        let m = empirical_models((3, 2), &data(&[(0, 0, 1)])).unwrap();
        let _ = m.beta(2);
    }

    #[test]
    fn empty_or_out_of_bounds_data_is_rejected() {
        assert!(empirical_models((3, 2), &data(&[])).is_err());
        assert!(empirical_models((3, 2), &data(&[(0, 2, 1)])).is_err());
    }
}
