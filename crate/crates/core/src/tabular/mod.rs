//! Finite MDPs, exact solvers and count-based models of tabular datasets.

mod empirical;
mod mdp;

pub use empirical::{empirical_models, EmpiricalModels};
pub use mdp::{
    kl_divergence, optimal_values, policy_evaluation, TabularDataset, TabularMdp, TabularPolicy,
    TabularTransition, ValueTable, DEFAULT_SOLVER_TOL, DIRECT_SOLVE_MAX_STATES, STOCHASTIC_TOL,
};
