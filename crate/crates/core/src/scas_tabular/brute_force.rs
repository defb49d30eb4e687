//! Grid search over the action simplex followed by pairwise exact line
//! searches. The regularizer separates across states and, per state, is a
//! concave function `f(p) = Σ_{s'} k_{s'} log Σ_a p_a M(s'|s, a)`.

use super::{successor_weights, RegularizerSpec};
use crate::error::{Result, ScasError};
use crate::tabular::{EmpiricalModels, TabularDataset, TabularPolicy};

pub const MAX_ACTIONS: usize = 4;
pub const MAX_VISITED_STATES: usize = 8;
pub const MAX_GRID: usize = 100;
const REFINE_STEPS: usize = 200;
const BISECTION_ITERS: usize = 80;

struct StateObjective {
    /// `(k_{s'}, M(s'|s, ·))` for each successor seen in the data.
    terms: Vec<(f64, Vec<f64>)>,
}

impl StateObjective {
    fn value(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, m) in &self.terms {
            let l: f64 = m.iter().zip(p).map(|(m, p)| m * p).sum();
            if l <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += k * l.ln();
        }
        total
    }

    /// d/dt f(p + t(e_i − e_j)).
    fn directional_derivative(&self, p: &[f64], i: usize, j: usize, t: f64) -> f64 {
        let mut total = 0.0;
        for (k, m) in &self.terms {
            let diff = m[i] - m[j];
            if diff == 0.0 {
                continue;
            }
            let l: f64 = m.iter().zip(p).map(|(m, p)| m * p).sum::<f64>() + t * diff;
            total += k * diff / l.max(0.0);
        }
        total
    }

    /// Exact maximizer of the concave restriction along `e_i − e_j`.
    fn line_search(&self, p: &[f64], i: usize, j: usize) -> f64 {
        let (lo, hi) = (-p[i], p[j]);
        if hi - lo <= 0.0 {
            return 0.0;
        }
        let d_hi = self.directional_derivative(p, i, j, hi);
        if d_hi >= 0.0 {
            return hi;
        }
        let d_lo = self.directional_derivative(p, i, j, lo);
        if d_lo <= 0.0 {
            return lo;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (a + b);
            if self.directional_derivative(p, i, j, mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Visits every point of `{p : p_a = c_a / grid, Σ c_a = grid}`.
fn for_each_grid_point(n_actions: usize, grid: usize, mut visit: impl FnMut(&[f64])) {
    fn rec(
        idx: usize,
        remaining: usize,
        counts: &mut Vec<usize>,
        p: &mut Vec<f64>,
        grid: usize,
        visit: &mut dyn FnMut(&[f64]),
    ) {
        let n = counts.len();
        if idx == n - 1 {
            counts[idx] = remaining;
            p[idx] = remaining as f64 / grid as f64;
            visit(p);
            return;
        }
        for c in 0..=remaining {
            counts[idx] = c;
            p[idx] = c as f64 / grid as f64;
            rec(idx + 1, remaining - c, counts, p, grid, visit);
        }
    }
    let mut counts = vec![0; n_actions];
    let mut p = vec![0.0; n_actions];
    rec(0, grid, &mut counts, &mut p, grid, &mut visit);
}

fn maximize_state(objective: &StateObjective, n_actions: usize, grid: usize) -> Vec<f64> {
    let mut best = vec![1.0 / n_actions as f64; n_actions];
    let mut best_value = f64::NEG_INFINITY;
    for_each_grid_point(n_actions, grid, |p| {
        let v = objective.value(p);
        if v > best_value {
            best_value = v;
            best.copy_from_slice(p);
        }
    });
    if best_value == f64::NEG_INFINITY {
        // No grid point has finite value; start the ascent from the center.
        best = vec![1.0 / n_actions as f64; n_actions];
    }

    for _ in 0..REFINE_STEPS {
        let mut moved = 0.0f64;
        for i in 0..n_actions {
            for j in (i + 1)..n_actions {
                let t = objective.line_search(&best, i, j);
                if t == 0.0 {
                    continue;
                }
                let before = objective.value(&best);
                let mut candidate = best.clone();
                candidate[i] += t;
                candidate[j] -= t;
                // Endpoints are exact; clamp bisection round-off.
                if t == best[j] {
                    candidate[j] = 0.0;
                } else if t == -best[i] {
                    candidate[i] = 0.0;
                }
                candidate.iter_mut().for_each(|x| *x = x.max(0.0));
                if objective.value(&candidate) >= before {
                    moved = moved.max(t.abs());
                    best = candidate;
                }
            }
        }
        if moved == 0.0 {
            break;
        }
    }
    let total: f64 = best.iter().sum();
    best.iter_mut().for_each(|x| *x /= total);
    best
}

/// Searches each visited state's action simplex for the regularizer's
/// maximizer. Unvisited states receive a uniform row.
pub fn brute_force_maximizer(
    spec: &RegularizerSpec,
    models: &EmpiricalModels,
    data: &TabularDataset,
    grid: usize,
) -> Result<TabularPolicy> {
    let (n, k) = (models.n_states(), models.n_actions());
    if k > MAX_ACTIONS {
        return Err(ScasError::InstanceTooLarge(format!(
            "{k} actions (at most {MAX_ACTIONS})"
        )));
    }
    if models.visited_states().len() > MAX_VISITED_STATES {
        return Err(ScasError::InstanceTooLarge(format!(
            "{} visited states (at most {MAX_VISITED_STATES})",
            models.visited_states().len()
        )));
    }
    if grid == 0 || grid > MAX_GRID {
        return Err(ScasError::InstanceTooLarge(format!(
            "grid {grid} outside 1..={MAX_GRID}"
        )));
    }
    data.validate(n, k)?;
    let weights = successor_weights(spec, models, data)?;

    let mut pi = TabularPolicy::uniform(n, k);
    for &s in models.visited_states() {
        let scale = weights[s].iter().map(|&(_, w)| w).fold(0.0, f64::max);
        let objective = StateObjective {
            terms: weights[s]
                .iter()
                .map(|&(s2, w)| {
                    let column = (0..k).map(|a| models.dynamics(s, a)[s2]).collect();
                    (w / scale, column)
                })
                .collect(),
        };
        pi.probs[s] = maximize_state(&objective, k, grid);
    }
    Ok(pi)
}
