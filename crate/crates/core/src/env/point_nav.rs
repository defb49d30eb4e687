use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, ScasError};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;
pub const GOAL_BONUS: f64 = 10.0;

/// Axis-aligned closed rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub low: [f64; 2],
    pub high: [f64; 2],
}

impl Rect {
    pub fn new(low: [f64; 2], high: [f64; 2]) -> Result<Self> {
        let r = Self { low, high };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.low.iter().chain(&self.high).all(|x| x.is_finite());
        if !finite || self.low[0] > self.high[0] || self.low[1] > self.high[1] {
            return Err(ScasError::InvalidInput(format!(
                "invalid rectangle {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..2).all(|i| p[i] >= self.low[i] && p[i] <= self.high[i])
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(&other.low) && self.contains(&other.high)
    }

    pub fn clip(&self, p: &mut [f64]) {
        for i in 0..2 {
            p[i] = p[i].clamp(self.low[i], self.high[i]);
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.high[0] - self.low[0]).hypot(self.high[1] - self.low[1])
    }

    pub fn area(&self) -> f64 {
        (self.high[0] - self.low[0]) * (self.high[1] - self.low[1])
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let mut p = [0.0; 2];
        for i in 0..2 {
            p[i] = if self.low[i] == self.high[i] {
                self.low[i]
            } else {
                rng.random_range(self.low[i]..=self.high[i])
            };
        }
        p
    }
}

/// A point mass moving in a rectangle toward a goal. Rewards are
/// `−‖s' − goal‖`, plus [`GOAL_BONUS`] and termination inside the goal disc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointNavConfig {
    pub arena: Rect,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Largest displacement per coordinate and step.
    pub action_scale: f64,
    pub dynamics_noise_std: f64,
    pub ood_hole: Option<Rect>,
}

impl Default for PointNavConfig {
    fn default() -> Self {
        Self {
            arena: Rect {
                low: [0.0, 0.0],
                high: [3.0, 5.0],
            },
            goal: [2.0, 3.0],
            goal_radius: 0.2,
            max_steps: 120,
            action_scale: 0.15,
            dynamics_noise_std: 0.0,
            ood_hole: Some(Rect {
                low: [0.0, 0.0],
                high: [1.5, 2.5],
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    InDist,
    OodHole,
}

impl PointNavConfig {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        if !self.arena.contains(&self.goal) {
            return Err(ScasError::InvalidInput(
                "goal lies outside the arena".into(),
            ));
        }
        if !(self.action_scale > 0.0 && self.action_scale.is_finite()) {
            return Err(ScasError::InvalidInput(
                "action_scale must be positive".into(),
            ));
        }
        if !(self.goal_radius >= 0.0) || !(self.dynamics_noise_std >= 0.0) {
            return Err(ScasError::InvalidInput(
                "goal_radius and dynamics_noise_std must be ≥ 0".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(ScasError::InvalidInput("max_steps must be positive".into()));
        }
        if let Some(hole) = &self.ood_hole {
            hole.validate()?;
            if !self.arena.contains_rect(hole) {
                return Err(ScasError::InvalidInput(
                    "ood_hole must lie inside the arena".into(),
                ));
            }
            if self.arena.area() > 0.0 && hole.area() >= self.arena.area() {
                return Err(ScasError::InvalidInput(
                    "ood_hole covers the whole arena".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn in_hole(&self, s: &[f64]) -> bool {
        self.ood_hole.as_ref().is_some_and(|h| h.contains(s))
    }

    pub fn distance_to_goal(&self, s: &[f64]) -> f64 {
        (s[0] - self.goal[0]).hypot(s[1] - self.goal[1])
    }

    /// Largest `|r|` the task can produce.
    pub fn reward_bound(&self) -> f64 {
        self.arena.diagonal().max(GOAL_BONUS)
    }
}

pub fn env_reset<R: Rng + ?Sized>(
    config: &PointNavConfig,
    mode: StartMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match mode {
        StartMode::OodHole => {
            let hole = config.ood_hole.ok_or_else(|| {
                ScasError::InvalidInput("OOD-hole start requested but no hole is configured".into())
            })?;
            Ok(hole.sample(rng).to_vec())
        }
        StartMode::InDist => loop {
            // Rejection sampling; validate() guarantees the hole leaves room.
            let p = config.arena.sample(rng);
            if !config.in_hole(&p) || config.arena.area() == 0.0 {
                return Ok(p.to_vec());
            }
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The goal disc was reached; time limits are left to the caller.
    pub done: bool,
}

pub fn env_step<R: Rng + ?Sized>(
    config: &PointNavConfig,
    state: &[f64],
    action: &[f64],
    rng: &mut R,
) -> Result<StepOutcome> {
    check_len("point-nav state", STATE_DIM, state.len())?;
    check_len("point-nav action", ACTION_DIM, action.len())?;
    if action.iter().any(|a| a.abs() > 1.0) {
        log::warn!("action {action:?} outside [-1, 1]; clipping");
    }
    let mut next = [0.0; 2];
    for i in 0..2 {
        next[i] = state[i] + config.action_scale * action[i].clamp(-1.0, 1.0);
    }
    if config.dynamics_noise_std > 0.0 {
        let noise = Normal::new(0.0, config.dynamics_noise_std).expect("finite std");
        for x in &mut next {
            *x += noise.sample(rng);
        }
    }
    config.arena.clip(&mut next);
    let dist = config.distance_to_goal(&next);
    let done = dist <= config.goal_radius;
    let reward = -dist + if done { GOAL_BONUS } else { 0.0 };
    Ok(StepOutcome {
        next_state: next.to_vec(),
        reward,
        done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_action_keeps_state() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = env_step(&cfg, &[0.5, 4.0], &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(out.next_state, vec![0.5, 4.0]);
        assert_eq!(out.reward, -(1.5f64.hypot(1.0)));
        assert!(!out.done);
    }

    #[test]
    fn goal_gives_bonus_and_terminates() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = env_step(&cfg, &[2.0, 3.0], &[0.1, -0.2], &mut rng).unwrap();
        assert!(out.done);
        assert!(out.reward > 9.9);
    }

    #[test]
    fn degenerate_arena_resets_to_its_point() {
        let cfg = PointNavConfig {
            arena: Rect::new([1.0, 2.0], [1.0, 2.0]).unwrap(),
            goal: [1.0, 2.0],
            ood_hole: None,
            ..PointNavConfig::default()
        };
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            env_reset(&cfg, StartMode::InDist, &mut rng).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(env_reset(&cfg, StartMode::OodHole, &mut rng).is_err());
    }

    #[test]
    fn hole_starts_lie_in_the_hole() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = env_reset(&cfg, StartMode::OodHole, &mut rng).unwrap();
            assert!((0.0..=1.5).contains(&s[0]) && (0.0..=2.5).contains(&s[1]));
        }
    }

    #[test]
    fn out_of_range_actions_are_clipped() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = env_step(&cfg, &[1.0, 1.0], &[3.0, -7.0], &mut rng).unwrap();
        let b = env_step(&cfg, &[1.0, 1.0], &[1.0, -1.0], &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_goal = PointNavConfig {
            goal: [9.0, 9.0],
            ..PointNavConfig::default()
        };
        assert!(bad_goal.validate().is_err());
        let bad_hole = PointNavConfig {
            ood_hole: Some(Rect::new([2.0, 2.0], [4.0, 4.0]).unwrap()),
            ..PointNavConfig::default()
        };
        assert!(bad_hole.validate().is_err());
        let bad_scale = PointNavConfig {
            action_scale: 0.0,
            ..PointNavConfig::default()
        };
        assert!(bad_scale.validate().is_err());
    }
}
