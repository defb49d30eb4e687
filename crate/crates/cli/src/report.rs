use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scas_core::agent::Policy;
use scas_core::env::{run_episode, PerturbProtocol, PointNavConfig, StartMode};
use scas_core::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    pub steps_out_of_ood: usize,
    pub left_ood: bool,
    pub reached_goal: bool,
    pub perturb_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seed: u64,
    pub episodes: usize,
    #[serde(rename = "return")]
    pub episode_return: MeanStd,
    pub steps_out_of_ood: MeanStd,
    pub goal_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: StartMode,
    pub perturb_steps: Option<usize>,
    pub episodes: Vec<EpisodeRow>,
    pub per_seed: Vec<SeedAggregate>,
    /// Over every episode of every seed.
    #[serde(rename = "return")]
    pub episode_return: MeanStd,
    pub steps_out_of_ood: MeanStd,
    pub length: MeanStd,
    pub goal_rate: f64,
    pub left_ood_rate: f64,
}

fn rate(rows: &[&EpisodeRow], f: impl Fn(&EpisodeRow) -> bool) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64
    }
}

impl EvalReport {
    pub fn from_rows(mode: StartMode, perturb_steps: Option<usize>, rows: Vec<EpisodeRow>) -> Self {
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        let per_seed = seeds
            .iter()
            .map(|&seed| {
                let rs: Vec<&EpisodeRow> = rows.iter().filter(|r| r.seed == seed).collect();
                SeedAggregate {
                    seed,
                    episodes: rs.len(),
                    episode_return: MeanStd::of(rs.iter().map(|r| r.episode_return)),
                    steps_out_of_ood: MeanStd::of(rs.iter().map(|r| r.steps_out_of_ood as f64)),
                    goal_rate: rate(&rs, |r| r.reached_goal),
                }
            })
            .collect();
        let all: Vec<&EpisodeRow> = rows.iter().collect();
        Self {
            mode,
            perturb_steps,
            episode_return: MeanStd::of(rows.iter().map(|r| r.episode_return)),
            steps_out_of_ood: MeanStd::of(rows.iter().map(|r| r.steps_out_of_ood as f64)),
            length: MeanStd::of(rows.iter().map(|r| r.length as f64)),
            goal_rate: rate(&all, |r| r.reached_goal),
            left_ood_rate: rate(&all, |r| r.left_ood),
            per_seed,
            episodes: rows,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode {:?}, perturb_steps {:?}, {} episodes",
            self.mode,
            self.perturb_steps,
            self.episodes.len()
        );
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>18} {:>18} {:>8}",
            "seed", "episodes", "return", "steps_out_of_ood", "goal"
        );
        for s in &self.per_seed {
            let _ = writeln!(
                out,
                "{:>8} {:>8} {:>9.2} ± {:<6.2} {:>9.2} ± {:<6.2} {:>8.2}",
                s.seed,
                s.episodes,
                s.episode_return.mean,
                s.episode_return.std,
                s.steps_out_of_ood.mean,
                s.steps_out_of_ood.std,
                s.goal_rate
            );
        }
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>9.2} ± {:<6.2} {:>9.2} ± {:<6.2} {:>8.2}",
            "all",
            self.episodes.len(),
            self.episode_return.mean,
            self.episode_return.std,
            self.steps_out_of_ood.mean,
            self.steps_out_of_ood.std,
            self.goal_rate
        );
        out
    }
}

/// Runs `episodes` episodes per seed; each seed owns an independent RNG.
pub fn evaluate_policy(
    env: &PointNavConfig,
    policy: &Policy,
    mode: StartMode,
    perturb_steps: Option<usize>,
    episodes: usize,
    seeds: &[u64],
) -> Result<EvalReport> {
    let protocol = perturb_steps.map(PerturbProtocol::new);
    let mut act = |s: &[f64]| {
        policy
            .act(s)
            .expect("state has the environment's dimension")
    };
    let mut rows = Vec::with_capacity(episodes * seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for episode in 0..episodes {
            let t = run_episode(env, &mut act, protocol.as_ref(), mode, &mut rng)?;
            rows.push(EpisodeRow {
                seed,
                episode,
                episode_return: t.episode_return,
                length: t.len(),
                steps_out_of_ood: t.steps_out_of_ood,
                left_ood: t.left_ood,
                reached_goal: t.reached_goal,
                perturb_steps: t.perturb_steps,
            });
        }
    }
    Ok(EvalReport::from_rows(mode, perturb_steps, rows))
}
