//! Offline datasets of point-navigation transitions and their JSON-Lines
//! file format: one header object (metadata and state statistics), then one
//! transition object per line with fields `s`, `a`, `r`, `s2`, `done`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::point_nav::{env_reset, env_step, PointNavConfig, StartMode, ACTION_DIM, STATE_DIM};
use crate::error::{Result, ScasError};

pub const STD_FLOOR: f64 = 1e-3;
pub const DEFAULT_PD_GAIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// `clip(gain · (goal − s)) + N(0, noise_std²)`, clipped to `[−1, 1]`.
    ScriptedPd { gain: f64, noise_std: f64 },
    /// Uniform on `[−1, 1]²`.
    Random,
}

impl Behavior {
    pub fn scripted(noise_std: f64) -> Self {
        Behavior::ScriptedPd {
            gain: DEFAULT_PD_GAIN,
            noise_std,
        }
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        config: &PointNavConfig,
        s: &[f64],
        rng: &mut R,
    ) -> Vec<f64> {
        match self {
            Behavior::ScriptedPd { gain, noise_std } => {
                let noise =
                    (*noise_std > 0.0).then(|| Normal::new(0.0, *noise_std).expect("finite std"));
                (0..ACTION_DIM)
                    .map(|i| {
                        let mut a = (gain * (config.goal[i] - s[i])).clamp(-1.0, 1.0);
                        if let Some(n) = &noise {
                            a += n.sample(rng);
                        }
                        a.clamp(-1.0, 1.0)
                    })
                    .collect()
            }
            Behavior::Random => (0..ACTION_DIM)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Behavior::ScriptedPd { gain, noise_std } = self {
            if !(gain.is_finite() && *gain > 0.0 && noise_std.is_finite() && *noise_std >= 0.0) {
                return Err(ScasError::InvalidInput(format!(
                    "invalid behavior {self:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        if self.s.len() != STATE_DIM || self.s2.len() != STATE_DIM || self.a.len() != ACTION_DIM {
            return Err(ScasError::InvalidInput(
                "transition has wrong dimensions".into(),
            ));
        }
        let finite = self
            .s
            .iter()
            .chain(&self.a)
            .chain(&self.s2)
            .all(|x| x.is_finite());
        if !finite || !self.r.is_finite() {
            return Err(ScasError::InvalidInput(
                "transition has non-finite entries".into(),
            ));
        }
        if self.a.iter().any(|a| a.abs() > 1.0) {
            return Err(ScasError::InvalidInput(
                "transition action outside [-1, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One behavior's contribution to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPart {
    pub behavior: Behavior,
    pub n_transitions: usize,
    pub exclude_hole: bool,
    /// Transitions dropped because `s` or `s2` lay in the hole.
    pub dropped_in_hole: usize,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub env: PointNavConfig,
    pub parts: Vec<DatasetPart>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    metadata: DatasetMetadata,
    n_transitions: usize,
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousDataset {
    pub transitions: Vec<Transition>,
    /// Mean and (floored) standard deviation over every `s` and `s2`.
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub metadata: DatasetMetadata,
}

fn state_statistics(transitions: &[Transition]) -> (Vec<f64>, Vec<f64>) {
    let n = (2 * transitions.len()) as f64;
    let mut mean = vec![0.0; STATE_DIM];
    for t in transitions {
        for i in 0..STATE_DIM {
            mean[i] += t.s[i] + t.s2[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; STATE_DIM];
    for t in transitions {
        for i in 0..STATE_DIM {
            var[i] += (t.s[i] - mean[i]).powi(2) + (t.s2[i] - mean[i]).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl ContinuousDataset {
    pub fn new(transitions: Vec<Transition>, metadata: DatasetMetadata) -> Result<Self> {
        if transitions.is_empty() {
            return Err(ScasError::InvalidInput("dataset is empty".into()));
        }
        for t in &transitions {
            t.validate()?;
        }
        let (state_mean, state_std) = state_statistics(&transitions);
        Ok(Self {
            transitions,
            state_mean,
            state_std,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Concatenates datasets collected on the same environment.
    pub fn concat(parts: Vec<ContinuousDataset>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| ScasError::InvalidInput("nothing to concatenate".into()))?;
        let mut metadata = DatasetMetadata {
            env: first.metadata.env.clone(),
            parts: Vec::new(),
            seed: first.metadata.seed,
        };
        let mut transitions = Vec::new();
        for d in parts {
            if d.metadata.env != metadata.env {
                return Err(ScasError::InvalidInput(
                    "cannot concatenate datasets from different environments".into(),
                ));
            }
            metadata.parts.extend(d.metadata.parts);
            transitions.extend(d.transitions);
        }
        Self::new(transitions, metadata)
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        normalize(s, &self.state_mean, &self.state_std)
    }

    /// Largest `|r|` in the data.
    pub fn max_abs_reward(&self) -> f64 {
        self.transitions
            .iter()
            .map(|t| t.r.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let header = Header {
            metadata: self.metadata.clone(),
            n_transitions: self.transitions.len(),
            state_mean: self.state_mean.clone(),
            state_std: self.state_std.clone(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for t in &self.transitions {
            serde_json::to_writer(&mut buf, t).expect("transition serializes");
            buf.push(b'\n');
        }
        buf
    }

    /// Hex SHA-256 of the canonical file encoding.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_jsonl());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| ScasError::io(path, e))?;
        f.write_all(&self.to_jsonl())
            .map_err(|e| ScasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| ScasError::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let first = lines
            .next()
            .ok_or_else(|| ScasError::format(path, "empty file"))?
            .map_err(|e| ScasError::io(path, e))?;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| ScasError::format(path, format!("bad header: {e}")))?;
        let mut transitions = Vec::with_capacity(header.n_transitions);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| ScasError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line)
                .map_err(|e| ScasError::format(path, format!("line {}: {e}", i + 2)))?;
            transitions.push(t);
        }
        if transitions.len() != header.n_transitions {
            return Err(ScasError::format(
                path,
                format!(
                    "header announces {} transitions, found {}",
                    header.n_transitions,
                    transitions.len()
                ),
            ));
        }
        let data = Self::new(transitions, header.metadata)
            .map_err(|e| ScasError::format(path, e.to_string()))?;
        if data.state_mean != header.state_mean || data.state_std != header.state_std {
            return Err(ScasError::format(
                path,
                "stored state statistics disagree with the transitions",
            ));
        }
        Ok(data)
    }

    /// Normalized column arrays for minibatch training.
    pub fn arrays(&self) -> TransitionArrays {
        let n = self.transitions.len();
        let mut s = Array2::zeros((n, STATE_DIM));
        let mut a = Array2::zeros((n, ACTION_DIM));
        let mut s2 = Array2::zeros((n, STATE_DIM));
        let mut r = Array1::zeros(n);
        let mut done = Array1::zeros(n);
        for (i, t) in self.transitions.iter().enumerate() {
            for j in 0..STATE_DIM {
                s[[i, j]] = (t.s[j] - self.state_mean[j]) / self.state_std[j];
                s2[[i, j]] = (t.s2[j] - self.state_mean[j]) / self.state_std[j];
            }
            for j in 0..ACTION_DIM {
                a[[i, j]] = t.a[j];
            }
            r[i] = t.r;
            done[i] = if t.done { 1.0 } else { 0.0 };
        }
        TransitionArrays { s, a, r, s2, done }
    }
}

pub fn normalize(s: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    s.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), d)| (x - m) / d)
        .collect()
}

/// Dataset columns with states already normalized.
#[derive(Clone, Debug)]
pub struct TransitionArrays {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s2: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub done: Array1<f64>,
}

impl TransitionArrays {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> TransitionArrays {
        use ndarray::Axis;
        TransitionArrays {
            s: self.s.select(Axis(0), idx),
            a: self.a.select(Axis(0), idx),
            r: self.r.select(Axis(0), idx),
            s2: self.s2.select(Axis(0), idx),
            done: self.done.select(Axis(0), idx),
        }
    }

    /// Uniform minibatch, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> TransitionArrays {
        let idx: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..self.len()))
            .collect();
        self.gather(&idx)
    }
}

/// Rolls behavior episodes from in-distribution starts until `n_transitions`
/// transitions are retained.
pub fn collect_dataset<R: Rng + ?Sized>(
    config: &PointNavConfig,
    behavior: &Behavior,
    n_transitions: usize,
    exclude_hole: bool,
    rng: &mut R,
) -> Result<ContinuousDataset> {
    config.validate()?;
    behavior.validate()?;
    if n_transitions == 0 {
        return Err(ScasError::InvalidInput(
            "n_transitions must be positive".into(),
        ));
    }
    if exclude_hole && config.ood_hole.is_none() {
        return Err(ScasError::InvalidInput(
            "exclude_hole needs an ood_hole".into(),
        ));
    }
    let mut transitions = Vec::with_capacity(n_transitions);
    let (mut dropped, mut episodes) = (0, 0);
    'outer: loop {
        episodes += 1;
        let mut s = env_reset(config, StartMode::InDist, rng)?;
        for _ in 0..config.max_steps {
            let a = behavior.act(config, &s, rng);
            let out = env_step(config, &s, &a, rng)?;
            let t = Transition {
                s: s.clone(),
                a,
                r: out.reward,
                s2: out.next_state.clone(),
                done: out.done,
            };
            if exclude_hole && (config.in_hole(&t.s) || config.in_hole(&t.s2)) {
                dropped += 1;
            } else {
                transitions.push(t);
                if transitions.len() == n_transitions {
                    break 'outer;
                }
            }
            if out.done {
                break;
            }
            s = out.next_state;
        }
    }
    let metadata = DatasetMetadata {
        env: config.clone(),
        parts: vec![DatasetPart {
            behavior: behavior.clone(),
            n_transitions,
            exclude_hole,
            dropped_in_hole: dropped,
            episodes,
        }],
        seed: None,
    };
    ContinuousDataset::new(transitions, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hole_exclusion_is_airtight() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = collect_dataset(&cfg, &Behavior::Random, 5000, true, &mut rng).unwrap();
        assert_eq!(d.len(), 5000);
        assert!(d
            .transitions
            .iter()
            .all(|t| !cfg.in_hole(&t.s) && !cfg.in_hole(&t.s2)));
        assert!(d.metadata.parts[0].dropped_in_hole > 0);
    }

    #[test]
    fn statistics_are_floored() {
        let t = Transition {
            s: vec![1.0, 1.0],
            a: vec![0.0, 0.0],
            r: -1.0,
            s2: vec![1.0, 1.0],
            done: false,
        };
        let meta = DatasetMetadata {
            env: PointNavConfig::default(),
            parts: vec![],
            seed: None,
        };
        let d = ContinuousDataset::new(vec![t], meta).unwrap();
        assert_eq!(d.state_mean, vec![1.0, 1.0]);
        assert_eq!(d.state_std, vec![STD_FLOOR, STD_FLOOR]);
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = collect_dataset(&cfg, &Behavior::scripted(0.3), 300, true, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        d.save(&path).unwrap();
        let back = ContinuousDataset::load(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.content_hash(), d.content_hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let cfg = PointNavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = collect_dataset(&cfg, &Behavior::Random, 3, false, &mut rng).unwrap();
        let text = String::from_utf8(d.to_jsonl()).unwrap();
        let text = text.replacen("\"done\"", "\"extra\":1,\"done\"", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(
            ContinuousDataset::load(&path),
            Err(ScasError::Format { .. })
        ));
    }
}
