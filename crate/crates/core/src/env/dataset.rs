//! Offline datasets rolled out from scripted styles.

use serde::{Deserialize, Serialize};

use super::scripted::{scripted_policy, BehaviorStyle};
use super::{env_reset, env_step, EnvConfig, Vec2};
use crate::error::{Error, Result};
use crate::numerics::rng::substream;
use crate::numerics::Tensor;

pub const STD_FLOOR: f64 = 1e-3;
/// Attempts allowed per requested episode before a style is declared unusable.
pub const RETRY_FACTOR: usize = 10;

/// Per-dimension state statistics plus the action scale used by the models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_mean: Vec2,
    pub state_std: Vec2,
    /// Actions are divided by this before they reach a network.
    pub action_scale: f64,
    /// Whether stored states are currently normalized.
    pub applied: bool,
}

impl NormStats {
    pub fn identity(action_scale: f64) -> Self {
        NormStats {
            state_mean: [0.0; 2],
            state_std: [1.0; 2],
            action_scale,
            applied: false,
        }
    }

    pub fn normalize(&self, s: Vec2) -> Vec2 {
        [
            (s[0] - self.state_mean[0]) / self.state_std[0],
            (s[1] - self.state_mean[1]) / self.state_std[1],
        ]
    }

    pub fn denormalize(&self, s: Vec2) -> Vec2 {
        [
            s[0] * self.state_std[0] + self.state_mean[0],
            s[1] * self.state_std[1] + self.state_mean[1],
        ]
    }

    fn of(states: &[Vec2], action_scale: f64) -> Self {
        let n = states.len().max(1) as f64;
        let mut mean = [0.0; 2];
        for s in states {
            mean[0] += s[0] / n;
            mean[1] += s[1] / n;
        }
        let mut var = [0.0; 2];
        for s in states {
            var[0] += (s[0] - mean[0]).powi(2) / n;
            var[1] += (s[1] - mean[1]).powi(2) / n;
        }
        NormStats {
            state_mean: mean,
            state_std: [var[0].sqrt().max(STD_FLOOR), var[1].sqrt().max(STD_FLOOR)],
            action_scale,
            applied: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub style: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: EnvConfig,
    pub env_hash: String,
    pub styles: Vec<BehaviorStyle>,
    pub seed: u64,
    pub episodes_per_style: usize,
    /// Kept episodes in storage order.
    pub episodes: Vec<EpisodeMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub states: Vec<Vec2>,
    pub actions: Vec<Vec2>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec2>,
    pub dones: Vec<bool>,
    pub norm: NormStats,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Empty dataset for `env`.
    pub fn empty(env: EnvConfig) -> Self {
        Dataset {
            states: vec![],
            actions: vec![],
            rewards: vec![],
            next_states: vec![],
            dones: vec![],
            norm: NormStats::identity(env.max_step),
            meta: DatasetMeta {
                env_hash: env.hash(),
                env,
                styles: vec![],
                seed: 0,
                episodes_per_style: 0,
                episodes: vec![],
            },
        }
    }

    /// Style index of every transition, from the episode table.
    pub fn style_labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.len()];
        for ep in &self.meta.episodes {
            for l in &mut labels[ep.start..ep.start + ep.len] {
                *l = ep.style;
            }
        }
        labels
    }

    /// States in environment coordinates regardless of normalization.
    pub fn raw_states(&self) -> Vec<Vec2> {
        if self.norm.applied {
            self.states.iter().map(|s| self.norm.denormalize(*s)).collect()
        } else {
            self.states.clone()
        }
    }

    /// Rows of normalized states, `n x 2`, for the listed indices.
    pub fn state_batch(&self, idx: &[usize]) -> Tensor {
        vec2_rows(idx.iter().map(|&i| self.states[i]))
    }

    pub fn next_state_batch(&self, idx: &[usize]) -> Tensor {
        vec2_rows(idx.iter().map(|&i| self.next_states[i]))
    }

    /// Actions divided by the action scale, `n x 2`.
    pub fn action_batch(&self, idx: &[usize]) -> Tensor {
        let k = self.norm.action_scale;
        vec2_rows(idx.iter().map(|&i| [self.actions[i][0] / k, self.actions[i][1] / k]))
    }

    pub fn reward_batch(&self, idx: &[usize]) -> Tensor {
        let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
        Tensor::from_vec(idx.len(), 1, r).unwrap()
    }

    pub fn done_batch(&self, idx: &[usize]) -> Tensor {
        let d: Vec<f64> = idx
            .iter()
            .map(|&i| if self.dones[i] { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(idx.len(), 1, d).unwrap()
    }
}

pub(crate) fn vec2_rows(it: impl Iterator<Item = Vec2>) -> Tensor {
    let data: Vec<f64> = it.flatten().collect();
    let n = data.len() / 2;
    Tensor::from_vec(n, 2, data).unwrap()
}

/// `n` styles with offsets evenly spread over `[-0.3, 0.3]`; one style is straight.
pub fn evenly_spaced_styles(n: usize) -> Vec<BehaviorStyle> {
    match n {
        0 => vec![],
        1 => vec![BehaviorStyle::new(0.0)],
        _ => (0..n)
            .map(|i| BehaviorStyle::new(-0.3 + 0.6 * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// The four arcs at offsets -0.3, -0.1, +0.1, +0.3.
pub fn default_styles() -> Vec<BehaviorStyle> {
    evenly_spaced_styles(4)
}

/// Rolls out every style, keeping `episodes_per_style` episodes with a
/// non-negative return each. Stored states are raw; the returned statistics
/// are computed but not yet applied (see [`normalize_states`]).
pub fn generate_dataset(
    config: &EnvConfig,
    styles: &[BehaviorStyle],
    episodes_per_style: usize,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    if episodes_per_style == 0 {
        return Err(Error::contract("episodes_per_style must be at least 1"));
    }
    let mut ds = Dataset::empty(config.clone());
    ds.meta.styles = styles.to_vec();
    ds.meta.seed = seed;
    ds.meta.episodes_per_style = episodes_per_style;

    for (si, style) in styles.iter().enumerate() {
        let budget = RETRY_FACTOR * episodes_per_style;
        let mut kept = 0;
        let mut attempt = 0;
        while kept < episodes_per_style {
            if attempt >= budget {
                return Err(Error::Generation {
                    style: si,
                    retries: budget,
                });
            }
            let stream_id = ((si as u64) << 32) | attempt as u64;
            attempt += 1;
            let mut rng = substream(seed, "data", stream_id);
            let mut s = env_reset(config, true, &mut rng);
            let mut episode = Vec::new();
            let mut ret = 0.0;
            for _ in 0..config.horizon {
                let a = scripted_policy(style, s, config, &mut rng);
                let out = env_step(s, a, config)?;
                ret += out.reward;
                episode.push((s, a, out));
                s = out.next_state;
                if out.done {
                    break;
                }
            }
            if ret < 0.0 || episode.is_empty() {
                continue;
            }
            ds.meta.episodes.push(EpisodeMeta {
                style: si,
                start: ds.len(),
                len: episode.len(),
            });
            for (s, a, out) in episode {
                ds.states.push(s);
                ds.actions.push(a);
                ds.rewards.push(out.reward);
                ds.next_states.push(out.next_state);
                ds.dones.push(out.done);
            }
            kept += 1;
        }
    }
    ds.norm = NormStats::of(&ds.states, config.max_step);
    Ok(ds)
}

/// Replaces stored states (and next states) with `(s - mean) / std`.
/// A no-op if they are already normalized.
pub fn normalize_states(mut ds: Dataset) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::contract("cannot normalize an empty dataset"));
    }
    if ds.norm.applied {
        return Ok(ds);
    }
    let norm = ds.norm.clone();
    for s in ds.states.iter_mut().chain(ds.next_states.iter_mut()) {
        *s = norm.normalize(*s);
    }
    ds.norm.applied = true;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::arc_y;

    #[test]
    fn noiseless_single_style_lies_on_its_arc() {
        let c = EnvConfig {
            reset_jitter: 0.0,
            ..Default::default()
        };
        let style = BehaviorStyle {
            waypoint_offset: 0.3,
            noise_std: 0.0,
        };
        let ds = generate_dataset(&c, &[style], 1, 0).unwrap();
        assert!(ds.len() >= 16);
        for s in ds.states.iter().chain(&ds.next_states) {
            assert!((s[1] - arc_y(0.3, s[0], &c)).abs() < 1e-6, "{s:?}");
        }
        assert!(ds.dones[ds.len() - 1]);
    }

    #[test]
    fn default_dataset_size_is_within_horizon_bounds() {
        let c = EnvConfig::default();
        let ds = generate_dataset(&c, &default_styles(), 250, 1).unwrap();
        assert!(ds.len() >= 4 * 250 * 10 && ds.len() <= 4 * 250 * 100, "{}", ds.len());
        assert_eq!(ds.meta.episodes.len(), 1000);
        assert!(ds.style_labels().iter().all(|&l| l < 4));
    }

    #[test]
    fn transitions_replay_through_the_dynamics() {
        let c = EnvConfig::default();
        let ds = generate_dataset(&c, &default_styles(), 5, 2).unwrap();
        for i in 0..ds.len() {
            let out = env_step(ds.states[i], ds.actions[i], &c).unwrap();
            assert_eq!(out.next_state, ds.next_states[i]);
            assert_eq!(out.reward, ds.rewards[i]);
            assert_eq!(out.done, ds.dones[i]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = EnvConfig::default();
        let a = generate_dataset(&c, &default_styles(), 3, 42).unwrap();
        let b = generate_dataset(&c, &default_styles(), 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unreachable_goal_exhausts_retries() {
        let c = EnvConfig {
            horizon: 3,
            ..Default::default()
        };
        let err = generate_dataset(&c, &[BehaviorStyle::new(0.2)], 1, 0).unwrap_err();
        assert!(matches!(err, Error::Generation { style: 0, .. }));
    }

    #[test]
    fn constant_column_is_floored() {
        let c = EnvConfig {
            reset_jitter: 0.0,
            ..Default::default()
        };
        let style = BehaviorStyle {
            waypoint_offset: 0.0,
            noise_std: 0.0,
        };
        let ds = generate_dataset(&c, &[style], 2, 0).unwrap();
        assert_eq!(ds.norm.state_std[1], STD_FLOOR);
        let n = normalize_states(ds).unwrap();
        assert!(n.states.iter().all(|s| s[1].abs() < 1e-9));
    }

    #[test]
    fn normalization_round_trips_and_is_idempotent() {
        let c = EnvConfig::default();
        let raw = generate_dataset(&c, &default_styles(), 4, 3).unwrap();
        let n = normalize_states(raw.clone()).unwrap();
        for (a, b) in raw.states.iter().zip(n.raw_states()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let stats = NormStats::of(&n.states, 1.0);
        for d in 0..2 {
            assert!(stats.state_mean[d].abs() < 1e-9);
            assert!((stats.state_std[d] - 1.0).abs() < 1e-9);
        }
        assert_eq!(normalize_states(n.clone()).unwrap(), n);
    }

    #[test]
    fn empty_dataset_cannot_be_normalized() {
        assert!(normalize_states(Dataset::empty(EnvConfig::default())).is_err());
    }
}
