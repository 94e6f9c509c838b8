//! Point-mass path planning on the unit square.
//!
//! The state is a 2-D position, the action a small displacement. Reaching the
//! goal disc pays `goal_reward` and ends the episode; every other step costs
//! `step_cost`. The optional wall variants block one half of the corridor at
//! mid-course, which invalidates one family of paths.

mod dataset;
mod io;
mod scripted;

pub use dataset::{
    default_styles, evenly_spaced_styles, generate_dataset, normalize_states, Dataset,
    DatasetMeta, EpisodeMeta, NormStats,
};
pub use io::{dataset_read, dataset_write, DATASET_MAGIC};
pub use scripted::{arc_y, scripted_policy, BehaviorStyle};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

pub type Vec2 = [f64; 2];

/// Horizontal extent of the wall band.
pub const WALL_X: (f64, f64) = (0.45, 0.55);
/// The wall's edge at mid-height.
pub const WALL_Y_SPLIT: f64 = 0.5;
/// How far a vertically blocked agent stays from the wall's horizontal edge.
const WALL_CLEARANCE: f64 = 1e-9;
const WALL_X_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    None,
    WallUpper,
    WallLower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub start: Vec2,
    pub goal: Vec2,
    pub goal_radius: f64,
    /// Per-axis displacement cap.
    pub max_step: f64,
    pub horizon: usize,
    pub step_cost: f64,
    pub goal_reward: f64,
    pub variant: Variant,
    /// Half-width of the uniform start jitter; used only when a reset asks for it.
    pub reset_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            start: [0.1, 0.5],
            goal: [0.9, 0.5],
            goal_radius: 0.05,
            max_step: 0.05,
            horizon: 100,
            step_cost: -0.01,
            goal_reward: 1.0,
            variant: Variant::None,
            reset_jitter: 0.02,
        }
    }
}

fn in_bounds(p: Vec2) -> bool {
    p.iter().all(|v| (0.0..=1.0).contains(v))
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl EnvConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !in_bounds(self.start) || !in_bounds(self.goal) {
            return Err(Error::contract("start and goal must lie in the unit square"));
        }
        if self.goal_radius >= dist(self.start, self.goal) {
            return Err(Error::contract("goal radius reaches the start position"));
        }
        if self.max_step <= 0.0 {
            return Err(Error::contract("max_step must be positive"));
        }
        Ok(())
    }

    /// Stable hash of the configuration, for dataset and checkpoint headers.
    pub fn hash(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())
    }

    pub fn reached_goal(&self, p: Vec2) -> bool {
        dist(p, self.goal) <= self.goal_radius
    }
}

/// Start position, optionally jittered uniformly by `±reset_jitter` per axis.
pub fn env_reset(config: &EnvConfig, jitter: bool, rng: &mut Rng) -> Vec2 {
    if !jitter || config.reset_jitter == 0.0 {
        return config.start;
    }
    let j = config.reset_jitter;
    let mut s = config.start;
    for v in &mut s {
        *v = (*v + rng.random_range(-j..=j)).clamp(0.0, 1.0);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec2,
    pub reward: f64,
    pub done: bool,
}

/// Closed `y` range of the wall for `variant`, if any.
fn wall_y(variant: Variant) -> Option<(f64, f64)> {
    match variant {
        Variant::None => None,
        Variant::WallUpper => Some((WALL_Y_SPLIT, 1.0)),
        Variant::WallLower => Some((0.0, WALL_Y_SPLIT)),
    }
}

/// Parameter range `t ∈ [0, 1]` for which `p + t·d` lies in `[lo, hi]`.
fn slab(p: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d == 0.0 {
        return (lo..=hi).contains(&p).then_some((0.0, 1.0));
    }
    let (mut t0, mut t1) = ((lo - p) / d, (hi - p) / d);
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let (a, b) = (t0.max(0.0), t1.min(1.0));
    (a <= b).then_some((a, b))
}

/// Whether the straight move `from -> to` touches the wall's interior band.
pub fn segment_hits_wall(from: Vec2, to: Vec2, variant: Variant) -> bool {
    let Some((ylo, yhi)) = wall_y(variant) else {
        return false;
    };
    let d = [to[0] - from[0], to[1] - from[1]];
    let Some((ax, bx)) = slab(from[0], d[0], WALL_X.0 + WALL_X_EPS, WALL_X.1 - WALL_X_EPS) else {
        return false;
    };
    let Some((ay, by)) = slab(from[1], d[1], ylo, yhi) else {
        return false;
    };
    ax.max(ay) <= bx.min(by)
}

/// Moves along one axis, stopping at the wall face when the move would enter it.
fn move_axis(p: Vec2, axis: usize, delta: f64, variant: Variant) -> Vec2 {
    let mut q = p;
    q[axis] += delta;
    if !segment_hits_wall(p, q, variant) {
        return q;
    }
    let (ylo, yhi) = wall_y(variant).unwrap();
    if axis == 0 {
        q[0] = if delta > 0.0 { WALL_X.0 } else { WALL_X.1 };
    } else {
        q[1] = if delta > 0.0 {
            ylo - WALL_CLEARANCE
        } else {
            yhi + WALL_CLEARANCE
        };
    }
    // A face position can still be inside the band only if p already was.
    if segment_hits_wall(p, q, variant) {
        p
    } else {
        q
    }
}

/// One transition of the deterministic dynamics.
pub fn env_step(state: Vec2, action: Vec2, config: &EnvConfig) -> Result<StepOutcome> {
    if !in_bounds(state) {
        return Err(Error::contract(format!(
            "state {state:?} outside the unit square"
        )));
    }
    let m = config.max_step;
    let a = [action[0].clamp(-m, m), action[1].clamp(-m, m)];
    let proposed = [
        (state[0] + a[0]).clamp(0.0, 1.0),
        (state[1] + a[1]).clamp(0.0, 1.0),
    ];
    let next_state = if segment_hits_wall(state, proposed, config.variant) {
        let d = [proposed[0] - state[0], proposed[1] - state[1]];
        let v = config.variant;
        let x_first = move_axis(move_axis(state, 0, d[0], v), 1, d[1], v);
        let y_first = move_axis(move_axis(state, 1, d[1], v), 0, d[0], v);
        [x_first, y_first]
            .into_iter()
            .find(|c| !segment_hits_wall(state, *c, v))
            .unwrap_or(state)
    } else {
        proposed
    };
    let done = config.reached_goal(next_state);
    Ok(StepOutcome {
        next_state,
        reward: if done {
            config.goal_reward
        } else {
            config.step_cost
        },
        done,
    })
}
