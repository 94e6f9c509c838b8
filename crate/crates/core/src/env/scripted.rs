//! Scripted behavior styles that generate the multi-modal dataset.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, Vec2};
use crate::numerics::rng::Rng;

/// One mixture component of the behavior policy: pursue a quadratic arc from
/// start to goal whose peak vertical offset at mid-course is `waypoint_offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStyle {
    pub waypoint_offset: f64,
    pub noise_std: f64,
}

impl BehaviorStyle {
    pub const MAX_OFFSET: f64 = 0.35;

    pub fn new(waypoint_offset: f64) -> Self {
        BehaviorStyle {
            waypoint_offset: waypoint_offset.clamp(-Self::MAX_OFFSET, Self::MAX_OFFSET),
            noise_std: 0.01,
        }
    }
}

/// Height of the style's arc at horizontal position `x`.
pub fn arc_y(offset: f64, x: f64, config: &EnvConfig) -> f64 {
    let (x0, x1) = (config.start[0], config.goal[0]);
    let mid = 0.5 * (x0 + x1);
    let half = 0.5 * (x1 - x0);
    let u = ((x - mid) / half).clamp(-1.0, 1.0);
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    let base = config.start[1] + t * (config.goal[1] - config.start[1]);
    base + offset * (1.0 - u * u)
}

/// Next waypoint on the arc: as far ahead as one capped step allows.
fn waypoint(offset: f64, state: Vec2, config: &EnvConfig) -> Vec2 {
    let m = config.max_step;
    let x = state[0];
    let x_goal = config.goal[0];
    let y_here = arc_y(offset, x, config);
    let reach = |dx: f64| {
        let xt = (x + dx).min(x_goal);
        (xt, arc_y(offset, xt, config))
    };
    let (mut xt, mut yt) = reach(m);
    if (yt - y_here).abs() > m {
        // Shrink the look-ahead until the arc rises by at most one step.
        let (mut lo, mut hi) = (0.0, m);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (reach(mid).1 - y_here).abs() > m {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (xt, yt) = reach(lo);
    }
    [xt, yt]
}

/// Proportional pursuit of the style's arc plus Gaussian action noise.
pub fn scripted_policy(style: &BehaviorStyle, state: Vec2, config: &EnvConfig, rng: &mut Rng) -> Vec2 {
    let target = waypoint(style.waypoint_offset, state, config);
    let m = config.max_step;
    let mut a = [target[0] - state[0], target[1] - state[1]];
    if style.noise_std > 0.0 {
        for v in &mut a {
            *v += style.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    [a[0].clamp(-m, m), a[1].clamp(-m, m)]
}
