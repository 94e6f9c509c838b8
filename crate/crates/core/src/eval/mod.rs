//! Evaluation: rollouts, normalized scores, the determinant diversity score,
//! the mixture entropy bound and few-shot adaptation.

mod adapt;
mod diversity;
mod gmm;
mod report;

pub use adapt::{few_shot_adapt, AdaptResult, Probe, ADAPT_EPISODES};
pub use diversity::{diversity_score, se_kernel, Bandwidth, Diversity};
pub use gmm::{
    dataset_entropy, entropy_upper_bound, gmm_fit, gmm_fit_bic, GmmComponent, GmmFit, GmmModel,
    GmmSelection, EntropyReport, COV_FLOOR,
};
pub use report::{evaluate, z_grid, CellReport, EvalOptions, EvalReport, EvalSummary};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{env_reset, env_step, scripted_policy, BehaviorStyle, Dataset, EnvConfig, NormStats, Vec2};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::numerics::rng::{substream, Rng};
use crate::numerics::Tensor;

/// One finished episode. `states` starts with the reset state and holds
/// every visited position in environment coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub ret: f64,
    pub success: bool,
    pub states: Vec<Vec2>,
}

/// Runs one episode with `act` choosing raw displacements.
pub fn run_episode(
    env: &EnvConfig,
    jitter: bool,
    rng: &mut Rng,
    mut act: impl FnMut(Vec2, &mut Rng) -> Result<Vec2>,
) -> Result<Episode> {
    let mut s = env_reset(env, jitter, rng);
    let mut states = vec![s];
    let mut ret = 0.0;
    let mut success = false;
    for _ in 0..env.horizon {
        let a = act(s, rng)?;
        let out = env_step(s, a, env)?;
        ret += out.reward;
        s = out.next_state;
        states.push(s);
        if out.done {
            success = true;
            break;
        }
    }
    Ok(Episode {
        ret,
        success,
        states,
    })
}

/// Deterministic action of the latent policy at a raw state.
pub fn policy_action(models: &ModelBundle, norm: &NormStats, z: &[f64], s: Vec2) -> Result<Vec2> {
    let sn = if norm.applied { norm.normalize(s) } else { s };
    let a = models
        .policy
        .mean_action(&Tensor::row(&sn), &Tensor::row(z))?;
    if !a.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            what: "non-finite policy action".into(),
        });
    }
    Ok([a.data()[0] * norm.action_scale, a.data()[1] * norm.action_scale])
}

/// Mean-action episodes of the policy with the latent fixed to `z`.
/// Episode `i` draws its reset from `substream(seed, "rollout", i)`.
pub fn rollout(
    models: &ModelBundle,
    norm: &NormStats,
    z: &[f64],
    env: &EnvConfig,
    episodes: usize,
    jitter: bool,
    seed: u64,
) -> Result<Vec<Episode>> {
    if z.len() != models.config.latent_dim {
        return Err(Error::dim("rollout", models.config.latent_dim, z.len()));
    }
    (0..episodes)
        .map(|i| {
            let mut rng = substream(seed, "rollout", i as u64);
            run_episode(env, jitter, &mut rng, |s, _| policy_action(models, norm, z, s))
        })
        .collect()
}

/// `100 * (raw - min) / (max - min)`.
pub fn normalized_score(raw: f64, min_return: f64, max_return: f64) -> Result<f64> {
    if !(max_return > min_return) {
        return Err(Error::contract(format!(
            "degenerate score range [{min_return}, {max_return}]"
        )));
    }
    Ok(100.0 * (raw - min_return) / (max_return - min_return))
}

pub const ANCHOR_EPISODES: usize = 100;
/// Arcs tried when looking for the best scripted return.
const ANCHOR_OFFSETS: [f64; 5] = [-0.3, -0.1, 0.0, 0.1, 0.3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreAnchors {
    /// Mean return of the uniform random policy.
    pub min_return: f64,
    /// Best mean return over the scripted arcs.
    pub max_return: f64,
    pub episodes: usize,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn toy_score_anchors(env: &EnvConfig, seed: u64) -> Result<ScoreAnchors> {
    let m = env.max_step;
    let random: Vec<f64> = (0..ANCHOR_EPISODES)
        .map(|i| {
            let mut rng = substream(seed, "anchor-random", i as u64);
            run_episode(env, false, &mut rng, |_, r| {
                Ok([r.random_range(-m..=m), r.random_range(-m..=m)])
            })
            .map(|e| e.ret)
        })
        .collect::<Result<_>>()?;
    let mut best = f64::NEG_INFINITY;
    for (k, &offset) in ANCHOR_OFFSETS.iter().enumerate() {
        let style = BehaviorStyle::new(offset);
        let rets: Vec<f64> = (0..ANCHOR_EPISODES)
            .map(|i| {
                let mut rng = substream(seed, "anchor-arc", (k * ANCHOR_EPISODES + i) as u64);
                run_episode(env, false, &mut rng, |s, r| Ok(scripted_policy(&style, s, env, r)))
                    .map(|e| e.ret)
            })
            .collect::<Result<_>>()?;
        best = best.max(mean(rets));
    }
    Ok(ScoreAnchors {
        min_return: mean(random),
        max_return: best,
        episodes: ANCHOR_EPISODES,
    })
}

/// Mean visited state of a latent's episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEmbedding {
    pub phi: Vec2,
    pub episodes: usize,
    pub z: Vec<f64>,
}

/// Embedding from already finished episodes.
pub fn embedding_of(episodes: &[Episode], z: &[f64]) -> Result<PolicyEmbedding> {
    let states: Vec<Vec2> = episodes.iter().flat_map(|e| e.states.iter().copied()).collect();
    if states.is_empty() {
        return Err(Error::contract("embedding needs at least one completed episode"));
    }
    Ok(PolicyEmbedding {
        phi: [mean(states.iter().map(|s| s[0])), mean(states.iter().map(|s| s[1]))],
        episodes: episodes.len(),
        z: z.to_vec(),
    })
}

pub fn policy_embedding(
    models: &ModelBundle,
    norm: &NormStats,
    z: &[f64],
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<PolicyEmbedding> {
    if episodes == 0 {
        return Err(Error::contract("embedding needs at least one episode"));
    }
    embedding_of(&rollout(models, norm, z, env, episodes, false, seed)?, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeLabel {
    Upper,
    Lower,
    Stalled,
}

pub const UPPER_Y: f64 = 0.55;
pub const LOWER_Y: f64 = 0.45;

/// Which side of the corridor the middle third of a trajectory keeps to.
pub fn trajectory_mode_label(states: &[Vec2]) -> ModeLabel {
    let n = states.len();
    let mid = if n >= 3 { &states[n / 3..2 * n / 3] } else { states };
    if mid.is_empty() {
        return ModeLabel::Stalled;
    }
    let y = mean(mid.iter().map(|s| s[1]));
    if y > UPPER_Y {
        ModeLabel::Upper
    } else if y < LOWER_Y {
        ModeLabel::Lower
    } else {
        ModeLabel::Stalled
    }
}

/// How far apart two styles' posterior means sit relative to their spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSeparation {
    pub centroid_distance: f64,
    /// Mean distance of a posterior mean to its own style centroid, averaged
    /// over the two styles.
    pub mean_spread: f64,
}

impl LatentSeparation {
    pub fn separated(&self) -> bool {
        self.centroid_distance > self.mean_spread
    }
}

/// Posterior means `E q(z | s, a)` of every transition of `style_a` and
/// `style_b` in a normalized dataset.
pub fn latent_separation(models: &ModelBundle, ds: &Dataset, style_a: usize, style_b: usize) -> Result<LatentSeparation> {
    if !ds.norm.applied {
        return Err(Error::contract("latent separation needs a normalized dataset"));
    }
    let labels = ds.style_labels();
    let mut centroids = Vec::new();
    let mut spreads = Vec::new();
    for style in [style_a, style_b] {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == style).collect();
        if idx.is_empty() {
            return Err(Error::contract(format!("dataset has no transitions of style {style}")));
        }
        let mu = models
            .encoder
            .dist(&ds.state_batch(&idx), &ds.action_batch(&idx))?
            .mean;
        let d = mu.cols();
        let c: Vec<f64> = (0..d).map(|j| mean((0..mu.rows()).map(|i| mu.get(i, j)))).collect();
        let spread = mean((0..mu.rows()).map(|i| {
            mu.row_slice(i).iter().zip(&c).map(|(x, m)| (x - m).powi(2)).sum::<f64>().sqrt()
        }));
        centroids.push(c);
        spreads.push(spread);
    }
    let centroid_distance = centroids[0]
        .iter()
        .zip(&centroids[1])
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(LatentSeparation {
        centroid_distance,
        mean_spread: 0.5 * (spreads[0] + spreads[1]),
    })
}
