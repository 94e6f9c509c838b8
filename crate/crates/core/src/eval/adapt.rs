//! Few-shot adaptation: probe random latents once each in a changed
//! environment, then commit to the best one.

use serde::{Deserialize, Serialize};

use super::{mean, rollout, trajectory_mode_label, ModeLabel};
use crate::env::{EnvConfig, NormStats};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::numerics::rng::{stream, uniform};

/// Episodes rerun at the selected latent.
pub const ADAPT_EPISODES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub z: Vec<f64>,
    pub ret: f64,
    pub mode: ModeLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptResult {
    pub probes: Vec<Probe>,
    pub z_max: Vec<f64>,
    pub probe_mean: f64,
    pub adapted_returns: Vec<f64>,
    pub adapted_mean: f64,
    /// Mode of the first rerun at `z_max`.
    pub adapted_mode: ModeLabel,
    pub budget: usize,
    pub seed: u64,
}

/// Draws `budget` latents from `U(-1, 1)^d`, runs one episode with each and
/// reruns the first best one [`ADAPT_EPISODES`] times.
pub fn few_shot_adapt(
    models: &ModelBundle,
    norm: &NormStats,
    env: &EnvConfig,
    budget: usize,
    seed: u64,
) -> Result<AdaptResult> {
    if budget == 0 {
        return Err(Error::contract("adaptation budget must be at least 1"));
    }
    let zs = uniform(&mut stream(seed, "adapt"), budget, models.config.latent_dim, -1.0, 1.0);
    let mut probes = Vec::with_capacity(budget);
    for i in 0..budget {
        let z = zs.row_slice(i).to_vec();
        let ep = rollout(models, norm, &z, env, 1, false, seed)?.remove(0);
        probes.push(Probe {
            mode: trajectory_mode_label(&ep.states),
            ret: ep.ret,
            z,
        });
    }
    let best = probes
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p.ret > probes[b].ret { i } else { b });
    let z_max = probes[best].z.clone();
    let eps = rollout(models, norm, &z_max, env, ADAPT_EPISODES, false, seed)?;
    let adapted_returns: Vec<f64> = eps.iter().map(|e| e.ret).collect();
    Ok(AdaptResult {
        probe_mean: mean(probes.iter().map(|p| p.ret)),
        adapted_mean: mean(adapted_returns.iter().copied()),
        adapted_mode: trajectory_mode_label(&eps[0].states),
        adapted_returns,
        z_max,
        probes,
        budget,
        seed,
    })
}
