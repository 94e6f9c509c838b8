//! Advantages and the exponentiated weights built from them.
//!
//! Everything here works on plain tensors: the weights enter the losses as
//! constants, so no gradient ever flows through them.

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::numerics::rng::{normal, Rng};
use crate::numerics::Tensor;

/// `min_j Q_j(s, a, z) - V(s, z)`, with `V` the mean of `min_j Q_j` over one
/// policy action per entry of `noise`.
pub fn advantage_with_noise(
    models: &ModelBundle,
    s: &Tensor,
    a: &Tensor,
    z: &Tensor,
    noise: &[Tensor],
) -> Result<Tensor> {
    if noise.is_empty() {
        return Err(Error::contract("value estimate needs at least one action sample"));
    }
    let q = models.critics.min_q(s, a, z)?;
    let mut v = Tensor::zeros(q.rows(), 1);
    for n in noise {
        let a_pi = models.policy.sample(s, z, n)?;
        v.add_assign(&models.critics.min_q(s, &a_pi, z)?);
    }
    let k = noise.len() as f64;
    let adv = q.zip_map(&v, |q, v| q - v / k);
    if !adv.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            what: "non-finite advantage".into(),
        });
    }
    Ok(adv)
}

/// [`advantage_with_noise`] with `n_v` fresh standard-normal draws.
pub fn advantage(
    models: &ModelBundle,
    s: &Tensor,
    a: &Tensor,
    z: &Tensor,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let noise: Vec<Tensor> = (0..config.n_v)
        .map(|_| normal(rng, a.rows(), a.cols()))
        .collect();
    advantage_with_noise(models, s, a, z, &noise)
}

/// `min(exp(inv_alpha_pi * A), w_max)`.
pub fn weight_pi(adv: f64, config: &TrainConfig) -> f64 {
    (config.inv_alpha_pi * adv).exp().min(config.w_max)
}

pub fn weight_pi_batch(adv: &Tensor, config: &TrainConfig) -> Tensor {
    adv.map(|a| weight_pi(a, config))
}

/// `exp(inv_alpha_q * A)` clipped at `w_max`, rescaled to batch mean 1.
pub fn weight_q(adv: &Tensor, config: &TrainConfig) -> Result<Tensor> {
    if adv.is_empty() {
        return Err(Error::contract("weight_q needs a non-empty batch"));
    }
    let raw = adv.map(|a| (config.inv_alpha_q * a).exp().min(config.w_max));
    let mean = raw.mean();
    Ok(raw.map(|w| w / mean))
}
