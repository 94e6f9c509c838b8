//! Training: the advantage weights, the five losses, the alternating
//! E/M-step loop and the two AWAC-L+VAE baselines.
//!
//! One iteration samples a minibatch, infers a latent for every transition
//! with the posterior encoder and takes a critic step. Every
//! `policy_interval` iterations the policy is refit by advantage-weighted
//! likelihood (E-step), then the encoder, decoder and policy take one joint
//! step on the weighted posterior, weighted VAE and information losses
//! (M-step).

mod audit;
mod losses;
mod train;
mod weights;

pub use audit::{audit_loss, gradient_audit, LossKind};
pub use losses::{
    critic_loss, critic_target, e_step_loss, info_loss, m_info_loss, posterior_wml_loss,
    weighted_vae_loss, MInfoInputs, MInfoLosses,
};
pub use train::{
    critic_update, diayn_reward, e_step_update, m_info_update, prepare_m_info,
    sample_posterior, train, train_baseline, vae_loss, vae_pretrain, Batch, Baseline,
    MetricsRecord, TrainOutput, return_bounds,
};
pub use weights::{advantage, advantage_with_noise, weight_pi, weight_pi_batch, weight_q};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelConfig;

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    /// Encoder and decoder rate during pretraining.
    pub vae_lr: f64,
    /// Joint rate of the M-step and information update.
    pub m_info_lr: f64,
    pub tau: f64,
    /// Critic updates per policy/posterior update.
    pub policy_interval: u64,
    pub inv_alpha_pi: f64,
    pub inv_alpha_q: f64,
    /// Weight of the information loss in the joint update.
    pub info_weight: f64,
    pub pretrain_steps: u64,
    pub total_steps: u64,
    /// Upper clip on exponentiated advantages.
    pub w_max: f64,
    /// Policy actions averaged in the state-value estimate.
    pub n_v: usize,
    /// Latent samples per datum in the weighted VAE loss.
    pub n_z: usize,
    pub log_interval: u64,
    /// Coefficient of the state-encoder reward in the DIAYN baseline.
    pub diayn_weight: f64,
    /// Clamp critic targets to the environment's reachable return range.
    pub clip_targets: bool,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            batch_size: 256,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            vae_lr: 3e-4,
            m_info_lr: 9e-5,
            tau: 5e-3,
            policy_interval: 2,
            inv_alpha_pi: 3.0,
            inv_alpha_q: 1.0,
            info_weight: 2.0,
            pretrain_steps: 2000,
            total_steps: 50_000,
            w_max: 100.0,
            n_v: 1,
            n_z: 1,
            log_interval: 500,
            diayn_weight: 1.0,
            clip_targets: true,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("gamma", self.gamma),
            ("critic_lr", self.critic_lr),
            ("actor_lr", self.actor_lr),
            ("vae_lr", self.vae_lr),
            ("m_info_lr", self.m_info_lr),
            ("tau", self.tau),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::contract(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        if !(self.inv_alpha_pi > 0.0 && self.inv_alpha_q > 0.0) {
            return Err(Error::contract("inverse temperatures must be positive"));
        }
        if self.policy_interval == 0 || self.log_interval == 0 {
            return Err(Error::contract("intervals must be at least 1"));
        }
        if self.batch_size == 0 || self.n_v == 0 || self.n_z == 0 {
            return Err(Error::contract("batch_size, n_v and n_z must be at least 1"));
        }
        if !(self.w_max > 0.0) || !self.info_weight.is_finite() || self.info_weight < 0.0 {
            return Err(Error::contract("w_max must be positive and info_weight non-negative"));
        }
        if self.model.hidden == 0 || self.model.latent_dim == 0 {
            return Err(Error::contract("model widths must be positive"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())
    }
}
