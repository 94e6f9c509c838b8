//! The five training losses as tape expressions.
//!
//! Sampled latents, noise, weights and regression targets are passed in as
//! plain tensors and recorded as constants, so each loss is a deterministic
//! function of the network parameters alone.

use crate::error::Result;
use crate::models::{DecoderVars, EncoderVars, ModelBundle, PolicyVars, ACTION_BOUND};
use crate::numerics::mlp::MlpVars;
use crate::numerics::{Tape, Tensor, Var};

/// Bootstrap target `r + (1 - done) * gamma * min_j Q'_j(s', a', z)` with
/// `a' = mean + std * noise` from the policy at `(s', z)`, clamped to
/// `bounds` when given.
pub fn critic_target(
    models: &ModelBundle,
    r: &Tensor,
    done: &Tensor,
    s_next: &Tensor,
    z: &Tensor,
    noise: &Tensor,
    gamma: f64,
    bounds: Option<[f64; 2]>,
) -> Result<Tensor> {
    let a_next = models.policy.sample(s_next, z, noise)?;
    let q_next = models.critics.target_min_q(s_next, &a_next, z)?;
    let boot = q_next.zip_map(done, |q, d| (1.0 - d) * gamma * q);
    let y = r.zip_map(&boot, |r, b| r + b);
    Ok(match bounds {
        Some([lo, hi]) => y.map(|v| v.clamp(lo, hi)),
        None => y,
    })
}

/// Sum of both heads' mean squared errors against `y`.
pub fn critic_loss<'t>(
    tape: &'t Tape,
    q1: &MlpVars<'t>,
    q2: &MlpVars<'t>,
    s: &Tensor,
    a: &Tensor,
    z: &Tensor,
    y: &Tensor,
) -> Result<Var<'t>> {
    let x = tape.constant(Tensor::concat_cols(&[s, a, z])?);
    let y = tape.constant(y.clone());
    let e1 = q1.forward(x)?.try_sub(y)?.square().mean();
    let e2 = q2.forward(x)?.try_sub(y)?.square().mean();
    Ok(e1 + e2)
}

/// `-mean(W_pi * log pi(a | s, z))`.
pub fn e_step_loss<'t>(
    tape: &'t Tape,
    policy: &PolicyVars<'t>,
    s: &Tensor,
    z: &Tensor,
    a: &Tensor,
    w_pi: &Tensor,
) -> Result<Var<'t>> {
    let dist = policy.dist(tape.constant(s.clone()), tape.constant(z.clone()))?;
    let lp = dist.log_prob(tape.constant(a.clone()))?;
    Ok(-lp.try_mul(tape.constant(w_pi.clone()))?.mean())
}

/// `-mean(W_q * log q(z_old | s, a))`.
pub fn posterior_wml_loss<'t>(
    tape: &'t Tape,
    encoder: &EncoderVars<'t>,
    s: &Tensor,
    a: &Tensor,
    z_old: &Tensor,
    w_q: &Tensor,
) -> Result<Var<'t>> {
    let dist = encoder.dist(tape.constant(s.clone()), tape.constant(a.clone()))?;
    let lp = dist.log_prob(tape.constant(z_old.clone()))?;
    Ok(-lp.try_mul(tape.constant(w_q.clone()))?.mean())
}

/// `-mean(W_pi * (log p(s, a | z) - KL(q(. | s, a) || N(0, I))))` with one
/// reparameterized latent per row of `noise`.
pub fn weighted_vae_loss<'t>(
    tape: &'t Tape,
    encoder: &EncoderVars<'t>,
    decoder: &DecoderVars<'t>,
    s: &Tensor,
    a: &Tensor,
    noise: &Tensor,
    w_pi: &Tensor,
) -> Result<Var<'t>> {
    let (s, a) = (tape.constant(s.clone()), tape.constant(a.clone()));
    let q = encoder.dist(s, a)?;
    let z = q.sample_reparam(tape.constant(noise.clone()))?;
    let elbo = decoder.log_likelihood(z, s, a)?.try_sub(q.kl_to_standard_normal())?;
    Ok(-elbo.try_mul(tape.constant(w_pi.clone()))?.mean())
}

/// `-mean(log q(z | s, a~))` with `a~` reparameterized from the policy at
/// `(s, z)` and clipped to the action box, so the gradient reaches both policy and encoder.
pub fn info_loss<'t>(
    tape: &'t Tape,
    policy: &PolicyVars<'t>,
    encoder: &EncoderVars<'t>,
    s: &Tensor,
    z: &Tensor,
    noise: &Tensor,
) -> Result<Var<'t>> {
    let (s, z) = (tape.constant(s.clone()), tape.constant(z.clone()));
    let a = policy
        .dist(s, z)?
        .sample_reparam(tape.constant(noise.clone()))?
        .clamp(-ACTION_BOUND, ACTION_BOUND);
    Ok(-encoder.dist(s, a)?.log_prob(z)?.mean())
}

/// Constants of one joint M-step/information update.
#[derive(Clone, Debug, PartialEq)]
pub struct MInfoInputs {
    /// Dataset states and scaled actions.
    pub s: Tensor,
    pub a: Tensor,
    /// Advantage weights of the dataset rows, repeated `n_z` times.
    pub w_pi: Tensor,
    /// Reparameterization noise for the VAE latents, `n_z * n` rows.
    pub vae_noise: Tensor,
    /// Actions mixing dataset and policy samples.
    pub a_mix: Tensor,
    /// Latents drawn from the frozen posterior at `(s, a_mix)`.
    pub z_old: Tensor,
    pub w_q: Tensor,
    /// Latents and action noise for the information term. The latents are
    /// posterior draws at dataset pairs, i.e. samples of `p(z | s)`.
    pub z_info: Tensor,
    pub info_noise: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MInfoLosses {
    pub posterior_wml: f64,
    pub weighted_vae: f64,
    pub info: f64,
    pub total: f64,
}

/// `posterior_wml + weighted_vae + info_weight * info`, returned with the
/// value of each part.
pub fn m_info_loss<'t>(
    tape: &'t Tape,
    policy: &PolicyVars<'t>,
    encoder: &EncoderVars<'t>,
    decoder: &DecoderVars<'t>,
    inputs: &MInfoInputs,
    info_weight: f64,
) -> Result<(Var<'t>, MInfoLosses)> {
    let n_z = inputs.vae_noise.rows() / inputs.s.rows().max(1);
    let rep: Vec<usize> = (0..n_z).flat_map(|_| 0..inputs.s.rows()).collect();
    let wml = posterior_wml_loss(tape, encoder, &inputs.s, &inputs.a_mix, &inputs.z_old, &inputs.w_q)?;
    let vae = weighted_vae_loss(
        tape,
        encoder,
        decoder,
        &inputs.s.select_rows(&rep),
        &inputs.a.select_rows(&rep),
        &inputs.vae_noise,
        &inputs.w_pi,
    )?;
    let info = info_loss(tape, policy, encoder, &inputs.s, &inputs.z_info, &inputs.info_noise)?;
    let total = wml + vae + info.scale(info_weight);
    let parts = MInfoLosses {
        posterior_wml: wml.value().item(),
        weighted_vae: vae.value().item(),
        info: info.value().item(),
        total: total.value().item(),
    };
    Ok((total, parts))
}
