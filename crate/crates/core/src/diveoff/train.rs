//! Update steps and the full training loops.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::{
    critic_loss, critic_target, e_step_loss, m_info_loss, weighted_vae_loss, MInfoInputs,
    MInfoLosses,
};
use super::weights::{advantage, weight_pi_batch, weight_q};
use super::TrainConfig;
use crate::env::{Dataset, EnvConfig};
use crate::error::{Error, Result};
use crate::models::{ModelBundle, PosteriorEncoder, StateEncoder, ACTION_DIM};
use crate::numerics::rng::{normal, stream, Rng};
use crate::numerics::{AdamState, Tape, Tensor};

/// A minibatch in model units: normalized states, scaled actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s_next: Tensor,
    pub done: Tensor,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, idx: &[usize]) -> Self {
        Batch {
            s: ds.state_batch(idx),
            a: ds.action_batch(idx),
            r: ds.reward_batch(idx),
            s_next: ds.next_state_batch(idx),
            done: ds.done_batch(idx),
        }
    }

    /// `size` transitions drawn uniformly with replacement.
    pub fn sample(ds: &Dataset, size: usize, rng: &mut Rng) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::contract("cannot sample from an empty dataset"));
        }
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..ds.len())).collect();
        Ok(Batch::from_indices(ds, &idx))
    }

    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.rows() == 0
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence {
            step: 0,
            what: format!("non-finite {what}"),
        })
    }
}

/// One reparameterized latent per row from `q(z | s, a)`.
pub fn sample_posterior(
    encoder: &PosteriorEncoder,
    s: &Tensor,
    a: &Tensor,
    rng: &mut Rng,
) -> Result<Tensor> {
    let d = encoder.dist(s, a)?;
    d.sample_reparam(&normal(rng, s.rows(), d.dim()))
}

/// One critic step toward the bootstrapped targets, then a Polyak update.
pub fn critic_update(
    models: &mut ModelBundle,
    opt: &mut AdamState,
    batch: &Batch,
    z: &Tensor,
    config: &TrainConfig,
    bounds: Option<[f64; 2]>,
    rng: &mut Rng,
) -> Result<f64> {
    let noise = normal(rng, batch.len(), ACTION_DIM);
    let y = critic_target(models, &batch.r, &batch.done, &batch.s_next, z, &noise, config.gamma, bounds)?;
    let tape = Tape::new();
    let q1 = models.critics.q1.bind(&tape);
    let q2 = models.critics.q2.bind(&tape);
    let loss = critic_loss(&tape, &q1, &q2, &batch.s, &batch.a, z, &y)?;
    let value = finite(loss.value().item(), "critic loss")?;
    let grads = tape.backward(loss)?;
    let mut g = grads.collect(q1.vars());
    g.extend(grads.collect(q2.vars()));
    opt.step(&mut models.critics.online_params_mut(), &g)?;
    models.critics.update_targets(config.tau)?;
    Ok(value)
}

/// Range containing every discounted return: step costs over an unbounded
/// horizon plus at most one terminal goal reward.
pub fn return_bounds(env: &EnvConfig, gamma: f64) -> [f64; 2] {
    let steps = env.step_cost / (1.0 - gamma);
    [
        steps.min(0.0) + env.goal_reward.min(0.0),
        steps.max(0.0) + env.goal_reward.max(0.0),
    ]
}

/// One advantage-weighted likelihood step on the policy.
pub fn e_step_update(
    models: &mut ModelBundle,
    opt: &mut AdamState,
    batch: &Batch,
    z: &Tensor,
    w_pi: &Tensor,
) -> Result<f64> {
    let tape = Tape::new();
    let policy = models.policy.bind(&tape);
    let loss = e_step_loss(&tape, &policy, &batch.s, z, &batch.a, w_pi)?;
    let value = finite(loss.value().item(), "e-step loss")?;
    let g = tape.backward(loss)?.collect(policy.0.vars());
    let mut params: Vec<&mut Tensor> = models.policy.net.params_mut().iter_mut().collect();
    opt.step(&mut params, &g)?;
    Ok(value)
}

/// Draws every random quantity of one joint update and computes its weights.
///
/// Half of the rows keep their dataset action; the rest take a policy action
/// under a latent drawn from the posterior at the dataset pair, i.e. from
/// `p(z | s)`. Latents for the weighted-posterior term come from
/// the encoder as it stands now, which serves as the frozen old posterior.
pub fn prepare_m_info(
    models: &ModelBundle,
    batch: &Batch,
    w_pi: &Tensor,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<MInfoInputs> {
    let n = batch.len();
    let zd = models.config.latent_dim;
    let keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let z_prime = sample_posterior(&models.encoder, &batch.s, &batch.a, rng)?;
    let a_pol = models.policy.sample(&batch.s, &z_prime, &normal(rng, n, ACTION_DIM))?;
    let mut a_mix = a_pol;
    for (r, &k) in keep.iter().enumerate() {
        if k {
            for c in 0..ACTION_DIM {
                a_mix.set(r, c, batch.a.get(r, c));
            }
        }
    }
    let z_old = sample_posterior(&models.encoder, &batch.s, &a_mix, rng)?;
    let adv = advantage(models, &batch.s, &a_mix, &z_old, config, rng)?;
    let w_q = weight_q(&adv, config)?;
    let vae_noise = normal(rng, n * config.n_z, zd);
    let rep: Vec<usize> = (0..config.n_z).flat_map(|_| 0..n).collect();
    let z_info = sample_posterior(&models.encoder, &batch.s, &batch.a, rng)?;
    let info_noise = normal(rng, n, ACTION_DIM);
    Ok(MInfoInputs {
        s: batch.s.clone(),
        a: batch.a.clone(),
        w_pi: w_pi.select_rows(&rep),
        vae_noise,
        a_mix,
        z_old,
        w_q,
        z_info,
        info_noise,
    })
}

/// One joint Adam step on policy, encoder and decoder.
pub fn m_info_update(
    models: &mut ModelBundle,
    opt: &mut AdamState,
    inputs: &MInfoInputs,
    config: &TrainConfig,
) -> Result<MInfoLosses> {
    let tape = Tape::new();
    let p = models.policy.bind(&tape);
    let e = models.encoder.bind(&tape);
    let d = models.decoder.bind(&tape);
    let (loss, parts) = m_info_loss(&tape, &p, &e, &d, inputs, config.info_weight)?;
    finite(parts.total, "m-step loss")?;
    let grads = tape.backward(loss)?;
    let mut g = grads.collect(p.0.vars());
    g.extend(grads.collect(e.0.vars()));
    g.extend(grads.collect(d.net.vars()));
    let mut params: Vec<&mut Tensor> = models
        .policy
        .net
        .params_mut()
        .iter_mut()
        .chain(models.encoder.net.params_mut().iter_mut())
        .chain(models.decoder.net.params_mut().iter_mut())
        .collect();
    opt.step(&mut params, &g)?;
    Ok(parts)
}

/// Unweighted negative ELBO, evaluated without recording gradients.
pub fn vae_loss(models: &ModelBundle, s: &Tensor, a: &Tensor, noise: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let ones = Tensor::filled(s.rows(), 1, 1.0);
    let l = weighted_vae_loss(
        &tape,
        &models.encoder.bind(&tape),
        &models.decoder.bind(&tape),
        s,
        a,
        noise,
        &ones,
    )?;
    Ok(l.value().item())
}

/// Plain VAE training of encoder and decoder on the dataset. Returns the
/// loss of every step.
pub fn vae_pretrain(
    models: &mut ModelBundle,
    ds: &Dataset,
    steps: u64,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut opt = AdamState::new(
        config.vae_lr,
        models
            .encoder
            .net
            .params()
            .iter()
            .chain(models.decoder.net.params()),
    );
    let ones = Tensor::filled(config.batch_size, 1, 1.0);
    let mut losses = Vec::with_capacity(steps as usize);
    for step in 1..=steps {
        let b = Batch::sample(ds, config.batch_size, rng)?;
        let noise = normal(rng, b.len(), models.config.latent_dim);
        let tape = Tape::new();
        let e = models.encoder.bind(&tape);
        let d = models.decoder.bind(&tape);
        let loss = weighted_vae_loss(&tape, &e, &d, &b.s, &b.a, &noise, &ones)?;
        losses.push(finite(loss.value().item(), "vae loss").map_err(|e| at_step(e, step))?);
        let grads = tape.backward(loss)?;
        let mut g = grads.collect(e.0.vars());
        g.extend(grads.collect(d.net.vars()));
        let mut params: Vec<&mut Tensor> = models
            .encoder
            .net
            .params_mut()
            .iter_mut()
            .chain(models.decoder.net.params_mut().iter_mut())
            .collect();
        opt.step(&mut params, &g).map_err(|e| at_step(e, step))?;
    }
    Ok(losses)
}

/// Log density of `z` under the state-only encoder at `s`, per row.
pub fn diayn_reward(state_encoder: &StateEncoder, s: &Tensor, z: &Tensor) -> Result<Tensor> {
    state_encoder.dist(s)?.log_prob(z)
}

fn state_encoder_update(
    se: &mut StateEncoder,
    opt: &mut AdamState,
    s: &Tensor,
    z: &Tensor,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = se.bind(&tape);
    let dist = crate::numerics::GaussianVar::from_head(vars.forward(tape.constant(s.clone()))?);
    let loss = -dist.log_prob(tape.constant(z.clone()))?.mean();
    let value = finite(loss.value().item(), "state encoder loss")?;
    let g = tape.backward(loss)?.collect(vars.vars());
    let mut params: Vec<&mut Tensor> = se.net.params_mut().iter_mut().collect();
    opt.step(&mut params, &g)?;
    Ok(value)
}

/// One line of the metrics stream: means over the updates since the last
/// record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub critic_loss: f64,
    pub e_step_loss: Option<f64>,
    pub posterior_wml_loss: Option<f64>,
    pub weighted_vae_loss: Option<f64>,
    pub info_loss: Option<f64>,
    pub w_pi_mean: Option<f64>,
    pub w_pi_max: Option<f64>,
    pub state_encoder_loss: Option<f64>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Mean::default();
        out
    }
}

#[derive(Default)]
struct Accumulator {
    critic: Mean,
    e_step: Mean,
    wml: Mean,
    vae: Mean,
    info: Mean,
    w_mean: Mean,
    w_max: Option<f64>,
    state_encoder: Mean,
}

impl Accumulator {
    fn weights(&mut self, w: &Tensor) {
        self.w_mean.push(w.mean());
        let m = w.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.w_max = Some(self.w_max.map_or(m, |x| x.max(m)));
    }

    fn record(&mut self, step: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            critic_loss: self.critic.take().unwrap_or(f64::NAN),
            e_step_loss: self.e_step.take(),
            posterior_wml_loss: self.wml.take(),
            weighted_vae_loss: self.vae.take(),
            info_loss: self.info.take(),
            w_pi_mean: self.w_mean.take(),
            w_pi_max: self.w_max.take(),
            state_encoder_loss: self.state_encoder.take(),
        }
    }
}

/// Result of a training run. When `divergence` is set, `models` is the last
/// snapshot taken before the failure and `step` its iteration.
#[derive(Debug)]
pub struct TrainOutput {
    pub models: ModelBundle,
    pub step: u64,
    pub pretrain_losses: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
    pub divergence: Option<Error>,
}

fn at_step(err: Error, step: u64) -> Error {
    match err {
        Error::Divergence { what, .. } => Error::Divergence { step, what },
        other => other,
    }
}

/// Shared by every algorithm, so equal seeds give equal pretrained models.
fn init_and_pretrain(ds: &Dataset, config: &TrainConfig) -> Result<(ModelBundle, Vec<f64>)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::contract("training needs a non-empty dataset"));
    }
    if !ds.norm.applied {
        return Err(Error::contract("training expects a normalized dataset"));
    }
    let mut models = ModelBundle::new(config.model.clone(), &mut stream(config.seed, "init"));
    let losses = vae_pretrain(
        &mut models,
        ds,
        config.pretrain_steps,
        config,
        &mut stream(config.seed, "pretrain"),
    )?;
    Ok((models, losses))
}

/// Runs `body` for every iteration, snapshots the models at each log
/// interval and converts a divergence into a truncated [`TrainOutput`].
fn run_loop(
    mut models: ModelBundle,
    pretrain_losses: Vec<f64>,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
    mut body: impl FnMut(u64, &mut ModelBundle, &mut Accumulator) -> Result<()>,
) -> Result<TrainOutput> {
    let mut acc = Accumulator::default();
    let mut last_good = (models.clone(), 0);
    let mut metrics = Vec::new();
    for t in 1..=config.total_steps {
        match body(t, &mut models, &mut acc) {
            Ok(()) => {}
            Err(e @ Error::Divergence { .. }) => {
                let err = at_step(e, t);
                log::warn!("training diverged: {err}");
                return Ok(TrainOutput {
                    models: last_good.0,
                    step: last_good.1,
                    pretrain_losses,
                    metrics,
                    divergence: Some(err),
                });
            }
            Err(e) => return Err(e),
        }
        if t % config.log_interval == 0 || t == config.total_steps {
            let rec = acc.record(t);
            log::info!("step {t}: critic {:.5}", rec.critic_loss);
            sink(&rec);
            metrics.push(rec);
            last_good = (models.clone(), t);
        }
    }
    Ok(TrainOutput {
        models,
        step: config.total_steps,
        pretrain_losses,
        metrics,
        divergence: None,
    })
}

/// The full algorithm: VAE pretraining, then alternating critic, E-step and
/// joint M-step/information updates.
pub fn train(
    ds: &Dataset,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutput> {
    let (models, pretrain) = init_and_pretrain(ds, config)?;
    let mut critic_opt = AdamState::new(config.critic_lr, models.critics.online_params());
    let mut e_opt = AdamState::new(config.actor_lr, models.policy.net.params());
    let mut m_opt = AdamState::new(
        config.m_info_lr,
        models
            .policy
            .net
            .params()
            .iter()
            .chain(models.encoder.net.params())
            .chain(models.decoder.net.params()),
    );
    let bounds = config.clip_targets.then(|| return_bounds(&ds.meta.env, config.gamma));
    let mut rng = stream(config.seed, "train");
    run_loop(models, pretrain, config, sink, |t, models, acc| {
        let batch = Batch::sample(ds, config.batch_size, &mut rng)?;
        let z = sample_posterior(&models.encoder, &batch.s, &batch.a, &mut rng)?;
        acc.critic
            .push(critic_update(models, &mut critic_opt, &batch, &z, config, bounds, &mut rng)?);
        if t % config.policy_interval == 0 {
            let adv = advantage(models, &batch.s, &batch.a, &z, config, &mut rng)?;
            let w_pi = weight_pi_batch(&adv, config);
            acc.weights(&w_pi);
            acc.e_step
                .push(e_step_update(models, &mut e_opt, &batch, &z, &w_pi)?);
            let inputs = prepare_m_info(models, &batch, &w_pi, config, &mut rng)?;
            let parts = m_info_update(models, &mut m_opt, &inputs, config)?;
            acc.wml.push(parts.posterior_wml);
            acc.vae.push(parts.weighted_vae);
            acc.info.push(parts.info);
        }
        Ok(())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    AwaclVae,
    AwaclVaeDiayn,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::AwaclVae => "awacl-vae",
            Baseline::AwaclVaeDiayn => "awacl-vae-diayn",
        }
    }
}

/// Advantage-weighted latent policy over a VAE that is trained once and then
/// frozen. The DIAYN variant adds `diayn_weight * log q(z | s')` to every
/// reward, with `q(z | s)` fit alongside by maximum likelihood.
pub fn train_baseline(
    ds: &Dataset,
    config: &TrainConfig,
    variant: Baseline,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutput> {
    let (mut models, pretrain) = init_and_pretrain(ds, config)?;
    let mut se_opt = None;
    if variant == Baseline::AwaclVaeDiayn {
        let se = StateEncoder::new(&config.model, &mut stream(config.seed, "state_encoder"));
        se_opt = Some(AdamState::new(config.vae_lr, se.net.params()));
        models.state_encoder = Some(se);
    }
    let mut critic_opt = AdamState::new(config.critic_lr, models.critics.online_params());
    let mut e_opt = AdamState::new(config.actor_lr, models.policy.net.params());
    let bounds = config.clip_targets.then(|| return_bounds(&ds.meta.env, config.gamma));
    let mut rng = stream(config.seed, "train");
    run_loop(models, pretrain, config, sink, |t, models, acc| {
        let mut batch = Batch::sample(ds, config.batch_size, &mut rng)?;
        let z = sample_posterior(&models.encoder, &batch.s, &batch.a, &mut rng)?;
        if let (Some(se), Some(opt)) = (models.state_encoder.as_mut(), se_opt.as_mut()) {
            let bonus = diayn_reward(se, &batch.s_next, &z)?;
            batch.r = batch.r.zip_map(&bonus, |r, b| r + config.diayn_weight * b);
            acc.state_encoder
                .push(state_encoder_update(se, opt, &batch.s, &z)?);
        }
        acc.critic
            .push(critic_update(models, &mut critic_opt, &batch, &z, config, bounds, &mut rng)?);
        if t % config.policy_interval == 0 {
            let adv = advantage(models, &batch.s, &batch.a, &z, config, &mut rng)?;
            let w_pi = weight_pi_batch(&adv, config);
            acc.weights(&w_pi);
            acc.e_step
                .push(e_step_update(models, &mut e_opt, &batch, &z, &w_pi)?);
        }
        Ok(())
    })
}
