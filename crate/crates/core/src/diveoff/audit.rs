//! Finite-difference audit of the five training losses on small random
//! networks and 4-row batches.

use serde::{Deserialize, Serialize};

use super::losses::{critic_loss, e_step_loss, info_loss, posterior_wml_loss, weighted_vae_loss};
use crate::error::Result;
use crate::models::{EncoderVars, ModelBundle, ModelConfig, PolicyVars, ACTION_DIM, STATE_DIM};
use crate::numerics::fd_check;
use crate::numerics::mlp::{FinalInit, Mlp, MlpVars};
use crate::numerics::rng::{normal, substream, uniform};
use crate::numerics::{Tensor, Var};

const ROWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Critic,
    EStep,
    PosteriorWml,
    WeightedVae,
    Info,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Critic,
        LossKind::EStep,
        LossKind::PosteriorWml,
        LossKind::WeightedVae,
        LossKind::Info,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Critic => "critic",
            LossKind::EStep => "e_step",
            LossKind::PosteriorWml => "posterior_wml",
            LossKind::WeightedVae => "weighted_vae",
            LossKind::Info => "info",
        }
    }
}

/// Small networks with full-scale random output layers, so that no
/// gradient entry is vanishingly small.
fn audit_models(seed: u64) -> ModelBundle {
    let cfg = ModelConfig {
        hidden: 16,
        ..Default::default()
    };
    let mut rng = substream(seed, "fd-init", 0);
    let mut m = ModelBundle::new(cfg, &mut rng);
    for net in [&mut m.policy.net, &mut m.encoder.net] {
        *net = Mlp::new(net.shape().clone(), FinalInit::Default, &mut rng);
    }
    m
}

fn split<'t>(vars: &[Var<'t>], sizes: &[usize]) -> Vec<MlpVars<'t>> {
    let mut out = Vec::new();
    let mut at = 0;
    for &n in sizes {
        out.push(MlpVars::from_vars(&vars[at..at + n]));
        at += n;
    }
    out
}

/// Relative gradient error of one loss on the batch drawn from `seed`.
pub fn audit_loss(kind: LossKind, seed: u64, step: f64) -> Result<f64> {
    let m = audit_models(seed);
    let mut rng = substream(seed, "fd-batch", 0);
    let s = normal(&mut rng, ROWS, STATE_DIM);
    let a = uniform(&mut rng, ROWS, ACTION_DIM, -1.0, 1.0);
    let z = normal(&mut rng, ROWS, m.config.latent_dim);
    let noise = normal(&mut rng, ROWS, ACTION_DIM);
    let w = uniform(&mut rng, ROWS, 1, 0.1, 5.0);
    let cat = |a: &[Tensor], b: &[Tensor]| -> (Vec<Tensor>, usize) {
        let mut v = a.to_vec();
        v.extend_from_slice(b);
        (v, a.len())
    };
    match kind {
        LossKind::Critic => {
            let (params, n) = cat(m.critics.q1.params(), m.critics.q2.params());
            fd_check(&params, step, |tape, v| {
                let q = split(v, &[n, n]);
                critic_loss(tape, &q[0], &q[1], &s, &a, &z, &w)
            })
        }
        LossKind::EStep => fd_check(m.policy.net.params(), step, |tape, v| {
            e_step_loss(tape, &PolicyVars(MlpVars::from_vars(v)), &s, &z, &a, &w)
        }),
        LossKind::PosteriorWml => fd_check(m.encoder.net.params(), step, |tape, v| {
            posterior_wml_loss(tape, &EncoderVars(MlpVars::from_vars(v)), &s, &a, &z, &w)
        }),
        LossKind::WeightedVae => {
            let (params, n) = cat(m.encoder.net.params(), m.decoder.net.params());
            fd_check(&params, step, |tape, v| {
                let p = split(v, &[n, v.len() - n]);
                weighted_vae_loss(
                    tape,
                    &EncoderVars(p[0].clone()),
                    &m.decoder.with_vars(p[1].clone()),
                    &s,
                    &a,
                    &noise,
                    &w,
                )
            })
        }
        LossKind::Info => {
            let (params, n) = cat(m.policy.net.params(), m.encoder.net.params());
            fd_check(&params, step, |tape, v| {
                let p = split(v, &[n, v.len() - n]);
                info_loss(tape, &PolicyVars(p[0].clone()), &EncoderVars(p[1].clone()), &s, &z, &noise)
            })
        }
    }
}

/// Worst relative error of every loss over `batches` seeds.
pub fn gradient_audit(batches: u64, step: f64) -> Result<Vec<(LossKind, f64)>> {
    LossKind::ALL
        .iter()
        .map(|&k| {
            let mut worst: f64 = 0.0;
            for seed in 0..batches {
                worst = worst.max(audit_loss(k, seed, step)?);
            }
            Ok((k, worst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_matches_finite_differences() {
        for (kind, err) in gradient_audit(20, 1e-5).unwrap() {
            assert!(err < 1e-4, "{}: relative error {err}", kind.name());
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let p = vec![Tensor::row(&[0.3, -0.2])];
        // value uses x², gradient path claims 3x
        let err = fd_check(&p, 1e-5, |tape, v| {
            let fake = v[0].scale(1.5).try_mul(v[0])?;
            let shift = tape.constant(fake.value().zip_map(&v[0].value().map(|x| x * x), |f, t| t - f));
            Ok(fake.try_add(shift)?.sum_cols().mean())
        })
        .unwrap();
        assert!(err > 0.4, "{err}");
    }
}
