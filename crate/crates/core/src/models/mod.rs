//! The networks trained by the algorithm and their probabilistic heads.
//!
//! Each network has a plain evaluation path (no gradients) and a `*Vars`
//! counterpart that records onto a [`Tape`]. States given to the models are
//! normalized; actions are divided by the environment's step cap.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_read, checkpoint_to_bytes, checkpoint_write, Checkpoint,
    CheckpointHeader, CKPT_MAGIC,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::mlp::{FinalInit, Mlp, MlpShape, MlpVars};
use crate::numerics::rng::Rng;
use crate::numerics::{DiagGaussian, GaussianVar, Tape, Tensor, Var};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;
/// Per-axis bound of scaled actions; the environment clips anything larger.
pub const ACTION_BOUND: f64 = 1.0;
const FINAL_INIT: FinalInit = FinalInit::Small(3e-3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub latent_dim: usize,
    /// Fixed standard deviation of the decoder's Gaussian on state dimensions.
    pub decoder_state_std: f64,
    /// Same for action dimensions.
    pub decoder_action_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            hidden_layers: 2,
            latent_dim: 2,
            decoder_state_std: DEFAULT_DECODER_STATE_STD,
            decoder_action_std: DEFAULT_DECODER_ACTION_STD,
        }
    }
}

pub const DEFAULT_DECODER_STATE_STD: f64 = 0.6;
pub const DEFAULT_DECODER_ACTION_STD: f64 = 0.6;

impl ModelConfig {
    fn mlp(&self, input: usize, output: usize) -> MlpShape {
        MlpShape::new(input, self.hidden, self.hidden_layers, output)
    }
}

fn cat(parts: &[&Tensor]) -> Result<Tensor> {
    Tensor::concat_cols(parts)
}

/// Gaussian policy `π(a | s, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPolicy {
    pub net: Mlp,
}

impl LatentPolicy {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        LatentPolicy {
            net: Mlp::new(
                cfg.mlp(STATE_DIM + cfg.latent_dim, 2 * ACTION_DIM),
                FINAL_INIT,
                rng,
            ),
        }
    }

    pub fn dist(&self, s: &Tensor, z: &Tensor) -> Result<DiagGaussian> {
        Ok(DiagGaussian::from_head(&self.net.forward(&cat(&[s, z])?)?))
    }

    pub fn log_prob(&self, s: &Tensor, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.dist(s, z)?.log_prob(a)
    }

    /// Reparameterized sample clipped to the action box.
    pub fn sample(&self, s: &Tensor, z: &Tensor, noise: &Tensor) -> Result<Tensor> {
        Ok(self
            .dist(s, z)?
            .sample_reparam(noise)?
            .map(|v| v.clamp(-ACTION_BOUND, ACTION_BOUND)))
    }

    /// Deterministic action used for evaluation rollouts.
    pub fn mean_action(&self, s: &Tensor, z: &Tensor) -> Result<Tensor> {
        Ok(self.dist(s, z)?.mean)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> PolicyVars<'t> {
        PolicyVars(self.net.bind(tape))
    }
}

#[derive(Clone, Debug)]
pub struct PolicyVars<'t>(pub MlpVars<'t>);

impl<'t> PolicyVars<'t> {
    pub fn dist(&self, s: Var<'t>, z: Var<'t>) -> Result<GaussianVar<'t>> {
        Ok(GaussianVar::from_head(
            self.0.forward(Var::concat_cols(&[s, z])?)?,
        ))
    }
}

/// Twin critics `Q(s, a, z)` with Polyak-averaged targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
}

impl CriticPair {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let shape = cfg.mlp(STATE_DIM + ACTION_DIM + cfg.latent_dim, 1);
        let q1 = Mlp::new(shape.clone(), FinalInit::Default, rng);
        let q2 = Mlp::new(shape, FinalInit::Default, rng);
        CriticPair {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        }
    }

    pub fn q(&self, s: &Tensor, a: &Tensor, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = cat(&[s, a, z])?;
        Ok((self.q1.forward(&x)?, self.q2.forward(&x)?))
    }

    /// Elementwise minimum of the online pair.
    pub fn min_q(&self, s: &Tensor, a: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (a1, a2) = self.q(s, a, z)?;
        Ok(a1.zip_map(&a2, f64::min))
    }

    /// Elementwise minimum of the two target networks.
    pub fn target_min_q(&self, s: &Tensor, a: &Tensor, z: &Tensor) -> Result<Tensor> {
        let x = cat(&[s, a, z])?;
        let t1 = self.target1.forward(&x)?;
        let t2 = self.target2.forward(&x)?;
        Ok(t1.zip_map(&t2, f64::min))
    }

    /// Moves both targets toward their online networks at rate `tau`.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        crate::numerics::polyak_update(self.target1.params_mut(), self.q1.params(), tau)?;
        crate::numerics::polyak_update(self.target2.params_mut(), self.q2.params(), tau)
    }

    pub fn online_params(&self) -> Vec<&Tensor> {
        self.q1.params().iter().chain(self.q2.params()).collect()
    }

    pub fn online_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.q1
            .params_mut()
            .iter_mut()
            .chain(self.q2.params_mut().iter_mut())
            .collect()
    }
}

/// Posterior `q(z | s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEncoder {
    pub net: Mlp,
}

impl PosteriorEncoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        PosteriorEncoder {
            net: Mlp::new(
                cfg.mlp(STATE_DIM + ACTION_DIM, 2 * cfg.latent_dim),
                FINAL_INIT,
                rng,
            ),
        }
    }

    pub fn dist(&self, s: &Tensor, a: &Tensor) -> Result<DiagGaussian> {
        Ok(DiagGaussian::from_head(&self.net.forward(&cat(&[s, a])?)?))
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> EncoderVars<'t> {
        EncoderVars(self.net.bind(tape))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderVars<'t>(pub MlpVars<'t>);

impl<'t> EncoderVars<'t> {
    pub fn dist(&self, s: Var<'t>, a: Var<'t>) -> Result<GaussianVar<'t>> {
        Ok(GaussianVar::from_head(
            self.0.forward(Var::concat_cols(&[s, a])?)?,
        ))
    }
}

/// Likelihood `p(s, a | z)`: a Gaussian with learned mean and fixed
/// diagonal standard deviation, one value for state and one for action dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodDecoder {
    pub net: Mlp,
    pub state_std: f64,
    pub action_std: f64,
}

/// Inverse variances of the `(s, a)` columns and the log normalizer.
#[derive(Clone, Copy, Debug, PartialEq)]
struct DiagNoise {
    inv_var: [f64; STATE_DIM + ACTION_DIM],
    log_norm: f64,
}

impl DiagNoise {
    fn new(state_std: f64, action_std: f64) -> Self {
        let mut inv_var = [0.0; STATE_DIM + ACTION_DIM];
        let mut log_norm = -0.5 * inv_var.len() as f64 * (2.0 * PI).ln();
        for (i, v) in inv_var.iter_mut().enumerate() {
            let std = if i < STATE_DIM { state_std } else { action_std };
            *v = 1.0 / (std * std);
            log_norm -= std.ln();
        }
        DiagNoise { inv_var, log_norm }
    }

    fn weights(&self, rows: usize) -> Tensor {
        let mut w = Tensor::zeros(rows, self.inv_var.len());
        for r in 0..rows {
            for (c, &v) in self.inv_var.iter().enumerate() {
                w.set(r, c, v);
            }
        }
        w
    }
}

impl LikelihoodDecoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        LikelihoodDecoder {
            net: Mlp::new(
                cfg.mlp(cfg.latent_dim, STATE_DIM + ACTION_DIM),
                FinalInit::Default,
                rng,
            ),
            state_std: cfg.decoder_state_std,
            action_std: cfg.decoder_action_std,
        }
    }

    fn noise(&self) -> DiagNoise {
        DiagNoise::new(self.state_std, self.action_std)
    }

    pub fn reconstruct(&self, z: &Tensor) -> Result<Tensor> {
        self.net.forward(z)
    }

    /// Per-row `log p(s, a | z) = -0.5 sum_i (x_i - x̂_i)² / σ_i² - sum_i log σ_i - (D/2) log 2π`, `n x 1`.
    pub fn log_likelihood(&self, z: &Tensor, s: &Tensor, a: &Tensor) -> Result<Tensor> {
        let x = cat(&[s, a])?;
        let recon = self.reconstruct(z)?;
        let noise = self.noise();
        let sq = x
            .zip_map(&recon, |u, v| (u - v) * (u - v))
            .zip_map(&noise.weights(x.rows()), |d, w| d * w)
            .sum_cols();
        Ok(sq.map(|r| -0.5 * r + noise.log_norm))
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> DecoderVars<'t> {
        self.with_vars(self.net.bind(tape))
    }

    /// This decoder's noise around externally bound network variables.
    pub fn with_vars<'t>(&self, net: MlpVars<'t>) -> DecoderVars<'t> {
        DecoderVars {
            net,
            noise: self.noise(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderVars<'t> {
    pub net: MlpVars<'t>,
    noise: DiagNoise,
}

impl<'t> DecoderVars<'t> {
    pub fn log_likelihood(&self, z: Var<'t>, s: Var<'t>, a: Var<'t>) -> Result<Var<'t>> {
        let x = Var::concat_cols(&[s, a])?;
        let w = x.tape().constant(self.noise.weights(x.shape()[0]));
        let recon = self.net.forward(z)?;
        Ok(x.try_sub(recon)?
            .square()
            .try_mul(w)?
            .sum_cols()
            .scale(-0.5)
            .add_scalar(self.noise.log_norm))
    }
}

/// State-only posterior `q(z | s)` used by the DIAYN-style baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEncoder {
    pub net: Mlp,
}

impl StateEncoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        StateEncoder {
            net: Mlp::new(cfg.mlp(STATE_DIM, 2 * cfg.latent_dim), FINAL_INIT, rng),
        }
    }

    pub fn dist(&self, s: &Tensor) -> Result<DiagGaussian> {
        Ok(DiagGaussian::from_head(&self.net.forward(s)?))
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        self.net.bind(tape)
    }
}

/// Everything a trained agent consists of.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub policy: LatentPolicy,
    pub critics: CriticPair,
    pub encoder: PosteriorEncoder,
    pub decoder: LikelihoodDecoder,
    pub state_encoder: Option<StateEncoder>,
}

impl ModelBundle {
    /// Fresh networks; initialization draws from `rng` in a fixed order.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Self {
        let policy = LatentPolicy::new(&config, rng);
        let critics = CriticPair::new(&config, rng);
        let encoder = PosteriorEncoder::new(&config, rng);
        let decoder = LikelihoodDecoder::new(&config, rng);
        ModelBundle {
            config,
            policy,
            critics,
            encoder,
            decoder,
            state_encoder: None,
        }
    }

    /// Named parameter blocks in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut nets: Vec<(&str, &Mlp)> = vec![
            ("policy", &self.policy.net),
            ("critic1", &self.critics.q1),
            ("critic2", &self.critics.q2),
            ("target1", &self.critics.target1),
            ("target2", &self.critics.target2),
            ("encoder", &self.encoder.net),
            ("decoder", &self.decoder.net),
        ];
        if let Some(se) = &self.state_encoder {
            nets.push(("state_encoder", &se.net));
        }
        let mut out = Vec::new();
        for (name, net) in nets {
            for (i, p) in net.params().iter().enumerate() {
                let kind = if i % 2 == 0 { "w" } else { "b" };
                out.push((format!("{name}.{kind}{}", i / 2), p));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::stream;

    fn bundle() -> ModelBundle {
        ModelBundle::new(
            ModelConfig {
                hidden: 16,
                ..Default::default()
            },
            &mut stream(0, "init"),
        )
    }

    #[test]
    fn zero_final_layer_gives_standard_policy() {
        let mut m = bundle();
        let (w, b) = m.policy.net.final_layer_mut();
        *w = Tensor::zeros(w.rows(), w.cols());
        *b = Tensor::zeros(1, b.cols());
        let d = m
            .policy
            .dist(&Tensor::row(&[0.3, -1.0]), &Tensor::row(&[2.0, 0.5]))
            .unwrap();
        assert_eq!(d.mean.data(), &[0.0, 0.0]);
        assert_eq!(d.log_std.data(), &[0.0, 0.0]);
        let lp = m
            .policy
            .log_prob(&Tensor::row(&[0.3, -1.0]), &Tensor::row(&[2.0, 0.5]), &d.mean)
            .unwrap();
        assert!((lp.item() + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn policy_is_pure_and_sample_with_zero_noise_is_mean() {
        let m = bundle();
        let s = Tensor::row(&[0.1, 0.2]);
        let z = Tensor::row(&[-0.5, 0.5]);
        assert_eq!(m.policy.dist(&s, &z).unwrap(), m.policy.dist(&s, &z).unwrap());
        let mean = m.policy.mean_action(&s, &z).unwrap();
        assert_eq!(m.policy.sample(&s, &z, &Tensor::zeros(1, 2)).unwrap(), mean);
    }

    #[test]
    fn fresh_targets_match_online_min() {
        let m = bundle();
        let s = Tensor::from_rows(&[[0.1, 0.2], [1.0, -1.0]]).unwrap();
        let a = Tensor::from_rows(&[[0.5, 0.5], [-1.0, 0.0]]).unwrap();
        let z = Tensor::from_rows(&[[0.0, 0.0], [0.3, 0.9]]).unwrap();
        assert_eq!(m.critics.target_min_q(&s, &a, &z).unwrap(), m.critics.min_q(&s, &a, &z).unwrap());
    }

    #[test]
    fn full_polyak_step_tracks_online() {
        let mut m = bundle();
        for p in m.critics.q1.params_mut() {
            *p = p.map(|v| v + 0.25);
        }
        m.critics.update_targets(1.0).unwrap();
        assert_eq!(m.critics.target1, m.critics.q1);
        assert_eq!(m.critics.target2, m.critics.q2);
    }

    #[test]
    fn target_min_takes_the_smaller_head() {
        let mut m = bundle();
        for (net, val) in [(&mut m.critics.target1, 2.0), (&mut m.critics.target2, 3.0)] {
            let (w, b) = net.final_layer_mut();
            *w = Tensor::zeros(w.rows(), w.cols());
            *b = Tensor::scalar(val);
        }
        let q = m
            .critics
            .target_min_q(&Tensor::row(&[0.0, 0.0]), &Tensor::row(&[0.0, 0.0]), &Tensor::row(&[0.0, 0.0]))
            .unwrap();
        assert_eq!(q.item(), 2.0);
    }

    #[test]
    fn decoder_log_likelihood_constant_and_residual() {
        let mut m = bundle();
        (m.decoder.state_std, m.decoder.action_std) = (1.0, 1.0);
        let (w, b) = m.decoder.net.final_layer_mut();
        *w = Tensor::zeros(w.rows(), w.cols());
        *b = Tensor::row(&[0.1, 0.2, 0.3, 0.4]);
        let z = Tensor::row(&[0.7, -0.7]);
        let exact = m
            .decoder
            .log_likelihood(&z, &Tensor::row(&[0.1, 0.2]), &Tensor::row(&[0.3, 0.4]))
            .unwrap()
            .item();
        assert!((exact + 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((exact - (-3.675_754_132_818_691)).abs() < 1e-9);
        let off = m
            .decoder
            .log_likelihood(&z, &Tensor::row(&[1.1, 0.2]), &Tensor::row(&[0.3, 0.4]))
            .unwrap()
            .item();
        assert!((off - (exact - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn decoder_noise_scales_per_block() {
        let mut m = bundle();
        (m.decoder.state_std, m.decoder.action_std) = (0.5, 2.0);
        let (w, b) = m.decoder.net.final_layer_mut();
        *w = Tensor::zeros(w.rows(), w.cols());
        *b = Tensor::zeros(1, 4);
        let z = Tensor::row(&[0.0, 0.0]);
        let ll = |s: [f64; 2], a: [f64; 2]| {
            m.decoder.log_likelihood(&z, &Tensor::row(&s), &Tensor::row(&a)).unwrap().item()
        };
        let c = ll([0.0; 2], [0.0; 2]);
        assert!((c - (-2.0 * (2.0 * PI).ln() - 2.0 * 0.5f64.ln() - 2.0 * 2.0f64.ln())).abs() < 1e-12);
        // unit residual costs 0.5 / σ² in its own block
        assert!((ll([1.0, 0.0], [0.0; 2]) - (c - 2.0)).abs() < 1e-12);
        assert!((ll([0.0; 2], [0.0, 1.0]) - (c - 0.125)).abs() < 1e-12);
        let tape = Tape::new();
        let v = m
            .decoder
            .bind(&tape)
            .log_likelihood(
                tape.constant(z.clone()),
                tape.constant(Tensor::row(&[1.0, 0.0])),
                tape.constant(Tensor::row(&[0.0, 1.0])),
            )
            .unwrap();
        assert!((v.value().item() - (c - 2.125)).abs() < 1e-12);
    }

    #[test]
    fn encoder_is_deterministic_per_pair() {
        let m = bundle();
        let s = Tensor::from_rows(&[[0.2, 0.2], [0.2, 0.2]]).unwrap();
        let a = Tensor::from_rows(&[[1.0, -1.0], [1.0, -1.0]]).unwrap();
        let d = m.encoder.dist(&s, &a).unwrap();
        assert_eq!(d.mean.row_slice(0), d.mean.row_slice(1));
        assert_eq!(d.log_std.row_slice(0), d.log_std.row_slice(1));
    }
}
