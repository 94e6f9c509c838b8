//! Checkpoint files.
//!
//! Layout: the magic `DIVEOFFCKPT1`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then every parameter block as little-endian `f64` in
//! the order listed by the header's `arrays` field: policy, critic1, critic2,
//! target1, target2, encoder, decoder and, for the DIAYN baseline,
//! state_encoder. Each network contributes `w0, b0, w1, b1, ...`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CriticPair, LatentPolicy, LikelihoodDecoder, ModelBundle, ModelConfig, PosteriorEncoder,
    StateEncoder, ACTION_DIM, STATE_DIM,
};
use crate::env::{EnvConfig, NormStats};
use crate::error::{Error, Result};
use crate::numerics::mlp::{Mlp, MlpShape};
use crate::numerics::Tensor;
use crate::util::{put_f64s, Cursor};

pub const CKPT_MAGIC: &[u8; 12] = b"DIVEOFFCKPT1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub algo: String,
    pub model: ModelConfig,
    pub norm: NormStats,
    pub env: EnvConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub step: u64,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub models: ModelBundle,
}

impl Checkpoint {
    /// Fills `version` and `arrays` from the models.
    pub fn new(
        models: ModelBundle,
        algo: &str,
        norm: NormStats,
        env: EnvConfig,
        config_hash: String,
        dataset_hash: String,
        step: u64,
    ) -> Self {
        let arrays = models
            .named_params()
            .into_iter()
            .map(|(name, t)| ArraySpec {
                name,
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                version: VERSION,
                algo: algo.to_string(),
                model: models.config.clone(),
                norm,
                env,
                config_hash,
                dataset_hash,
                step,
                arrays,
            },
            models,
        }
    }
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in ckpt.models.named_params() {
        put_f64s(&mut out, t.data().iter().copied());
    }
    Ok(out)
}

fn read_mlp(cur: &mut Cursor<'_>, shape: MlpShape) -> Result<Mlp> {
    let mut params = Vec::new();
    for w in shape.0.windows(2) {
        params.push(Tensor::from_vec(w[0], w[1], cur.f64s(w[0] * w[1])?)?);
        params.push(Tensor::from_vec(1, w[1], cur.f64s(w[1])?)?);
    }
    Mlp::from_params(shape, params)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    if cur.take(CKPT_MAGIC.len()).map_err(|_| Error::Format("missing magic".into()))? != CKPT_MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let hlen = cur.u64()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(cur.take(hlen)?)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let cfg = header.model.clone();
    let has_state_encoder = header.arrays.iter().any(|a| a.name.starts_with("state_encoder"));
    let mlp = |i, o| MlpShape::new(i, cfg.hidden, cfg.hidden_layers, o);
    let z = cfg.latent_dim;
    let policy = LatentPolicy {
        net: read_mlp(&mut cur, mlp(STATE_DIM + z, 2 * ACTION_DIM))?,
    };
    let q_shape = mlp(STATE_DIM + ACTION_DIM + z, 1);
    let critics = CriticPair {
        q1: read_mlp(&mut cur, q_shape.clone())?,
        q2: read_mlp(&mut cur, q_shape.clone())?,
        target1: read_mlp(&mut cur, q_shape.clone())?,
        target2: read_mlp(&mut cur, q_shape)?,
    };
    let encoder = PosteriorEncoder {
        net: read_mlp(&mut cur, mlp(STATE_DIM + ACTION_DIM, 2 * z))?,
    };
    let decoder = LikelihoodDecoder {
        net: read_mlp(&mut cur, mlp(z, STATE_DIM + ACTION_DIM))?,
        state_std: cfg.decoder_state_std,
        action_std: cfg.decoder_action_std,
    };
    let state_encoder = if has_state_encoder {
        Some(StateEncoder {
            net: read_mlp(&mut cur, mlp(STATE_DIM, 2 * z))?,
        })
    } else {
        None
    };
    cur.finish()?;
    let models = ModelBundle {
        config: cfg,
        policy,
        critics,
        encoder,
        decoder,
        state_encoder,
    };
    let declared: Vec<(String, usize, usize)> = header
        .arrays
        .iter()
        .map(|a| (a.name.clone(), a.rows, a.cols))
        .collect();
    let actual: Vec<(String, usize, usize)> = models
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.rows(), t.cols()))
        .collect();
    if declared != actual {
        return Err(Error::Format("array table does not match architecture".into()));
    }
    Ok(Checkpoint { header, models })
}

pub fn checkpoint_write(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(ckpt)?)?;
    Ok(())
}

pub fn checkpoint_read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}
