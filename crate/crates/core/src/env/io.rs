//! Binary dataset files.
//!
//! Layout: the 8-byte magic `DIVEOFF1`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then little-endian `f64` arrays `s`, `a`, `r`,
//! `s_next` and finally one byte per `done` flag. Array lengths are declared
//! in the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta, NormStats};
use super::Vec2;
use crate::error::{Error, Result};
use crate::util::{put_f64s, Cursor};

pub const DATASET_MAGIC: &[u8; 8] = b"DIVEOFF1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    state_dim: usize,
    action_dim: usize,
    count: usize,
    /// Element counts of `s`, `a`, `r`, `s_next`, `done`, in file order.
    array_lens: [usize; 5],
    norm: NormStats,
    meta: DatasetMeta,
}

fn pairs(flat: Vec<f64>) -> Vec<Vec2> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let n = ds.len();
    let header = Header {
        version: VERSION,
        state_dim: 2,
        action_dim: 2,
        count: n,
        array_lens: [2 * n, 2 * n, n, 2 * n, n],
        norm: ds.norm.clone(),
        meta: ds.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + n * 57);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    put_f64s(&mut out, ds.states.iter().flatten().copied());
    put_f64s(&mut out, ds.actions.iter().flatten().copied());
    put_f64s(&mut out, ds.rewards.iter().copied());
    put_f64s(&mut out, ds.next_states.iter().flatten().copied());
    out.extend(ds.dones.iter().map(|&d| u8::from(d)));
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8).map_err(|_| Error::Format("missing magic".into()))? != DATASET_MAGIC {
        return Err(Error::Format("bad magic, not a dataset file".into()));
    }
    let hlen = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?)
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {}",
            header.version
        )));
    }
    let n = header.count;
    if header.state_dim != 2 || header.action_dim != 2 || header.array_lens != [2 * n, 2 * n, n, 2 * n, n] {
        return Err(Error::Format("inconsistent array lengths in header".into()));
    }
    let states = pairs(cur.f64s(2 * n)?);
    let actions = pairs(cur.f64s(2 * n)?);
    let rewards = cur.f64s(n)?;
    let next_states = pairs(cur.f64s(2 * n)?);
    let dones = cur
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid done byte {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    cur.finish()?;
    Ok(Dataset {
        states,
        actions,
        rewards,
        next_states,
        dones,
        norm: header.norm,
        meta: header.meta,
    })
}

pub fn dataset_write(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn dataset_read(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?)
}
