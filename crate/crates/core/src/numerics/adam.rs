//! Adam with bias correction, and Polyak averaging for target networks.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            lr,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must line up with the shapes given
    /// at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam_step",
                self.m.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{:?}", self.m[i].shape()),
                    format!("param {:?} grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    what: format!("non-finite gradient in parameter block {i}"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.lr;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step: self.step,
                what: "non-finite parameter after Adam step".into(),
            });
        }
        Ok(())
    }
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn polyak_update(target: &mut [Tensor], online: &[Tensor], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!("polyak rate {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::dim("polyak_update", target.len(), online.len()));
    }
    for (t, o) in target.iter_mut().zip(online) {
        if t.shape() != o.shape() {
            return Err(Error::dim(
                "polyak_update",
                format!("{:?}", t.shape()),
                format!("{:?}", o.shape()),
            ));
        }
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
    Ok(())
}
