//! Diagonal Gaussians, both as plain values and as tape expressions.
//!
//! A distribution holds one row per batch element: `mean` and `log_std` are
//! `n x d`. The single-vector case is simply `n = 1`.

use std::f64::consts::PI;

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub log_std: Tensor,
}

impl DiagGaussian {
    /// Clamps `log_std` into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Tensor, log_std: Tensor) -> Result<Self> {
        if mean.shape() != log_std.shape() {
            return Err(Error::dim(
                "DiagGaussian::new",
                format!("{:?}", mean.shape()),
                format!("{:?}", log_std.shape()),
            ));
        }
        Ok(DiagGaussian {
            mean,
            log_std: log_std.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)),
        })
    }

    /// Splits a head output `[mean | raw log_std]` of width `2d`.
    pub fn from_head(out: &Tensor) -> Self {
        let d = out.cols() / 2;
        DiagGaussian::new(out.slice_cols(0, d), out.slice_cols(d, 2 * d)).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    /// Per-row log density, `n x 1`.
    pub fn log_prob(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.mean.shape() {
            return Err(Error::dim(
                "gaussian_log_prob",
                format!("{:?}", self.mean.shape()),
                format!("{:?}", x.shape()),
            ));
        }
        let d = self.dim() as f64;
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let mut acc = -d * half_log_two_pi();
            for ((&xv, &m), &ls) in x
                .row_slice(r)
                .iter()
                .zip(self.mean.row_slice(r))
                .zip(self.log_std.row_slice(r))
            {
                let u = (xv - m) * (-ls).exp();
                acc -= 0.5 * u * u + ls;
            }
            out.push(acc);
        }
        Tensor::from_vec(x.rows(), 1, out)
    }

    /// `mean + exp(log_std) * noise`.
    pub fn sample_reparam(&self, noise: &Tensor) -> Result<Tensor> {
        if noise.shape() != self.mean.shape() {
            return Err(Error::dim(
                "gaussian_sample_reparam",
                format!("{:?}", self.mean.shape()),
                format!("{:?}", noise.shape()),
            ));
        }
        let scaled = self.log_std.zip_map(noise, |ls, n| ls.exp() * n);
        Ok(self.mean.zip_map(&scaled, |m, s| m + s))
    }

    /// Closed-form `KL(self || N(0, I))` per row, `n x 1`.
    pub fn kl_to_standard_normal(&self) -> Tensor {
        let per = self
            .mean
            .zip_map(&self.log_std, |m, ls| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls));
        per.sum_cols()
    }
}

/// A [`DiagGaussian`] whose parameters are tape expressions.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar<'t> {
    pub mean: Var<'t>,
    pub log_std: Var<'t>,
}

impl<'t> GaussianVar<'t> {
    /// Splits a head output `[mean | raw log_std]` and clamps the log-std.
    pub fn from_head(out: Var<'t>) -> Self {
        let d = out.shape()[1] / 2;
        GaussianVar {
            mean: out.slice_cols(0, d),
            log_std: out.slice_cols(d, 2 * d).clamp(LOG_STD_MIN, LOG_STD_MAX),
        }
    }

    pub fn value(&self) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.value(),
            log_std: self.log_std.value(),
        }
    }

    /// Per-row log density of `x`, `n x 1`.
    pub fn log_prob(&self, x: Var<'t>) -> Result<Var<'t>> {
        let d = self.mean.shape()[1] as f64;
        let inv_std = (-self.log_std).exp();
        let u = x.try_sub(self.mean)?.try_mul(inv_std)?;
        let per = u.square().scale(-0.5) - self.log_std;
        Ok(per.sum_cols().add_scalar(-d * half_log_two_pi()))
    }

    pub fn sample_reparam(&self, noise: Var<'t>) -> Result<Var<'t>> {
        self.mean.try_add(self.log_std.exp().try_mul(noise)?)
    }

    /// Per-row `KL(self || N(0, I))`, `n x 1`.
    pub fn kl_to_standard_normal(&self) -> Var<'t> {
        let var = self.log_std.scale(2.0).exp();
        let per = (self.mean.square() + var - self.log_std.scale(2.0)).add_scalar(-1.0);
        per.scale(0.5).sum_cols()
    }
}
