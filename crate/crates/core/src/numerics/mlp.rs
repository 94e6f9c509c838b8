//! Fully connected ReLU networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer widths of an MLP, input first, output last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape(pub Vec<usize>);

impl MlpShape {
    pub fn new(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, hidden_layers));
        dims.push(output);
        MlpShape(dims)
    }

    pub fn input(&self) -> usize {
        self.0[0]
    }

    pub fn output(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.0.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights are stored `in x out` so a batch `x` maps to `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<Tensor>,
}

/// How the last layer is initialized.
#[derive(Clone, Copy, Debug)]
pub enum FinalInit {
    /// Uniform in `±scale`, zero bias.
    Small(f64),
    Zero,
    /// Same fan-in rule as the hidden layers.
    Default,
}

impl Mlp {
    /// Fan-in uniform initialization on hidden layers.
    pub fn new(shape: MlpShape, final_init: FinalInit, rng: &mut impl Rng) -> Self {
        let n_layers = shape.0.len() - 1;
        let mut params = Vec::with_capacity(2 * n_layers);
        for (l, w) in shape.0.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let last = l + 1 == n_layers;
            let (wb, bb) = match (last, final_init) {
                (true, FinalInit::Small(s)) => (s, 0.0),
                (true, FinalInit::Zero) => (0.0, 0.0),
                _ => (bound, bound),
            };
            let sample = |b: f64, rng: &mut dyn rand::RngCore| {
                if b == 0.0 {
                    0.0
                } else {
                    rng.random_range(-b..b)
                }
            };
            let weight: Vec<f64> = (0..fan_in * fan_out).map(|_| sample(wb, rng)).collect();
            let bias: Vec<f64> = (0..fan_out).map(|_| sample(bb, rng)).collect();
            params.push(Tensor::from_vec(fan_in, fan_out, weight).unwrap());
            params.push(Tensor::row(&bias));
        }
        Mlp { shape, params }
    }

    /// Builds a network from explicit `(weight, bias)` pairs.
    pub fn from_layers(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let mut dims = Vec::new();
        let mut params = Vec::new();
        for (w, b) in layers {
            if let Some(&prev) = dims.last() {
                if w.rows() != prev {
                    return Err(Error::dim("Mlp::from_layers", prev, w.rows()));
                }
            } else {
                dims.push(w.rows());
            }
            if b.shape() != [1, w.cols()] {
                return Err(Error::dim(
                    "Mlp::from_layers bias",
                    format!("1x{}", w.cols()),
                    format!("{:?}", b.shape()),
                ));
            }
            dims.push(w.cols());
            params.push(w);
            params.push(b);
        }
        if params.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        Ok(Mlp {
            shape: MlpShape(dims),
            params,
        })
    }

    /// Rebuilds from a flat parameter list in `[w0, b0, w1, b1, ..]` order.
    pub fn from_params(shape: MlpShape, params: Vec<Tensor>) -> Result<Self> {
        let expected: Vec<[usize; 2]> = shape
            .0
            .windows(2)
            .flat_map(|w| [[w[0], w[1]], [1, w[1]]])
            .collect();
        let got: Vec<[usize; 2]> = params.iter().map(Tensor::shape).collect();
        if expected != got {
            return Err(Error::dim(
                "Mlp::from_params",
                format!("{expected:?}"),
                format!("{got:?}"),
            ));
        }
        Ok(Mlp { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Mutable access to the last layer's `(weight, bias)`.
    pub fn final_layer_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        let n = self.params.len();
        let (head, tail) = self.params.split_at_mut(n - 1);
        (&mut head[n - 2], &mut tail[0])
    }

    /// Forward pass without recording gradients.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.shape.input() {
            return Err(Error::dim(
                "mlp_forward",
                self.shape.input(),
                input.cols(),
            ));
        }
        let n_layers = self.params.len() / 2;
        let mut h = input.clone();
        for l in 0..n_layers {
            let mut z = Tensor::zeros(h.rows(), self.params[2 * l].cols());
            super::tensor::gemm(&h, false, &self.params[2 * l], false, &mut z, 0.0);
            let bias = self.params[2 * l + 1].data();
            let last = l + 1 == n_layers;
            let cols = z.cols();
            for row in z.data_mut().chunks_mut(cols.max(1)) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if !last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Records the parameters on `tape` as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            vars: self.params.iter().map(|p| tape.param(p.clone())).collect(),
            input: self.shape.input(),
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars<'t> {
    vars: Vec<Var<'t>>,
    input: usize,
}

impl<'t> MlpVars<'t> {
    /// Wraps parameter vars laid out as `[w0, b0, w1, b1, ..]`.
    pub fn from_vars(vars: &[Var<'t>]) -> Self {
        let input = vars[0].shape()[0];
        MlpVars {
            vars: vars.to_vec(),
            input,
        }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let cols = x.shape()[1];
        if cols != self.input {
            return Err(Error::dim("mlp_forward", self.input, cols));
        }
        let n_layers = self.vars.len() / 2;
        let mut h = x;
        for l in 0..n_layers {
            h = h.matmul(self.vars[2 * l])?.add_row(self.vars[2 * l + 1])?;
            if l + 1 < n_layers {
                h = h.relu();
            }
        }
        Ok(h)
    }
}
