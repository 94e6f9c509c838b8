//! Dense math, reverse-mode gradients, optimizers, and Gaussian primitives.

pub mod adam;
pub mod fdcheck;
pub mod gaussian;
pub mod mlp;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{polyak_update, AdamState};
pub use fdcheck::fd_check;
pub use gaussian::{DiagGaussian, GaussianVar};
pub use mlp::{FinalInit, Mlp, MlpShape, MlpVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
