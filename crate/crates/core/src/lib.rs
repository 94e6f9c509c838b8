//! Offline reinforcement learning that recovers several distinct solutions
//! to a single task from a fixed dataset.
//!
//! A latent-conditioned policy, twin critics, a posterior encoder and a
//! likelihood decoder are trained by alternating advantage-weighted updates,
//! with a mutual-information term that keeps different latent values
//! behaving differently. The crate also carries the toy point-mass task used
//! to exercise it and the evaluation metrics (diversity score, entropy bound,
//! few-shot adaptation).

pub mod diveoff;
pub mod env;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
mod util;

pub use error::{Error, Result};
