//! Central finite-difference gradient check.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, over the parameter tensors.
///
/// `loss` builds a scalar on the tape from vars bound to `params`; it must be
/// a deterministic function of the parameters. The error of one parameter
/// tensor is `|analytic - numeric| / max(1e-8, |numeric|)` with Euclidean
/// norms, so a single entry whose true gradient is near zero does not turn
/// difference roundoff into a large ratio.
pub fn fd_check<F>(params: &[Tensor], step: f64, loss: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let l = loss(&tape, &vars)?;
        tape.backward(l)?.collect(&vars)
    };
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        Ok(loss(&tape, &vars)?.value().item())
    };

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for k in 0..grad.len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff2 += (grad.data()[k] - numeric).powi(2);
            norm2 += numeric * numeric;
        }
        worst = worst.max(diff2.sqrt() / norm2.sqrt().max(1e-8));
    }
    Ok(worst)
}
