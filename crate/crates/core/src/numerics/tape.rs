//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a `1 x 1` result walks the record in reverse and
//! returns the gradient of every node. Tapes are cheap and meant to be built
//! fresh for each minibatch.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SumCols(usize),
    Mean(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).finish()
    }
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.idx] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.idx];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn collect(&self, vars: &[Var<'_>]) -> Vec<Tensor> {
        vars.iter().map(|v| self.wrt(*v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// A differentiable input (typically a parameter).
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that is treated as data: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].needs_grad)
        };
        self.push(value, op, ng)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'_>> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value)?,
                nodes[a].needs_grad || nodes[b].needs_grad,
            )
        };
        Ok(self.push(value, op, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.idx].value.shape();
        if shape != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape[0], shape[1]
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            let val = |j: usize| &nodes[j].value;
            let wants = |j: usize| nodes[j].needs_grad;
            let mut acc = |j: usize, delta: Tensor| match &mut grads[j] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if wants(a) {
                        let mut da = Tensor::zeros(val(a).rows(), val(a).cols());
                        gemm(&g, false, val(b), true, &mut da, 0.0);
                        acc(a, da);
                    }
                    if wants(b) {
                        let mut db = Tensor::zeros(val(b).rows(), val(b).cols());
                        gemm(val(a), true, &g, false, &mut db, 0.0);
                        acc(b, db);
                    }
                }
                Op::AddRow(a, b) => {
                    let (a, b) = (*a, *b);
                    if wants(b) {
                        let cols = g.cols();
                        let mut db = vec![0.0; cols];
                        for r in 0..g.rows() {
                            for (d, v) in db.iter_mut().zip(g.row_slice(r)) {
                                *d += v;
                            }
                        }
                        acc(b, Tensor::row(&db));
                    }
                    if wants(a) {
                        acc(a, g.clone());
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if wants(a) {
                        acc(a, g.clone());
                    }
                    if wants(b) {
                        acc(b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if wants(a) {
                        acc(a, g.clone());
                    }
                    if wants(b) {
                        acc(b, g.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if wants(a) {
                        acc(a, g.zip_map(val(b), |x, y| x * y));
                    }
                    if wants(b) {
                        acc(b, g.zip_map(val(a), |x, y| x * y));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(*a, g.map(|v| v * k));
                }
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Relu(a) => {
                    let a = *a;
                    acc(a, g.zip_map(val(a), |x, y| if y > 0.0 { x } else { 0.0 }));
                }
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)),
                Op::Square(a) => {
                    let a = *a;
                    acc(a, g.zip_map(val(a), |x, y| 2.0 * x * y));
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    acc(
                        a,
                        g.zip_map(val(a), |x, y| if y >= lo && y <= hi { x } else { 0.0 }),
                    );
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if wants(p) {
                            acc(p, g.slice_cols(start, start + w));
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (a, start) = (*a, *start);
                    let src = val(a);
                    let mut d = Tensor::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            d.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(a, d);
                }
                Op::SumCols(a) => {
                    let a = *a;
                    let src = val(a);
                    let mut d = Tensor::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        let gv = g.get(r, 0);
                        for c in 0..src.cols() {
                            d.set(r, c, gv);
                        }
                    }
                    acc(a, d);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let src = val(a);
                    let n = src.len().max(1) as f64;
                    acc(a, Tensor::filled(src.rows(), src.cols(), g.item() / n));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Runs `f` against the stored value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.with_value(|v| v.shape())
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_shape(&self, other: Var<'t>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::dim(op, format!("{a:?}"), format!("{b:?}")));
        }
        Ok(())
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.idx, rhs.idx, Op::MatMul(self.idx, rhs.idx), |a, b| {
                a.matmul(b)
            })
    }

    /// Adds a `1 x cols` row to every row of `self`.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.idx, bias.idx, Op::AddRow(self.idx, bias.idx), |a, b| {
                a.add_row(b)
            })
    }

    pub fn try_add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(rhs, "add")?;
        self.tape
            .binary(self.idx, rhs.idx, Op::Add(self.idx, rhs.idx), |a, b| {
                Ok(a.zip_map(b, |x, y| x + y))
            })
    }

    pub fn try_sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(rhs, "sub")?;
        self.tape
            .binary(self.idx, rhs.idx, Op::Sub(self.idx, rhs.idx), |a, b| {
                Ok(a.zip_map(b, |x, y| x - y))
            })
    }

    pub fn try_mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(rhs, "mul")?;
        self.tape
            .binary(self.idx, rhs.idx, Op::Mul(self.idx, rhs.idx), |a, b| {
                Ok(a.zip_map(b, |x, y| x * y))
            })
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Scale(self.idx, k), |a| a.map(|v| v * k))
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::AddScalar(self.idx), |a| a.map(|v| v + k))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Relu(self.idx), |a| a.map(|v| v.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Exp(self.idx), |a| a.map(f64::exp))
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Square(self.idx), |a| a.map(|v| v * v))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Clamp(self.idx, lo, hi), |a| {
            a.map(|v| v.clamp(lo, hi))
        })
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?
            .tape;
        let (value, ng) = {
            let nodes = tape.nodes.borrow();
            let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.idx].value).collect();
            (
                Tensor::concat_cols(&refs)?,
                parts.iter().any(|p| nodes[p.idx].needs_grad),
            )
        };
        Ok(tape.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.idx).collect()),
            ng,
        ))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::SliceCols(self.idx, start), |a| {
            a.slice_cols(start, end)
        })
    }

    /// Row sums, `n x d -> n x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::SumCols(self.idx), Tensor::sum_cols)
    }

    /// Mean of all entries, `-> 1 x 1`.
    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Mean(self.idx), |a| {
            Tensor::scalar(a.mean())
        })
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.try_add(rhs).expect("shape mismatch in Var + Var")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.try_sub(rhs).expect("shape mismatch in Var - Var")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.try_mul(rhs).expect("shape mismatch in Var * Var")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.square();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(-1.0));
        let g = tape.backward(x.relu()).unwrap();
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.param(Tensor::row(&[1.0, 2.0]));
        let g = tape.backward(x.square()).unwrap();
        assert_eq!(g.wrt(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_stop_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let w = tape.constant(Tensor::scalar(5.0));
        let loss = (x * w).square();
        let g = tape.backward(loss).unwrap();
        // d/dx (5x)^2 = 50x
        assert_eq!(g.wrt(x).item(), 100.0);
        assert_eq!(g.wrt(w).item(), 0.0);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.5));
        let y = x * x + x.exp();
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).item() - (3.0 + 1.5f64.exp())).abs() < 1e-12);
    }
}
