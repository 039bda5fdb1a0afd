//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every differentiable op appends a node to the tape. Inputs always precede
//! their consumers, so a single reverse sweep from the loss visits nodes in a
//! valid order and sums gradients from every consumer of a shared input.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{gelu_grad, matmul_into, matmul_nt_into, matmul_tn_into, row_stats, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Gelu(Var),
    Tanh(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of executed operations.
#[derive(Debug)]
pub struct GradTape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`. Present for every var that
    /// requires grad; zero-filled when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    fn var(&self, index: usize) -> Var {
        Var { index, tape: self.id }
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::Gradient("variable belongs to a different tape".into()));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| Error::Gradient(format!("unknown variable {}", v.index)))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).expect("variable recorded on this tape").value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        if cfg!(debug_assertions) {
            value.ensure_finite(op.name())?;
        }
        let requires_grad = self.inputs(&op).iter().any(|&v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::SoftmaxRows(a)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::SliceRows { x: a, .. }
            | Op::SliceCols { x: a, .. }
            | Op::CrossEntropy { logits: a, .. } => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, k) = av.dims2()?;
        let (n, k2) = bv.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.transpose()?;
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.node(a)?.value.add(&self.node(b)?.value)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.node(a)?.value.mul(&self.node(b)?.value)?;
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.node(x)?.value.add_row(&self.node(bias)?.value)?;
        self.push(out, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.node(a)?.value.scale(T::lit(s));
        self.push(out, Op::Scale(a, s))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.node(a)?.value;
        let out = v.softmax(v.rank() - 1)?;
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let out = self
            .node(x)?
            .value
            .layer_norm(&self.node(gain)?.value, &self.node(bias)?.value, T::lit(eps))?;
        self.push(out, Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.gelu();
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.tanh_act();
        self.push(out, Op::Tanh(a))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.node(x)?.value.slice_rows(start, len)?;
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.node(x)?.value.slice_cols(start, len)?;
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values = parts
            .iter()
            .map(|&p| self.node(p).map(|n| n.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::concat_rows(&values)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values = parts
            .iter()
            .map(|&p| self.node(p).map(|n| n.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::concat_cols(&values)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.node(a)?.value.sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `logits` (batch × classes) against
    /// class indices, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let value = &self.node(logits)?.value;
        let loss = crate::train::cross_entropy_from_logits(value, labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = self
            .node(loss)
            .map_err(|_| Error::Gradient("loss is not recorded on this tape".into()))?;
        if !loss_node.value.is_scalar() {
            return Err(Error::Gradient(format!(
                "loss must be a scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor::ones(loss_node.value.shape()));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            } else if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.index].value;
        let wants = |v: Var| self.nodes[v.index].requires_grad;
        let mut acc = |v: Var, delta: Tensor<T>| -> Result<()> {
            match &mut grads[v.index] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2()?;
                let (_, n) = val(b).dims2()?;
                if wants(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_into(g.data(), val(b).data(), &mut da, m, n, k);
                    acc(a, Tensor::new(vec![m, k], da)?)?;
                }
                if wants(b) {
                    // dB = Aᵀ · G
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_into(val(a).data(), g.data(), &mut db, m, k, n);
                    acc(b, Tensor::new(vec![k, n], db)?)?;
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = val(a).dims2()?;
                let (n, _) = val(b).dims2()?;
                if wants(a) {
                    // dA = G · B
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g.data(), val(b).data(), &mut da, m, n, k);
                    acc(a, Tensor::new(vec![m, k], da)?)?;
                }
                if wants(b) {
                    // dB = Gᵀ · A
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn_into(g.data(), val(a).data(), &mut db, m, n, k);
                    acc(b, Tensor::new(vec![n, k], db)?)?;
                }
            }
            &Op::Transpose(a) => {
                if wants(a) {
                    acc(a, g.transpose()?)?;
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    acc(a, g.clone())?;
                }
                if wants(b) {
                    acc(b, g.clone())?;
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    acc(a, g.mul(val(b))?)?;
                }
                if wants(b) {
                    acc(b, g.mul(val(a))?)?;
                }
            }
            &Op::AddRow(x, bias) => {
                if wants(x) {
                    acc(x, g.clone())?;
                }
                if wants(bias) {
                    let d = val(bias).numel();
                    let mut db = vec![T::zero(); d];
                    for row in g.data().chunks(d) {
                        for (o, &v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(bias, Tensor::new(val(bias).shape().to_vec(), db)?)?;
                }
            }
            &Op::Scale(a, s) => {
                if wants(a) {
                    acc(a, g.scale(T::lit(s)))?;
                }
            }
            &Op::SoftmaxRows(a) => {
                if wants(a) {
                    let y = &node.value;
                    let n = *y.shape().last().expect("rank >= 1");
                    let mut dx = Vec::with_capacity(y.numel());
                    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                    }
                    acc(a, Tensor::new(y.shape().to_vec(), dx)?)?;
                }
            }
            &Op::LayerNorm { x, gain, bias, eps } => {
                let xv = val(x);
                let gv = val(gain);
                let d = gv.numel();
                let nf = T::lit(d as f64);
                let mut dx = Vec::with_capacity(xv.numel());
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for (xr, gr) in xv.data().chunks(d).zip(g.data().chunks(d)) {
                    let (mean, inv_std) = row_stats(xr, T::lit(eps));
                    for j in 0..d {
                        xhat[j] = (xr[j] - mean) * inv_std;
                        dxhat[j] = gr[j] * gv.data()[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let sum_dxhat: T = dxhat.iter().copied().sum();
                    let sum_dxhat_xhat: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dx.push(inv_std / nf * (nf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat));
                    }
                }
                if wants(x) {
                    acc(x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
                if wants(gain) {
                    acc(gain, Tensor::new(gv.shape().to_vec(), dgain)?)?;
                }
                if wants(bias) {
                    acc(bias, Tensor::new(val(bias).shape().to_vec(), dbias)?)?;
                }
            }
            &Op::Gelu(a) => {
                if wants(a) {
                    let d = val(a).map(gelu_grad).mul(g)?;
                    acc(a, d)?;
                }
            }
            &Op::Tanh(a) => {
                if wants(a) {
                    let d = node.value.map(|t| T::one() - t * t).mul(g)?;
                    acc(a, d)?;
                }
            }
            &Op::SliceRows { x, start } => {
                if wants(x) {
                    let xv = val(x);
                    let (_, c) = xv.dims2()?;
                    let mut dx = Tensor::zeros(xv.shape());
                    dx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                    acc(x, dx)?;
                }
            }
            &Op::SliceCols { x, start } => {
                if wants(x) {
                    let xv = val(x);
                    let (r, c) = xv.dims2()?;
                    let (_, w) = g.dims2()?;
                    let mut dx = Tensor::zeros(xv.shape());
                    for i in 0..r {
                        dx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    acc(x, dx)?;
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let (pr, _) = val(p).dims2()?;
                    if wants(p) {
                        acc(p, g.slice_rows(row, pr)?)?;
                    }
                    row += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let (_, pc) = val(p).dims2()?;
                    if wants(p) {
                        acc(p, g.slice_cols(col, pc)?)?;
                    }
                    col += pc;
                }
            }
            &Op::Sum(a) => {
                if wants(a) {
                    acc(a, Tensor::full(val(a).shape(), g.item()))?;
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let logits = *logits;
                if wants(logits) {
                    let z = val(logits);
                    let (b, c) = z.dims2()?;
                    let probs = z.softmax(1)?;
                    let scale = g.item() / T::lit(b as f64);
                    let mut dz = probs.into_data();
                    for (i, &label) in labels.iter().enumerate() {
                        dz[i * c + label] -= T::one();
                    }
                    for v in dz.iter_mut() {
                        *v *= scale;
                    }
                    acc(logits, Tensor::new(vec![b, c], dz)?)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn zero_times_x_gives_zero_gradient() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[3], &[1., -2., 3.]).unwrap());
        let zx = tape.scale(x, 0.0).unwrap();
        let s = tape.sum(zx).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::zeros(&[3]));
    }

    #[test]
    fn untouched_param_gets_zero_gradient() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        let unused = tape.param(Tensor::ones(&[4]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[4]));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = GradTape::<f64>::new();
        let c = tape.constant(Tensor::ones(&[2]));
        let x = tape.param(Tensor::ones(&[2]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
    }

    #[test]
    fn two_consumers_accumulate() {
        // f(x) = sum(x ⊙ x) + sum(3x)  ⇒  df/dx = 2x + 3
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let tri = tape.scale(x, 3.0).unwrap();
        let a = tape.sum(sq).unwrap();
        let b = tape.sum(tri).unwrap();
        let f = tape.add(a, b).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0, -1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Gradient(_))));
    }

    #[test]
    fn foreign_loss_rejected() {
        let mut other = GradTape::<f64>::new();
        let foreign = other.param(Tensor::ones(&[1]));
        let tape = GradTape::<f64>::new();
        assert!(matches!(tape.backward(foreign), Err(Error::Gradient(_))));
    }

    #[test]
    #[cfg(debug_assertions)]
    fn non_finite_output_is_an_error() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[1], &[f64::MAX]).unwrap());
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
    }
}
