//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; [`Graph::backward`] walks it once in reverse.

use rand::Rng;

use super::mask::{MaskMatrix, MaskMode};
use super::ops;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Transpose(NodeId),
    Softmax(NodeId),
    MaskedSoftmax {
        x: NodeId,
        mask: MaskMatrix,
        mode: MaskMode,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Gelu(NodeId),
    Tanh(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Gather {
        table: NodeId,
        idx: Vec<usize>,
    },
    Dropout {
        x: NodeId,
        keep: Vec<T>,
    },
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. One graph is built per forward pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf => false,
            op => parents(op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].requires_grad = true;
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn check_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::Shape {
                op,
                lhs: self.value(a).dims().to_vec(),
                rhs: self.value(b).dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// `x[i, j] + bias[j]` for every row `i`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, c) = self.value(x).shape2();
        if self.value(bias).len() != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.value(x).dims().to_vec(),
                rhs: self.value(bias).dims().to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (k, e) in v.data_mut().iter_mut().enumerate() {
            *e = *e + b[k % c];
        }
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for (e, &y) in v.data_mut().iter_mut().zip(&bv) {
            *e = *e * y;
        }
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let v = self.value(x).map(|e| e * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::softmax_rows(self.value(x))?;
        Ok(self.push(v, Op::Softmax(x)))
    }

    /// The mask is a constant: no gradient flows into it.
    pub fn masked_softmax(
        &mut self,
        x: NodeId,
        mask: &MaskMatrix,
        mode: MaskMode,
    ) -> Result<NodeId> {
        let v = ops::masked_softmax(self.value(x), mask, mode)?;
        Ok(self.push(
            v,
            Op::MaskedSoftmax {
                x,
                mask: mask.clone(),
                mode,
            },
        ))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let v = ops::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let (xhat, inv_std) = ops::normalize_rows(self.value(x), eps);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(ops::gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, Op::Tanh(x))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).shape2();
        if len == 0 || start + len > c {
            return Err(Error::contract(format!(
                "column slice {start}..{} out of {c}",
                start + len
            )));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![r, len], data)?;
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = parts
            .first()
            .map(|&p| self.value(p).shape2().0)
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).shape2().0 != r) {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: self.value(parts[0]).dims().to_vec(),
                rhs: self.value(bad).dims().to_vec(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).shape2().1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![r, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows of `table` at `idx`, as a `len(idx) x cols` matrix.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(table).shape2();
        if idx.is_empty() {
            return Err(Error::contract("gather of no rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!("row {bad} out of range for {r} rows")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.value(table).row(i));
        }
        let v = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(
            v,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Inverted dropout. Returns `x` itself when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return x;
        }
        let scale = T::from_f64(1.0 / (1.0 - rate));
        let keep: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mut v = self.value(x).clone();
        for (e, &k) in v.data_mut().iter_mut().zip(&keep) {
            *e = *e * k;
        }
        self.push(v, Op::Dropout { x, keep })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if target >= l.len() {
            return Err(Error::contract(format!(
                "target class {target} out of {} classes",
                l.len()
            )));
        }
        let row = l.clone().reshape(vec![1, l.len()])?;
        let probs = ops::softmax_rows(&row)?.into_data();
        let max = row.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max
            + row
                .data()
                .iter()
                .fold(T::zero(), |a, &x| a + (x - max).exp())
                .ln();
        let loss = lse - row.data()[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match (&node.op, grads[i].take()) {
                (_, None) => continue,
                (Op::Leaf, Some(g)) => {
                    grads[i] = Some(g);
                    continue;
                }
                (_, Some(g)) => g,
            };
            self.propagate(i, &g, &mut grads)?;
        }
        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, dims })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |id: NodeId, t: Tensor<T>| -> Result<()> {
            if !self.nodes[id.0].requires_grad {
                return Ok(());
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, ops::matmul(g, &bv.transpose())?)?;
                acc(*b, ops::matmul(&av.transpose(), g)?)?;
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone())?;
                let bdims = self.value(*bias).dims().to_vec();
                acc(*bias, Tensor::new(bdims, column_sums(g))?)?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, bv, |x, y| x * y))?;
                acc(*b, zip_map(g, av, |x, y| x * y))?;
            }
            Op::Scale(x, s) => acc(*x, g.map(|e| e * *s))?,
            Op::Transpose(x) => acc(*x, g.transpose())?,
            Op::Softmax(x) => acc(*x, softmax_backward(&node.value, g))?,
            Op::MaskedSoftmax { x, mask, mode } => {
                let mut dz = softmax_backward(&node.value, g);
                if *mode == MaskMode::Multiplicative {
                    for (e, &b) in dz.data_mut().iter_mut().zip(mask.bits()) {
                        if b == 0 {
                            *e = T::zero();
                        }
                    }
                }
                acc(*x, dz)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = xhat.shape2();
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dx = vec![T::zero(); r * c];
                let n = T::from_f64(c as f64);
                for row in 0..r {
                    let gr = g.row(row);
                    let xr = xhat.row(row);
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..c {
                        dgain[j] = dgain[j] + gr[j] * xr[j];
                        let d = gr[j] * gv[j];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xr[j];
                    }
                    let s = inv_std[row] / n;
                    for j in 0..c {
                        let d = gr[j] * gv[j];
                        dx[row * c + j] = s * (n * d - sum_d - xr[j] * sum_dx);
                    }
                }
                acc(*x, Tensor::new(self.value(*x).dims().to_vec(), dx)?)?;
                let gdims = self.value(*gain).dims().to_vec();
                acc(*gain, Tensor::new(gdims.clone(), dgain)?)?;
                acc(*bias, Tensor::new(gdims, column_sums(g))?)?;
            }
            Op::Gelu(x) => acc(*x, zip_map(g, self.value(*x), |d, v| d * ops::gelu_grad(v)))?,
            Op::Tanh(x) => acc(*x, zip_map(g, &node.value, |d, y| d * (T::one() - y * y)))?,
            Op::SliceCols { x, start } => {
                let src = self.value(*x);
                let (r, c) = src.shape2();
                let (_, w) = g.shape2();
                let mut d = vec![T::zero(); r * c];
                for row in 0..r {
                    d[row * c + start..row * c + start + w].copy_from_slice(g.row(row));
                }
                acc(*x, Tensor::new(src.dims().to_vec(), d)?)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, w) = self.value(p).shape2();
                    let mut d = Vec::with_capacity(r * w);
                    for row in 0..r {
                        d.extend_from_slice(&g.row(row)[offset..offset + w]);
                    }
                    offset += w;
                    acc(p, Tensor::new(self.value(p).dims().to_vec(), d)?)?;
                }
            }
            Op::Gather { table, idx } => {
                let t = self.value(*table);
                let (_, c) = t.shape2();
                let mut d = Tensor::zeros(t.dims().to_vec());
                for (k, &row) in idx.iter().enumerate() {
                    let dst = &mut d.data_mut()[row * c..(row + 1) * c];
                    for (o, &v) in dst.iter_mut().zip(g.row(k)) {
                        *o = *o + v;
                    }
                }
                acc(*table, d)?;
            }
            Op::Dropout { x, keep } => {
                let mut d = g.clone();
                for (e, &k) in d.data_mut().iter_mut().zip(keep) {
                    *e = *e * k;
                }
                acc(*x, d)?;
            }
            Op::Sum(x) => {
                let dims = self.value(*x).dims().to_vec();
                acc(*x, Tensor::full(dims, g.data()[0]))?;
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let scale = g.data()[0];
                let d = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        let y = if k == *target { T::one() } else { T::zero() };
                        (p - y) * scale
                    })
                    .collect();
                acc(*logits, Tensor::new(self.value(*logits).dims().to_vec(), d)?)?;
            }
        }
        Ok(())
    }
}

fn parents<T>(op: &Op<T>) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::Transpose(x)
        | Op::Softmax(x)
        | Op::Gelu(x)
        | Op::Tanh(x)
        | Op::Sum(x) => vec![*x],
        Op::MaskedSoftmax { x, .. } | Op::SliceCols { x, .. } | Op::Dropout { x, .. } => vec![*x],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::ConcatCols(parts) => parts.clone(),
        Op::Gather { table, .. } => vec![*table],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Vec<T> {
    let (r, c) = g.shape2();
    let mut out = vec![T::zero(); c];
    for i in 0..r {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o = *o + v;
        }
    }
    out
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = a.clone();
    for (e, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *e = f(*e, y);
    }
    out
}

/// `dx_i = y_i * sum_k y_k (dy_i - dy_k)`, which is exactly zero when the
/// upstream gradient is constant along the row.
fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (r, c) = y.shape2();
    let mut dx = Tensor::zeros(y.dims().to_vec());
    for i in 0..r {
        let yr = y.row(i);
        let dr = dy.row(i);
        for j in 0..c {
            if yr[j] == T::zero() {
                continue;
            }
            let mut s = T::zero();
            for k in 0..c {
                s = s + yr[k] * (dr[j] - dr[k]);
            }
            dx.data_mut()[i * c + j] = yr[j] * s;
        }
    }
    dx
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    dims: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `id`; zeros when `id` is not on
    /// any path to the loss.
    pub fn get(&self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.dims[id.0].clone()))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.dims[id.0].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w), Tensor::full(vec![2, 2], 1.0));
    }

    #[test]
    fn sum_of_softmax_has_exactly_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_rows(&[&[0.3, -1.2, 4.0], &[7.0, 7.5, -3.0]]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full(vec![3], 2.0));
        let b = g.param(Tensor::full(vec![2, 2], 5.0));
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn shared_use_accumulates() {
        // loss = sum(x * x) -> dx = 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_rows(&[&[1.0, -2.0, 3.0]]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient_and_do_not_taint() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::full(vec![2], 1.0));
        let s = g.sum(c);
        assert!(g.backward(s).unwrap().get(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut g = Graph::<f64>::new();
        let l = g.param(Tensor::zeros(vec![2]));
        let loss = g.cross_entropy(l, 1).unwrap();
        assert!((g.value(loss).data()[0] - 2f64.ln()).abs() < 1e-15);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(l).data(), &[0.5, -0.5]);
    }
}
