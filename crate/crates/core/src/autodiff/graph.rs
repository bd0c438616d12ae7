use crate::error::{invalid, shape_err, Error, Result};

use super::kernels::{gemm_acc, gemm_at_acc, gemm_bt_acc, split_axis};
use super::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Concat { inputs: Vec<Var>, axis: usize },
    Mean { x: Var, axis: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Transpose(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    MaskedFill { x: Var, mask: Vec<bool> },
    Softmax { x: Var, axis: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Map { x: Var, deriv: fn(T, T) -> T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid reverse topological order.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    kinks: u64,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` does not depend on any grad-requiring input or lies
    /// outside the loss's cone.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kinks: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every ReLU activation pattern seen so far. Two evaluations
    /// with equal signatures took the same linear pieces.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let finite = match &op {
            Op::MaskedFill { mask, .. } => value
                .data()
                .iter()
                .zip(mask)
                .all(|(v, &m)| m || v.is_finite()),
            _ => value.all_finite(),
        };
        if !finite {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m×k]·[k×n]` or batched `[B×m×k]·[B×k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n, vec![m, n]),
            (&[b1, m, k], &[b2, k2, n]) if b1 == b2 && k == k2 => (b1, m, k, n, vec![b1, m, n]),
            _ => return Err(shape_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for bi in 0..batch {
            gemm_acc(
                &da[bi * m * k..(bi + 1) * m * k],
                &db[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("matmul", value, Op::MatMul { a, b, batch, m, k, n }, &[a, b])
    }

    /// Elementwise sum. `b` may also be a trailing-dims suffix of `a`, in
    /// which case it is repeated over the leading axes (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
        }
        let shape = sa.to_vec();
        let db = self.data(b);
        let nb = db.len();
        let out: Vec<T> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + db[i % nb])
            .collect();
        let value = Tensor::new(shape, out)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("sub", value, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("mul", value, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("scale", value, Op::Scale { x, factor }, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    // ---- shape manipulation ---------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("mean", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let inv = T::one() / T::of(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        self.push("mean", value, Op::Mean { x, axis }, &[x])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("transpose", format!("rank {} < 2", shape.len())));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_last2(self.data(x), r, c);
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape.swap(n - 2, n - 1);
        let value = Tensor::new(out_shape, out)?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(
                "slice",
                format!("{start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    /// Rows of `table` (`[V×d]`) selected by `ids`, giving `[len(ids)×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let &[vocab, d] = shape.as_slice() else {
            return Err(shape_err("embedding", format!("table shape {shape:?}")));
        };
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        self.push(
            "embedding",
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Replace entries where `mask` is true with `fill` (typically −∞).
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: T) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(shape_err(
                "masked_fill",
                format!("mask of {} for {:?}", mask.len(), self.shape(x)),
            ));
        }
        let out = self
            .data(x)
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(
            "masked_fill",
            value,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            &[x],
        )
    }

    // ---- nonlinearities --------------------------------------------------

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, |v| v.tanh())?;
        self.push("tanh", value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, |v| T::one() / (T::one() + (-v).exp()))?;
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, |v| if v > T::zero() { v } else { T::zero() })?;
        let mut kinks = self.kinks;
        for &v in self.data(x) {
            kinks = (kinks ^ u64::from(v > T::zero())).wrapping_mul(0x0100_0000_01b3);
        }
        self.kinks = kinks;
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Elementwise `f` with a caller-supplied derivative `deriv(x, f(x))`.
    pub fn map(&mut self, x: Var, f: fn(T) -> T, deriv: fn(T, T) -> T) -> Result<Var> {
        let value = self.unary(x, f)?;
        self.push("map", value, Op::Map { x, deriv }, &[x])
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        Tensor::new(
            self.shape(x).to_vec(),
            self.data(x).iter().map(|&v| f(v)).collect(),
        )
    }

    /// Layer norm over the last axis with affine `gamma`, `beta` (`[d]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "x {shape:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * gd[j] + bd[j]);
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Numerically stable softmax along `axis`; −∞ entries get weight 0.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(invalid(format!("softmax over empty or missing axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[idx(l)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for l in 0..len {
                    let e = (d[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[idx(l)] /= sum;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of
    /// `logits` (`[B×C]`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let &[batch, classes] = shape.as_slice() else {
            return Err(shape_err("cross_entropy", format!("logits {shape:?}")));
        };
        if labels.len() != batch || batch == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for batch {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let d = self.data(logits);
        let mut probs = Vec::with_capacity(d.len());
        let mut total = T::zero();
        for (row, &label) in d.chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = total / T::of(batch as f64);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    // ---- reverse pass ----------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a grad-requiring input.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
        f(slot);
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batch, m, k, n } => {
                let (da, db) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |ga| {
                    for bi in 0..batch {
                        gemm_bt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &db[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for bi in 0..batch {
                        gemm_at_acc(
                            &da[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            &Op::Add { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| {
                    let nb = gb.len();
                    for chunk in g.chunks_exact(nb) {
                        add_into(gb, chunk);
                    }
                });
            }
            &Op::Sub { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v)
                });
            }
            &Op::Mul { a, b } => {
                let (da, db) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(db) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(da) {
                        *o += gv * av;
                    }
                });
            }
            &Op::Scale { x, factor } => {
                self.accumulate(grads, x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * factor)
                });
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut gv[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Mean { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(x), axis);
                let inv = T::one() / T::of(len as f64);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s * inv);
                        }
                    }
                });
            }
            &Op::Tanh(x) => self.accumulate(grads, x, |gx| {
                for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * (T::one() - yv * yv);
                }
            }),
            &Op::Sigmoid(x) => self.accumulate(grads, x, |gx| {
                for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * yv * (T::one() - yv);
                }
            }),
            &Op::Relu(x) => {
                let xd = self.data(x);
                self.accumulate(grads, x, |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *o += gv;
                        }
                    }
                })
            }
            &Op::Map { x, deriv } => {
                let xd = self.data(x);
                self.accumulate(grads, x, |gx| {
                    for (((o, &gv), &xv), &yv) in gx.iter_mut().zip(g).zip(xd).zip(y) {
                        *o += gv * deriv(xv, yv);
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.shape(*gamma)[0];
                let gd = self.data(*gamma);
                let dn = T::of(d as f64);
                self.accumulate(grads, *x, |gx| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let rows = r * d..(r + 1) * d;
                        let (gr, hr) = (&g[rows.clone()], &xhat[rows.clone()]);
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            gx[r * d + j] += inv / dn * (dn * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for gr in g.chunks_exact(d) {
                        add_into(gb, gr);
                    }
                });
            }
            &Op::Transpose(x) => {
                let s = self.shape(x);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_last2(g, c, r);
                self.accumulate(grads, x, |gx| add_into(gx, &back));
            }
            &Op::Reshape(x) => self.accumulate(grads, x, |gx| add_into(gx, g)),
            &Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(x), axis);
                let len = node.value.shape()[axis];
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        add_into(
                            &mut gx[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                self.accumulate(grads, *table, |gt| {
                    for (row, &id) in g.chunks_exact(d).zip(ids) {
                        add_into(&mut gt[id * d..(id + 1) * d], row);
                    }
                });
            }
            Op::MaskedFill { x, mask } => self.accumulate(grads, *x, |gx| {
                for ((o, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *o += gv;
                    }
                }
            }),
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), axis);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: T = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / T::of(labels.len() as f64);
                self.accumulate(grads, *logits, |gl| {
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let target = if c == label { T::one() } else { T::zero() };
                            gl[b * classes + c] += scale * (probs[b * classes + c] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn transpose_last2<T: Scalar>(d: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d.len()];
    for (blk_in, blk_out) in d.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                blk_out[j * r + i] = blk_in[i * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let mut g = Graph::<f64>::new();
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        let a_data: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let i3 = g.constant(t(&[3, 3], &eye));
        let a = g.constant(t(&[3, 4], &a_data));
        let out = g.matmul(i3, a).unwrap();
        assert_eq!(g.value(out).data(), a_data.as_slice());
    }

    #[test]
    fn activation_fixed_points() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(t(&[1], &[0.0]));
        let th = g.tanh(z).unwrap();
        let sg = g.sigmoid(z).unwrap();
        assert_eq!(g.value(th).item(), 0.0);
        assert_eq!(g.value(sg).item(), 0.5);
    }

    #[test]
    fn concat_shapes_and_gradient_split() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::full(&[2, 4], 1.0));
        let b = g.input(Tensor::full(&[3, 4], 2.0));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[5, 4]);
        let w = g.constant(t(&[5, 4], &(0..20).map(f64::from).collect::<Vec<_>>()));
        let prod = g.mul(c, w).unwrap();
        let flat = g.reshape(prod, &[1, 20]).unwrap();
        let loss = g.mean(flat, 1).unwrap();
        let grads = g.backward(loss).unwrap();
        let expect: Vec<f64> = (0..20).map(|v| v as f64 * (1.0 / 20.0)).collect();
        assert_eq!(grads.get(a).unwrap(), &expect[..8]);
        assert_eq!(grads.get(b).unwrap(), &expect[8..]);
    }

    #[test]
    fn mean_distributes_reciprocal_count() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let m = g.mean(x, 1).unwrap();
        assert_eq!(g.value(m).item(), 2.5);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn softmax_known_values_and_shift_invariance() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2], &[0.0, std::f64::consts::LN_2]));
        let s = g.softmax(x, 1).unwrap();
        let v = g.value(s).data().to_vec();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15 && (v[1] - 2.0 / 3.0).abs() < 1e-15);

        let row = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = row.iter().map(|v| v + 17.25).collect();
        let a = g.constant(t(&[1, 4], &row));
        let b = g.constant(t(&[1, 4], &shifted));
        let (sa, sb) = (g.softmax(a, 1).unwrap(), g.softmax(b, 1).unwrap());
        for (p, q) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((g.value(sa).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let u = g.constant(Tensor::full(&[1, 5], 3.0));
        let su = g.softmax(u, 1).unwrap();
        assert!(g.value(su).data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn cross_entropy_hand_values() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[3, 2]));
        let l = g.cross_entropy(z, &[0, 1, 1]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

        // Row 0: -log(e/(e+1)); row 1: -log(e²/(1+e²)).
        let e = std::f64::consts::E;
        let expect = 0.5 * (-(e / (e + 1.0)).ln() - (e * e / (1.0 + e * e)).ln());
        let x = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]));
        let l = g.cross_entropy(x, &[0, 1]).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-15);

        let sure = g.constant(t(&[1, 2], &[0.0, 60.0]));
        let l = g.cross_entropy(sure, &[1]).unwrap();
        assert!(g.value(l).item() < 1e-20);
        assert!(g.cross_entropy(x, &[0, 2]).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[1.0, 800.0]));
        assert!(matches!(
            g.map(x, f64::exp, |_, y| y),
            Err(crate::Error::NonFinite { .. })
        ));
    }

    #[test]
    fn masked_fill_allows_negative_infinity_before_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 3], &[0.5, 1.0, -0.5]));
        let m = g.masked_fill(x, &[false, true, false], f64::NEG_INFINITY).unwrap();
        let s = g.softmax(m, 1).unwrap();
        assert_eq!(g.value(s).data()[1], 0.0);
        let w = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let p = g.mul(s, w).unwrap();
        let loss = g.mean(p, 1).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap()[1], 0.0);
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(a, c).is_err());
        assert!(g.mul(a, c).is_err());
        assert!(g.concat(&[a, c], 0).is_err());
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let a = g.input(Tensor::new(vec![2, 3], vec![0.1, -0.7, 0.3, 1.1, 0.0, -2.0]).unwrap());
            let b = g.input(Tensor::new(vec![3, 2], vec![0.5, 0.25, -1.0, 0.75, 2.0, -0.5]).unwrap());
            let y = g.matmul(a, b).unwrap();
            let y = g.tanh(y).unwrap();
            let l = g.cross_entropy(y, &[1, 0]).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(l).item(), grads.get(a).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
