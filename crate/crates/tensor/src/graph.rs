//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value and enough context for
//! its backward rule. Nodes are created in topological order, so backward is
//! a single reverse sweep.

use std::sync::Arc;

use crate::error::{mismatch, TensorError};
use crate::kernels::{layernorm_rows, softmax_rows};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat(Vec<Var>),
    Softmax(Var),
    MaskedFill(Var, Arc<[bool]>),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Relu(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, count: usize, probs: Vec<T> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// `a [.., k] x b [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa.is_empty() || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).len() / k;
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); rows * n];
        T::gemm(rows, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, T::zero());
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), needs))
    }

    /// Batched product `a [B, m, k] x b [B, k, n]`, or `x b^T` with
    /// `b [B, n, k]` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![T::zero(); batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                T::zero(),
            );
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&[batch, m, n], out)?, Op::Bmm { a, b, trans_b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    /// Adds `bias [n]` to every row of `a [.., n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(mismatch("add_bias", sa, sb));
        }
        let bv = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(bv.len())
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::new(sa, data)?;
        let needs = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddBias(a, bias), needs))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let value = Tensor::new(v.shape(), v.data().iter().map(|&x| x * s).collect()).unwrap();
        let needs = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", &shape, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src = self.value(a).data();
        let mut data = vec![T::zero(); src.len()];
        permute_walk(&shape, perm, |s, o| data[o] = src[s]);
        let value = Tensor::new(&out_shape, data)?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::Permute { x: a, perm: perm.to_vec() }, needs))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var, TensorError> {
        let mut perm: Vec<usize> = (0..self.shape(a).len()).collect();
        if i >= perm.len() || j >= perm.len() {
            return Err(mismatch("transpose", self.shape(a), &[i, j]));
        }
        perm.swap(i, j);
        self.permute(a, &perm)
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat_last_axis", &first, s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let rows = self.value(parts[0]).len() / widths[0];
        let mut data = Vec::with_capacity(rows * widths.iter().sum::<usize>());
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.clone();
        *shape.last_mut().unwrap() = widths.iter().sum();
        let needs = self.needs(parts);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec()), needs))
    }

    pub fn softmax_last_axis(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let w = value.last_dim();
        softmax_rows(value.data_mut(), w);
        let needs = self.needs(&[a]);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Sets positions where `mask` is true to negative infinity. The mask
    /// covers the trailing axes and is broadcast over the leading ones.
    pub fn masked_fill(&mut self, a: Var, mask: Arc<[bool]>) -> Result<Var, TensorError> {
        let mut value = self.value(a).clone();
        if mask.is_empty() || value.len() % mask.len() != 0 {
            return Err(mismatch("masked_fill", value.shape(), &[mask.len()]));
        }
        for chunk in value.data_mut().chunks_mut(mask.len()) {
            for (v, &m) in chunk.iter_mut().zip(mask.iter()) {
                if m {
                    *v = T::neg_infinity();
                }
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::MaskedFill(a, mask), needs))
    }

    /// Layer normalization over the last axis with affine `gamma, beta`.
    pub fn layernorm_last_axis(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let w = self.value(x).last_dim();
        if self.shape(gamma) != [w] || self.shape(beta) != [w] {
            return Err(mismatch("layernorm", self.shape(x), self.shape(gamma)));
        }
        let rows = self.value(x).len() / w;
        let (mut mean, mut rstd) = (vec![T::zero(); rows], vec![T::zero(); rows]);
        let mut out = vec![T::zero(); rows * w];
        layernorm_rows(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mut out,
            Some((&mut mean, &mut rstd)),
        );
        let value = Tensor::new(self.shape(x), out)?;
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, mean, rstd }, needs))
    }

    /// Gathers rows of `table [V, d]`; output `[ids.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(mismatch("embedding_lookup", s, &[ids.len()]));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding_lookup",
                index: bad,
                bound: v,
            });
        }
        let t = self.value(table).data();
        let data = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        let value = Tensor::new(&[ids.len(), d], data)?;
        let needs = self.needs(&[table]);
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::new(v.shape(), v.data().iter().map(|&x| x.max(T::zero())).collect()).unwrap();
        let needs = self.needs(&[a]);
        self.push(value, Op::Relu(a), needs)
    }

    /// Mean over positions with `mask` set of `-log softmax(logits)[target]`.
    /// `logits` is `[.., V]` with one target and mask flag per row.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        let v = self.value(logits).last_dim();
        let rows = self.value(logits).len() / v;
        if targets.len() != rows || mask.len() != rows {
            return Err(mismatch("cross_entropy_logits", self.shape(logits), &[targets.len(), mask.len()]));
        }
        if let Some(&bad) = targets.iter().zip(mask).find(|(&t, &m)| m && t >= v).map(|(t, _)| t) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy_logits",
                index: bad,
                bound: v,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        softmax_rows(&mut probs, v);
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = T::zero();
        for r in (0..rows).filter(|&r| mask[r]) {
            total -= crate::kernels::log_prob(&self.value(logits).data()[r * v..(r + 1) * v], targets[r]);
        }
        let loss = if count == 0 { T::zero() } else { total / T::of(count as f64) };
        let needs = self.needs(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            mask: mask.to_vec(),
            count,
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].needs_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sb = nodes[b.0].value.shape();
                let (k, n) = (sb[0], sb[1]);
                let rows = g.len() / n;
                acc(*a, &mut |da| T::gemm(rows, n, k, g, false, val(*b), true, da, T::one()));
                acc(*b, &mut |db| T::gemm(k, rows, n, val(*a), true, g, false, db, T::one()));
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = nodes[a.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = g.len() / (batch * m);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for t in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &bv[t * k * n..(t + 1) * k * n],
                            !trans_b,
                            &mut da[t * m * k..(t + 1) * m * k],
                            T::one(),
                        );
                    }
                });
                acc(*b, &mut |db| {
                    for t in 0..batch {
                        let (gs, asl) = (&g[t * m * n..(t + 1) * m * n], &av[t * m * k..(t + 1) * m * k]);
                        let out = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            T::gemm(n, m, k, gs, true, asl, false, out, T::one());
                        } else {
                            T::gemm(k, m, n, asl, true, gs, false, out, T::one());
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for row in g.chunks(d.len()) {
                        add_into(d, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| {
                for (d, &g) in d.iter_mut().zip(g) {
                    *d += g * *s;
                }
            }),
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Permute { x, perm } => acc(*x, &mut |d| {
                permute_walk(nodes[x.0].value.shape(), perm, |s, o| d[s] += g[o]);
            }),
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| nodes[p.0].value.last_dim()).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    acc(*p, &mut |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Softmax(a) => {
                let y = nodes[i].value.data();
                let w = nodes[i].value.last_dim();
                acc(*a, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                        for ((d, &g), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::MaskedFill(a, mask) => acc(*a, &mut |d| {
                for (dchunk, gchunk) in d.chunks_mut(mask.len()).zip(g.chunks(mask.len())) {
                    for ((d, &g), &m) in dchunk.iter_mut().zip(gchunk).zip(mask.iter()) {
                        if !m {
                            *d += g;
                        }
                    }
                }
            }),
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let (xv, gam) = (val(*x), val(*gamma));
                let w = gam.len();
                let wn = T::of(w as f64);
                let xhat = |r: usize, j: usize| (xv[r * w + j] - mean[r]) * rstd[r];
                acc(*x, &mut |d| {
                    for r in 0..mean.len() {
                        let grow = &g[r * w..(r + 1) * w];
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for j in 0..w {
                            let dh = grow[j] * gam[j];
                            s1 += dh;
                            s2 += dh * xhat(r, j);
                        }
                        let (m1, m2) = (s1 / wn, s2 / wn);
                        for j in 0..w {
                            let dh = grow[j] * gam[j];
                            d[r * w + j] += rstd[r] * (dh - m1 - xhat(r, j) * m2);
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for r in 0..mean.len() {
                        for j in 0..w {
                            d[j] += g[r * w + j] * xhat(r, j);
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for row in g.chunks(w) {
                        add_into(d, row);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let w = nodes[table.0].value.last_dim();
                acc(*table, &mut |d| {
                    for (&id, grow) in ids.iter().zip(g.chunks(w)) {
                        add_into(&mut d[id * w..(id + 1) * w], grow);
                    }
                });
            }
            Op::Relu(a) => {
                let y = nodes[i].value.data();
                acc(*a, &mut |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        if y > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, mask, count, probs } => {
                if *count == 0 {
                    return;
                }
                let v = nodes[logits.0].value.last_dim();
                let scale = g[0] / T::of(*count as f64);
                acc(*logits, &mut |d| {
                    for r in (0..targets.len()).filter(|&r| mask[r]) {
                        let drow = &mut d[r * v..(r + 1) * v];
                        for (d, &p) in drow.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *d += scale * p;
                        }
                        drow[targets[r]] -= scale;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| {
                for d in d.iter_mut() {
                    *d += g[0];
                }
            }),
        }
    }
}

/// Calls `f(source, out)` for every element of the permutation of a
/// row-major tensor of `shape`, in output order.
fn permute_walk(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    if rank == 0 {
        f(0, 0);
        return;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let (inner, inner_stride) = (out_shape[rank - 1], strides[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0;
    let mut out = 0;
    loop {
        for j in 0..inner {
            f(base + j * inner_stride, out + j);
        }
        out += inner;
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient buffer of a leaf, `None` if the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of a leaf as a tensor; zeros when unreached.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).unwrap(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).unwrap(),
            None => Tensor::zeros(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn derivative_of_sum_of_squares_is_twice_x() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn masked_positions_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let mask: Arc<[bool]> = vec![false, true, false].into();
        let m = g.masked_fill(x, mask).unwrap();
        let p = g.softmax_last_axis(m);
        assert_eq!(g.value(p).data()[1], 0.0);
        let w = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 5.0, 0.5]));
        let y = g.mul(p, w).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let d = grads.get(x).unwrap();
        assert_eq!((d[1], d[4]), (0.0, 0.0));
        assert!(d[0] != 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_v() {
        let mut g = Graph::<f64>::new();
        let logits = g.param(Tensor::zeros(&[3, 40]));
        let loss = g.cross_entropy_logits(logits, &[0, 7, 39], &[true, true, false]).unwrap();
        let v = g.value(loss).data()[0];
        assert!((v - 40f64.ln()).abs() < 1e-12);
        assert!((v - 3.6889).abs() < 1e-4);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(logits).unwrap()[80..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert_eq!(g.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn unreached_parameter_gets_zero() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.param(t(&[2], &[3.0, 4.0]));
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(y).is_none());
        assert_eq!(grads.tensor(y), Tensor::zeros(&[2]));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[4, 5]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
        assert!(g.add(a, b).is_err());
        assert!(g.embedding_lookup(a, &[2]).is_err());
    }

    #[test]
    fn permute_and_transpose_values() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[4, 2, 3]);
        // out[k][i][j] = in[i][j][k] = 12 i + 4 j + k
        assert_eq!(g.value(p).data()[1 * 6 + 1 * 3 + 2], 12.0 + 8.0 + 1.0);
        let tr = g.transpose(x, 0, 1).unwrap();
        assert_eq!(g.shape(tr), &[3, 2, 4]);
        assert_eq!(g.value(tr).data()[4], 12.0);
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let x = g.param(t(&[2], &[3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
    }
}
