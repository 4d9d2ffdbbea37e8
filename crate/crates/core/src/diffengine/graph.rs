//! Tape of tensor operations with a reverse sweep.
//!
//! Matrices are `(rows, cols)` tensors. Image-like values are carried as
//! `(channels, height * width)` matrices so that per-position linear maps
//! become ordinary matrix products.

use crate::error::{Error, Result};
use crate::imageops::conv::{col2im, conv_from_cols, conv_single_out, conv_single_out_backward, im2col, ConvShape};
use crate::proximal::LesitaBranch;
use crate::tensor::{gemm, Real, Tensor, Trans};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// `a * b + c`
    MatMulAdd(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, F),
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        height: usize,
        width: usize,
        kernel: usize,
        // unfolded input; not kept for single-output convolutions, which run directly
        cols: Option<Vec<F>>,
    },
    SoftThreshold {
        x: NodeId,
        gamma: NodeId,
    },
    SideProx {
        x: NodeId,
        side: NodeId,
        mu: NodeId,
        branches: Vec<LesitaBranch>,
    },
    Sse(NodeId, NodeId),
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    label: String,
    requires_grad: bool,
}

/// A recorded forward computation. Build it with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, label: &str, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NumericFailure {
                tensor: label.to_string(),
            });
        }
        self.nodes.push(Node {
            op,
            value,
            label: label.to_string(),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, label: &str, value: Tensor<F>) -> Result<NodeId> {
        self.push(Op::Input, value, label, false)
    }

    /// Leaf bound to a stored parameter; its gradient is accumulated into the
    /// store by [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore<F>, name: &str) -> Result<NodeId> {
        let idx = store.index_of(name)?;
        let value = store.by_index(idx).1.value.clone();
        self.push(Op::Param(idx), value, name, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, label: &str) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b)).map_err(|e| relabel(e, label))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), value, label, rg)
    }

    /// `a * b + c` in one product; `c` has the shape of the product.
    pub fn matmul_add(&mut self, a: NodeId, b: NodeId, c: NodeId, label: &str) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 || self.value(c).shape() != [m, n] {
            return Err(Error::Shape(format!(
                "{label}: {:?} * {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape(),
                self.value(c).shape()
            )));
        }
        let mut out = self.value(c).data().to_vec();
        gemm(m, k, n, F::one(), self.value(a).data(), Trans::No, self.value(b).data(), Trans::No, F::one(), &mut out);
        let value = Tensor::from_vec(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b) || self.rg(c);
        self.push(Op::MatMulAdd(a, b, c), value, label, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, label: &str) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "{label}: add {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), value, label, rg)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: NodeId, c: F, label: &str) -> Result<NodeId> {
        let vx = self.value(x);
        let value = Tensor::from_vec(vx.shape(), vx.data().iter().map(|&v| v * c).collect())?;
        let rg = self.rg(x);
        self.push(Op::Scale(x, c), value, label, rg)
    }

    /// Same-size zero-padded convolution of a `(channels, height*width)`
    /// input with `(out, channels, k, k)` weights and `(out)` bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        height: usize,
        width: usize,
        label: &str,
    ) -> Result<NodeId> {
        let shape = ConvShape::from_weights(self.value(weight))?;
        let (c, n) = self.value(input).dims2()?;
        if c != shape.in_channels || n != height * width {
            return Err(Error::Shape(format!(
                "{label}: conv expects ({}, {}), got ({c}, {n})",
                shape.in_channels,
                height * width
            )));
        }
        if self.value(bias).len() != shape.out_channels {
            return Err(Error::Shape(format!(
                "{label}: bias has {} entries for {} channels",
                self.value(bias).len(),
                shape.out_channels
            )));
        }
        let (out, cols) = if shape.out_channels == 1 {
            let out = conv_single_out(
                self.value(input).data(),
                c,
                height,
                width,
                shape.kernel,
                self.value(weight).data(),
                self.value(bias).item(),
            );
            (out, None)
        } else {
            let cols = im2col(self.value(input).data(), c, height, width, shape.kernel);
            let out = conv_from_cols(&cols, self.value(weight), self.value(bias).data(), n);
            (out, Some(cols))
        };
        let value = Tensor::from_vec(&[shape.out_channels, n], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(
            Op::Conv {
                input,
                weight,
                bias,
                height,
                width,
                kernel: shape.kernel,
                cols,
            },
            value,
            label,
            rg,
        )
    }

    fn threshold_value(&self, id: NodeId, label: &str) -> Result<F> {
        let t = self.value(id);
        if t.len() != 1 {
            return Err(Error::Shape(format!("{label}: threshold must be a scalar")));
        }
        let v = t.item();
        if v < F::zero() {
            return Err(Error::InvalidParameter(format!(
                "{label}: threshold `{}` is negative",
                self.label(id)
            )));
        }
        Ok(v)
    }

    /// Elementwise soft thresholding with a scalar threshold node.
    pub fn soft_threshold(&mut self, x: NodeId, gamma: NodeId, label: &str) -> Result<NodeId> {
        let g = self.threshold_value(gamma, label)?;
        let vx = self.value(x);
        // branch-free form of `shrink`, equal to it on finite input
        let data = vx.data().iter().map(|&u| (u - g).max(F::zero()) + (u + g).min(F::zero())).collect();
        let value = Tensor::from_vec(vx.shape(), data)?;
        let rg = self.rg(x) || self.rg(gamma);
        self.push(Op::SoftThreshold { x, gamma }, value, label, rg)
    }

    /// Elementwise side-information proximal operator; `side` has the shape
    /// of `x`.
    pub fn side_prox(&mut self, x: NodeId, side: NodeId, mu: NodeId, label: &str) -> Result<NodeId> {
        let m = self.threshold_value(mu, label)?;
        let (vx, vs) = (self.value(x), self.value(side));
        if vx.shape() != vs.shape() {
            return Err(Error::Shape(format!(
                "{label}: side information {:?} vs pre-activation {:?}",
                vs.shape(),
                vx.shape()
            )));
        }
        let branches: Vec<LesitaBranch> = vx
            .data()
            .iter()
            .zip(vs.data())
            .map(|(&u, &s)| LesitaBranch::select(u, s, m))
            .collect();
        let data = branches
            .iter()
            .zip(vx.data().iter().zip(vs.data()))
            .map(|(b, (&u, &s))| b.value(u, s, m))
            .collect();
        let value = Tensor::from_vec(vx.shape(), data)?;
        let rg = self.rg(x) || self.rg(side) || self.rg(mu);
        self.push(Op::SideProx { x, side, mu, branches }, value, label, rg)
    }

    /// Sum of squared differences, as a scalar.
    pub fn sse(&mut self, pred: NodeId, target: NodeId, label: &str) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "{label}: prediction {:?} vs target {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let rg = self.rg(pred) || self.rg(target);
        self.push(Op::Sse(pred, target), Tensor::scalar(s), label, rg)
    }

    /// Reverse sweep from the scalar `loss`, adding parameter gradients into
    /// `store` and marking them ready.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<F>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let param = store.by_index_mut(*p);
                    for (acc, v) in param.grad.data_mut().iter_mut().zip(&g) {
                        *acc = *acc + *v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).dims2()?.1;
                    if self.rg(*a) {
                        let mut da = vec![F::zero(); m * k];
                        gemm(m, n, k, F::one(), &g, Trans::No, self.value(*b).data(), Trans::Yes, F::zero(), &mut da);
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![F::zero(); k * n];
                        gemm(k, m, n, F::one(), self.value(*a).data(), Trans::Yes, &g, Trans::No, F::zero(), &mut db);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::MatMulAdd(a, b, c) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).dims2()?.1;
                    if self.rg(*a) {
                        let mut da = vec![F::zero(); m * k];
                        gemm(m, n, k, F::one(), &g, Trans::No, self.value(*b).data(), Trans::Yes, F::zero(), &mut da);
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![F::zero(); k * n];
                        gemm(k, m, n, F::one(), self.value(*a).data(), Trans::Yes, &g, Trans::No, F::zero(), &mut db);
                        accumulate(&mut grads[b.0], db);
                    }
                    if self.rg(*c) {
                        accumulate(&mut grads[c.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Scale(x, c) => {
                    if self.rg(*x) {
                        accumulate(&mut grads[x.0], g.iter().map(|&v| v * *c).collect());
                    }
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    height,
                    width,
                    kernel,
                    cols,
                } => {
                    let w = self.value(*weight);
                    let out_c = w.shape()[0];
                    let kk = w.len() / out_c;
                    let n = height * width;
                    if self.rg(*bias) {
                        let db = g.chunks(n).map(|row| row.iter().fold(F::zero(), |a, &b| a + b)).collect();
                        accumulate(&mut grads[bias.0], db);
                    }
                    let in_c = self.value(*input).shape()[0];
                    match cols {
                        None => {
                            let x = self.value(*input).data();
                            let (dw, dx) = conv_single_out_backward(x, in_c, *height, *width, *kernel, w.data(), &g);
                            if self.rg(*weight) {
                                accumulate(&mut grads[weight.0], dw);
                            }
                            if self.rg(*input) {
                                accumulate(&mut grads[input.0], dx);
                            }
                        }
                        Some(cols) => {
                            if self.rg(*weight) {
                                let mut dw = vec![F::zero(); out_c * kk];
                                gemm(out_c, n, kk, F::one(), &g, Trans::No, cols, Trans::Yes, F::zero(), &mut dw);
                                accumulate(&mut grads[weight.0], dw);
                            }
                            if self.rg(*input) {
                                let mut dcols = vec![F::zero(); kk * n];
                                gemm(kk, out_c, n, F::one(), w.data(), Trans::Yes, &g, Trans::No, F::zero(), &mut dcols);
                                accumulate(&mut grads[input.0], col2im(&dcols, in_c, *height, *width, *kernel));
                            }
                        }
                    }
                }
                Op::SoftThreshold { x, gamma } => {
                    let t = self.value(*gamma).item();
                    let vx = self.value(*x).data();
                    let mut dx = vec![F::zero(); vx.len()];
                    let mut dg = F::zero();
                    for ((d, &u), &gi) in dx.iter_mut().zip(vx).zip(&g) {
                        let (hi, lo) = (u > t, u < -t);
                        *d = if hi || lo { gi } else { F::zero() };
                        dg = dg + if hi { -gi } else if lo { gi } else { F::zero() };
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.rg(*gamma) {
                        accumulate(&mut grads[gamma.0], vec![dg]);
                    }
                }
                Op::SideProx { x, side, mu, branches } => {
                    let table = LesitaBranch::ALL.map(|b| b.grads::<F>());
                    let mut dx = vec![F::zero(); g.len()];
                    let mut ds = vec![F::zero(); g.len()];
                    let mut dm = F::zero();
                    for (i, b) in branches.iter().enumerate() {
                        let pg = &table[*b as usize];
                        dx[i] = g[i] * pg.d_du;
                        ds[i] = g[i] * pg.d_dside;
                        dm = dm + g[i] * pg.d_dmu;
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.rg(*side) {
                        accumulate(&mut grads[side.0], ds);
                    }
                    if self.rg(*mu) {
                        accumulate(&mut grads[mu.0], vec![dm]);
                    }
                }
                Op::Sse(p, t) => {
                    let two = F::one() + F::one();
                    let scale = two * g[0];
                    let diff: Vec<F> = self
                        .value(*p)
                        .data()
                        .iter()
                        .zip(self.value(*t).data())
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    if self.rg(*t) {
                        accumulate(&mut grads[t.0], diff.iter().map(|&v| -v).collect());
                    }
                    if self.rg(*p) {
                        accumulate(&mut grads[p.0], diff);
                    }
                }
            }
        }
        for (name, p) in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NumericFailure {
                    tensor: format!("grad of {name}"),
                });
            }
        }
        store.mark_grads_ready();
        Ok(())
    }

    /// Fingerprint of every activation's selected case. Two evaluations with
    /// equal signatures lie on the same smooth piece of the network.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::SoftThreshold { x, gamma } => {
                    let t = self.value(*gamma).item();
                    for &u in self.value(*x).data() {
                        mix(if u > t { 1 } else if u < -t { 2 } else { 3 });
                    }
                }
                Op::SideProx { branches, .. } => {
                    for b in branches {
                        mix(*b as u64 + 10);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Smallest distance from any activation input to a case boundary.
    pub fn min_kink_distance(&self) -> F {
        let mut best = F::infinity();
        for node in &self.nodes {
            match &node.op {
                Op::SoftThreshold { x, gamma } => {
                    let t = self.value(*gamma).item();
                    for &u in self.value(*x).data() {
                        best = best.min(crate::proximal::shrink_boundary_distance(u, t));
                    }
                }
                Op::SideProx { x, side, mu, .. } => {
                    let m = self.value(*mu).item();
                    for (&u, &s) in self.value(*x).data().iter().zip(self.value(*side).data()) {
                        best = best.min(crate::proximal::lesita_boundary_distance(u, s, m));
                        // the case layout flips with the sign of the side value
                        best = best.min(s.abs());
                    }
                }
                _ => {}
            }
        }
        best
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, g: Vec<F>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a = *a + v;
            }
        }
        None => *slot = Some(g),
    }
}

fn relabel(e: Error, label: &str) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("{label}: {m}")),
        other => other,
    }
}
