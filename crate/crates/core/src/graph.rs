//! Whole-tensor reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, its inputs and whatever intermediates its adjoint needs. Walking the
//! tape backwards from a root yields gradients for every node that fed into
//! it. Parameters that never took part in the forward pass get no entry,
//! which callers treat as an exact zero gradient.

use crate::attention::geometry::AttentionSpec;
use crate::attention::kernel;
use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, conv2d_backward, dwconv2d, dwconv2d_backward};
use crate::ops::norm::{layer_norm, layer_norm_backward, NormStats};
use crate::ops::pointwise::{gelu, gelu_grad, relu, sigmoid};
use crate::ops::shuffle::{pixel_shuffle, pixel_unshuffle};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

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
    Conv2d { x: Var, w: Var, b: Option<Var> },
    DwConv2d { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats<T> },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ChannelScale { x: Var, gate: Var },
    GlobalAvgPool(Var),
    PixelShuffle { x: Var, factor: usize },
    Narrow { x: Var, start: usize },
    Concat(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, bias: Option<Var>, spec: AttentionSpec, probs: Vec<T> },
    L1Loss { pred: Var, target: Var },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        value.debug_check_finite();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, name: Option<String>) -> Var {
        value.debug_check_finite();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (gradients are reported for it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    /// A value treated as constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// A named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.leaf(value, true, Some(name.into()))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b }, &inputs))
    }

    pub fn dwconv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = dwconv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::DwConv2d { x, w, b }, &inputs))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, stats) = layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, stats }, &[x, gamma, beta]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(relu);
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product (the "star" operation).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// `x[n, c, :, :] * gate[n, c]` for a gate of shape `[N, C, 1, 1]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        if gs != Shape::new(xs.n, xs.c, 1, 1) {
            return Err(Error::dim("channel_scale", format!("gate {gs:?} for input {xs:?}")));
        }
        let xv = self.value(x);
        let gv = self.value(gate);
        let plane = xs.plane();
        let mut out = xv.data().to_vec();
        for (nc, chunk) in out.chunks_mut(plane).enumerate() {
            let g = gv.data()[nc];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        Ok(self.push(Tensor::from_parts(xs, out), Op::ChannelScale { x, gate }, &[x, gate]))
    }

    /// Spatial mean per channel, `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let inv = T::from_f64(1.0 / xs.plane() as f64);
        let data = self
            .value(x)
            .data()
            .chunks(xs.plane())
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(
            Tensor::from_parts(Shape::new(xs.n, xs.c, 1, 1), data),
            Op::GlobalAvgPool(x),
            &[x],
        )
    }

    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pixel_shuffle(self.value(x), factor)?;
        Ok(self.push(out, Op::PixelShuffle { x, factor }, &[x]))
    }

    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).narrow_channels(start, len)?;
        Ok(self.push(out, Op::Narrow { x, start }, &[x]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Neighborhood attention over `[N, heads*head_dim, H, W]` tensors.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, bias: Option<Var>, spec: AttentionSpec) -> Result<Var> {
        let (out, probs) = kernel::forward(
            self.value(q),
            self.value(k),
            self.value(v),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let mut inputs = vec![q, k, v];
        inputs.extend(bias);
        Ok(self.push(out, Op::Attention { q, k, v, bias, spec, probs }, &inputs))
    }

    /// Mean absolute error; a `[1, 1, 1, 1]` scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.expect_same_shape(t, "l1_loss")?;
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let loss = total / T::from_f64(p.numel() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::L1Loss { pred, target }, &[pred, target]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Backpropagate from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let shape = self.shape(root);
        if shape.numel() != 1 {
            return Err(Error::dim("backward", format!("root {shape:?} is not a scalar; use backward_with")));
        }
        self.backward_with(root, Tensor::full(shape, T::one()))
    }

    /// Backpropagate an explicit upstream gradient `seed` from `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        seed.expect_same_shape(self.value(root), "backward_with")?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(root.0 + 1)
            .filter_map(|(i, n)| n.name.clone().map(|name| (name, Var(i))))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            slot @ None => *slot = Some(g),
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let cg = conv2d_backward(self.value(*x), self.value(*w), g)?;
                self.accumulate(grads, *x, cg.input);
                self.accumulate(grads, *w, cg.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::DwConv2d { x, w, b } => {
                let cg = dwconv2d_backward(self.value(*x), self.value(*w), g)?;
                self.accumulate(grads, *x, cg.input);
                self.accumulate(grads, *w, cg.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let ng = layer_norm_backward(self.value(*x), self.value(*gamma), stats, g);
                self.accumulate(grads, *x, ng.input);
                self.accumulate(grads, *gamma, ng.gamma);
                self.accumulate(grads, *beta, ng.beta);
            }
            Op::Gelu(x) => {
                let dx = self.value(*x).zip_map(g, "gelu", |v, gv| gelu_grad(v) * gv)?;
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, "relu", |v, gv| if v > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = node.value.zip_map(g, "sigmoid", |s, gv| gv * s * (T::one() - s))?;
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let da = g.zip_map(self.value(*b), "mul", |gv, bv| gv * bv)?;
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = g.zip_map(self.value(*a), "mul", |gv, av| gv * av)?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, g.scale(*s));
            }
            Op::ChannelScale { x, gate } => {
                let xv = self.value(*x);
                let gv = self.value(*gate);
                let plane = xv.shape().plane();
                let mut dx = g.data().to_vec();
                let mut dgate = vec![T::zero(); gv.numel()];
                for (nc, (dchunk, xchunk)) in dx.chunks_mut(plane).zip(xv.data().chunks(plane)).enumerate() {
                    let mut acc = T::zero();
                    for (d, &xx) in dchunk.iter_mut().zip(xchunk) {
                        acc += *d * xx;
                        *d *= gv.data()[nc];
                    }
                    dgate[nc] = acc;
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape(), dx));
                self.accumulate(grads, *gate, Tensor::from_parts(gv.shape(), dgate));
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let inv = T::from_f64(1.0 / xs.plane() as f64);
                let mut dx = Vec::with_capacity(xs.numel());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv * inv, xs.plane()));
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, dx));
            }
            Op::PixelShuffle { x, factor } => {
                self.accumulate(grads, *x, pixel_unshuffle(g, *factor)?);
            }
            Op::Narrow { x, start } => {
                let xs = self.shape(*x);
                let gs = g.shape();
                let plane = xs.plane();
                let mut dx = vec![T::zero(); xs.numel()];
                for n in 0..xs.n {
                    let dst = (n * xs.c + start) * plane;
                    let src = n * gs.c * plane;
                    dx[dst..dst + gs.c * plane].copy_from_slice(&g.data()[src..src + gs.c * plane]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, dx));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).c;
                    if self.wants(p) {
                        self.accumulate(grads, p, g.narrow_channels(offset, c)?);
                    }
                    offset += c;
                }
            }
            Op::Attention { q, k, v, bias, spec, probs } => {
                let ag = kernel::backward(self.value(*q), self.value(*k), self.value(*v), probs, *spec, g)?;
                self.accumulate(grads, *q, ag.q);
                self.accumulate(grads, *k, ag.k);
                self.accumulate(grads, *v, ag.v);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, ag.bias);
                }
            }
            Op::L1Loss { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let s = g.item() / T::from_f64(p.numel() as f64);
                let sign = |d: T| {
                    if d > T::zero() {
                        s
                    } else if d < T::zero() {
                        -s
                    } else {
                        T::zero()
                    }
                };
                if self.wants(*pred) {
                    self.accumulate(grads, *pred, p.zip_map(t, "l1_loss", |a, b| sign(a - b))?);
                }
                if self.wants(*target) {
                    self.accumulate(grads, *target, p.zip_map(t, "l1_loss", |a, b| sign(b - a))?);
                }
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g.item()));
            }
        }
        Ok(())
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf, if it influenced the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// `(name, gradient)` for every parameter registered before the root.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&Tensor<T>>)> {
        self.params.iter().map(|(n, v)| (n.as_str(), self.wrt(*v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param("a", Tensor::full(Shape::new(1, 1, 2, 2), 2.0));
        let unused = g.param("unused", Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = g.scale(a, 3.0);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(unused).is_none());
        assert!(grads.param("a").unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 1, 3), 1.5));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn constants_block_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(Shape::new(1, 1, 1, 2), 1.0));
        let p = g.param("p", Tensor::full(Shape::new(1, 1, 1, 2), 3.0));
        let y = g.mul(x, p).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).is_none());
        assert!(grads.wrt(p).is_some());
    }

    #[test]
    fn l1_loss_values_and_subgradient() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, h, w| (h * 2 + w) as f64);
        let pred = g.input(t.map(|v| v + 0.5));
        let same = g.input(t.clone());
        let target = g.constant(t);
        let loss = g.l1_loss(pred, target).unwrap();
        assert_eq!(g.value(loss).item(), 0.5);
        let zero = g.l1_loss(same, target).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
        let grads = g.backward(zero).unwrap();
        assert!(grads.wrt(same).unwrap().data().iter().all(|&v| v == 0.0));
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(pred).unwrap().data().iter().all(|&v| v == 0.25));
    }
}
