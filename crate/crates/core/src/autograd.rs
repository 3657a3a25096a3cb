//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass together with its
//! output value. [`Graph::backward`] replays the tape in reverse and
//! accumulates adjoints into the [`ParamStore`] the leaves came from.

use crate::error::{invalid, Error, Result};
use crate::ops::conv::{bias_grad_raw, conv_adjoint_raw, conv_forward_raw, conv_weight_grad_raw};
use crate::ops::elementwise::{broadcast_binary, check_broadcast, reduce_to};
use crate::ops::norm::{affine, batch_stats, eval_normalize};
use crate::ops::pool::channel_pool_raw;
use crate::ops::{attention, embed_kernel, extract_kernel, sigmoid, ConvSpec, Mode, PoolMode};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param {
        id: ParamId,
        version: u64,
    },
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    },
    ConvTranspose {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, T),
    ChannelPool {
        x: NodeId,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    Concat(Vec<NodeId>),
    Narrow {
        x: NodeId,
        start: usize,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        inv_std: Vec<T>,
        xhat: Tensor<T>,
    },
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        probs: Vec<T>,
        scale: T,
    },
    EmbedKernel {
        x: NodeId,
        kernel: usize,
        dilation: usize,
    },
    Sum(NodeId),
    Mse(NodeId, NodeId),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running-statistic update produced by a train-mode batchnorm, applied with
/// [`Graph::commit_running_stats`].
#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub count: usize,
    pub momentum: T,
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
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

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        value.ensure_finite("graph input")?;
        Ok(self.push(value, Op::Input, false))
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let p = store.get(id);
        let requires = p.trainable;
        self.push(
            p.value.clone(),
            Op::Param {
                id,
                version: p.version(),
            },
            requires,
        )
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let out = crate::ops::conv2d(self.value(x), &spec, self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::Conv { x, w, b, spec }, rg))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let out = crate::ops::conv2d_transpose(self.value(x), &spec, self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::ConvTranspose { x, w, b, spec }, rg))
    }

    /// `a + b` with `b` broadcast per [`check_broadcast`].
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_binary(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn scale(&mut self, x: NodeId, k: T) -> NodeId {
        let out = self.value(x).scale(k);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn channel_pool(&mut self, x: NodeId, mode: PoolMode) -> Result<NodeId> {
        if self.shape(x).c() == 0 {
            return Err(invalid("channel_pool needs at least one channel"));
        }
        let (out, argmax) = channel_pool_raw(self.value(x), mode);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::ChannelPool { x, mode, argmax }, rg))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let out = crate::ops::global_avg_pool(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&vals)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn narrow(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let out = self.value(x).narrow_channels(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Narrow { x, start }, rg))
    }

    /// Batch normalization; the graph's mode picks batch or running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        store: &ParamStore<T>,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: T,
        eps: T,
    ) -> Result<NodeId> {
        if eps <= T::zero() {
            return Err(invalid("batchnorm eps must be positive"));
        }
        let c = self.shape(x).c();
        for (pid, dim) in [
            (gamma, "gamma"),
            (beta, "beta"),
            (running_mean, "running mean"),
            (running_var, "running var"),
        ] {
            let len = store.value(pid).len();
            if len != c {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    dim,
                    expected: c,
                    actual: len,
                });
            }
        }
        self.value(x).ensure_finite("batchnorm")?;
        let g = self.param(store, gamma);
        let b = self.param(store, beta);
        let gv = self.value(g).data().to_vec();
        let bv = self.value(b).data().to_vec();
        let rg = self.rg(&[x, g, b]);
        match self.mode {
            Mode::Train => {
                let stats = batch_stats(self.value(x), eps);
                let out = affine(&stats.xhat, &gv, &bv);
                let count = self.shape(x).n() * self.shape(x).plane();
                self.stat_updates.push(StatUpdate {
                    mean: running_mean,
                    var: running_var,
                    batch_mean: stats.mean,
                    batch_var: stats.var,
                    count,
                    momentum,
                });
                Ok(self.push(
                    out,
                    Op::BatchNormTrain {
                        x,
                        gamma: g,
                        beta: b,
                        inv_std: stats.inv_std,
                        xhat: stats.xhat,
                    },
                    rg,
                ))
            }
            Mode::Eval => {
                let mean = store.value(running_mean).data().to_vec();
                let var = store.value(running_var).data().to_vec();
                let out = eval_normalize(self.value(x), &gv, &bv, &mean, &var, eps);
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                Ok(self.push(
                    out,
                    Op::BatchNormEval {
                        x,
                        gamma: g,
                        beta: b,
                        mean,
                        inv_std,
                    },
                    rg,
                ))
            }
        }
    }

    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, scale: T) -> Result<NodeId> {
        self.value(q).expect_shape(self.shape(v), "attention")?;
        let probs = attention::attention_weights(self.value(q), self.value(k), scale)?;
        let out = attention::apply_weights(&probs, self.value(v));
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Dilates a square kernel and centers it in an `rf x rf` footprint.
    pub fn embed_kernel(&mut self, x: NodeId, dilation: usize, rf: usize) -> Result<NodeId> {
        let kernel = self.shape(x).h();
        let out = embed_kernel(self.value(x), dilation, rf)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::EmbedKernel {
                x,
                kernel,
                dilation,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_shape(bv.shape(), "mse")?;
        let n = T::from_usize(av.len().max(1)).unwrap();
        let s = av
            .data()
            .iter()
            .zip(bv.data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), rg))
    }

    pub fn stat_updates(&self) -> &[StatUpdate<T>] {
        &self.stat_updates
    }

    /// Applies pending running-statistic updates from train-mode batchnorms.
    pub fn commit_running_stats(&mut self, store: &mut ParamStore<T>) {
        for u in self.stat_updates.drain(..) {
            let unbias = if u.count > 1 {
                T::from_usize(u.count).unwrap() / T::from_usize(u.count - 1).unwrap()
            } else {
                T::one()
            };
            let keep = T::one() - u.momentum;
            for (r, &m) in store.value_mut(u.mean).data_mut().iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + u.momentum * m;
            }
            for (r, &v) in store.value_mut(u.var).data_mut().iter_mut().zip(&u.batch_var) {
                *r = keep * *r + u.momentum * v * unbias;
            }
        }
    }

    /// Reverse-mode sweep from a scalar `loss`; gradients are added to `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} is not in this graph", loss.0)));
        }
        if self.shape(loss) != Shape::SCALAR {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {}",
                self.shape(loss)
            )));
        }
        for node in &self.nodes[..=loss.0] {
            if let Op::Param { id, version } = node.op {
                if id.0 >= store.len() || store.version(id) != version {
                    return Err(Error::Graph(format!(
                        "parameter `{}` changed since the graph was recorded",
                        store.get(id).name
                    )));
                }
            }
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.node_backward(node, g, &mut grads, store)?;
        }
        Ok(())
    }

    fn node_backward(
        &self,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |id: NodeId| nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, t: Tensor<T>| -> Result<()> {
            if !nodes[id.0].requires_grad {
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
            Op::Input => {}
            Op::Param { id, .. } => store.grad_mut(*id).add_assign(&g)?,
            Op::Conv { x, w, b, spec } => {
                let xv = self.value(*x);
                if needs(*x) {
                    acc(*x, conv_adjoint_raw(&g, self.value(*w), spec, xv.shape()))?;
                }
                if needs(*w) {
                    acc(*w, conv_weight_grad_raw(xv, &g, spec))?;
                }
                if let Some(b) = b {
                    acc(*b, bias_grad_raw(&g))?;
                }
            }
            Op::ConvTranspose { x, w, b, spec } => {
                let fwd = spec.adjoint_forward();
                let xv = self.value(*x);
                if needs(*x) {
                    acc(*x, conv_forward_raw(&g, self.value(*w), None, &fwd, xv.shape()))?;
                }
                if needs(*w) {
                    acc(*w, conv_weight_grad_raw(&g, xv, &fwd))?;
                }
                if let Some(b) = b {
                    acc(*b, bias_grad_raw(&g))?;
                }
            }
            Op::Add(a, b) => {
                if needs(*b) {
                    acc(*b, reduce_to(&g, None, self.shape(*b)))?;
                }
                acc(*a, g)?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                check_broadcast(av.shape(), bv.shape(), "mul")?;
                if needs(*b) {
                    acc(*b, reduce_to(&g, Some(av), bv.shape()))?;
                }
                if needs(*a) {
                    acc(*a, broadcast_binary(&g, bv, "mul", |x, y| x * y)?)?;
                }
            }
            Op::Relu(x) => {
                let out = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                acc(*x, out)?;
            }
            Op::Sigmoid(x) => {
                let out = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?;
                acc(*x, out)?;
            }
            Op::Scale(x, k) => acc(*x, g.scale(*k))?,
            Op::ChannelPool { x, mode, argmax } => {
                let xs = self.shape(*x);
                let [n, c, h, w] = xs.0;
                let plane = h * w;
                let mut gx = Tensor::zeros(xs);
                let gd = g.data();
                let d = gx.data_mut();
                match mode {
                    PoolMode::Avg => {
                        let inv = T::one() / T::from_usize(c).unwrap();
                        for b in 0..n {
                            for ch in 0..c {
                                let dst = &mut d[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                                for (o, &gv) in dst.iter_mut().zip(&gd[b * plane..(b + 1) * plane]) {
                                    *o = gv * inv;
                                }
                            }
                        }
                    }
                    PoolMode::Max => {
                        for b in 0..n {
                            for p in 0..plane {
                                let ch = argmax[b * plane + p];
                                d[(b * c + ch) * plane + p] = gd[b * plane + p];
                            }
                        }
                    }
                }
                acc(*x, gx)?;
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let inv = T::one() / T::from_usize(xs.plane()).unwrap();
                let gx = Tensor::from_fn(xs, |[b, c, _, _]| g.at([b, c, 0, 0]) * inv);
                acc(*x, gx)?;
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.shape(*p).c();
                    if needs(*p) {
                        acc(*p, g.narrow_channels(start, c)?)?;
                    }
                    start += c;
                }
            }
            Op::Narrow { x, start } => {
                let xs = self.shape(*x);
                let len = g.shape().c();
                let gx = Tensor::from_fn(xs, |[b, c, y, xx]| {
                    if c >= *start && c < start + len {
                        g.at([b, c - start, y, xx])
                    } else {
                        T::zero()
                    }
                });
                acc(*x, gx)?;
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let [n, c, h, w] = g.dims();
                let plane = h * w;
                let m = T::from_usize(n * plane).unwrap();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let gp = g.plane(b, ch);
                        let xp = xhat.plane(b, ch);
                        dbeta[ch] += gp.iter().copied().sum::<T>();
                        dgamma[ch] += gp.iter().zip(xp).fold(T::zero(), |a, (&u, &v)| a + u * v);
                    }
                }
                if needs(*x) {
                    let mut gx = Tensor::zeros(g.shape());
                    let d = gx.data_mut();
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * inv_std[ch] / m;
                            let base = (b * c + ch) * plane;
                            let gp = g.plane(b, ch);
                            let xp = xhat.plane(b, ch);
                            for p in 0..plane {
                                d[base + p] = k * (m * gp[p] - dbeta[ch] - xp[p] * dgamma[ch]);
                            }
                        }
                    }
                    acc(*x, gx)?;
                }
                let cs = Shape::new(1, c, 1, 1);
                acc(*gamma, Tensor::from_vec(cs, dgamma)?)?;
                acc(*beta, Tensor::from_vec(cs, dbeta)?)?;
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let [n, c, _, _] = g.dims();
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let gp = g.plane(b, ch);
                        let xp = xv.plane(b, ch);
                        dbeta[ch] += gp.iter().copied().sum::<T>();
                        dgamma[ch] += gp
                            .iter()
                            .zip(xp)
                            .fold(T::zero(), |a, (&u, &v)| a + u * (v - mean[ch]) * inv_std[ch]);
                    }
                }
                if needs(*x) {
                    let gx = Tensor::from_fn(g.shape(), |[b, ch, y, xx]| {
                        g.at([b, ch, y, xx]) * gam[ch] * inv_std[ch]
                    });
                    acc(*x, gx)?;
                }
                let cs = Shape::new(1, c, 1, 1);
                acc(*gamma, Tensor::from_vec(cs, dgamma)?)?;
                acc(*beta, Tensor::from_vec(cs, dbeta)?)?;
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            } => {
                let (gq, gk, gv) = attention::attention_backward(
                    probs,
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    &g,
                    *scale,
                );
                acc(*q, gq)?;
                acc(*k, gk)?;
                acc(*v, gv)?;
            }
            Op::EmbedKernel { x, kernel, dilation } => {
                acc(*x, extract_kernel(&g, *kernel, *dilation))?;
            }
            Op::Sum(x) => {
                let gs = g.data()[0];
                acc(*x, Tensor::full(self.shape(*x), gs))?;
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = g.data()[0] * T::from_f64_lossy(2.0) / T::from_usize(av.len().max(1)).unwrap();
                let ga = av.zip_map(bv, |x, y| (x - y) * k)?;
                if needs(*b) {
                    acc(*b, ga.scale(-T::one()))?;
                }
                acc(*a, ga)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(x: Tensor<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", x, true).unwrap();
        (s, id)
    }

    #[test]
    fn sum_gives_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, id) = store_with(Tensor::rand_uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng));
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&store, id);
        let l = g.sum(x);
        g.backward(l, &mut store).unwrap();
        assert!(store.grad(id).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gives_two_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut store, id) = store_with(Tensor::rand_uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng));
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&store, id);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l, &mut store).unwrap();
        let expected = store.value(id).scale(2.0);
        assert!(store.grad(id).max_abs_diff(&expected).unwrap() <= 1e-15);
    }

    #[test]
    fn gradients_accumulate_across_passes() {
        let (mut store, id) = store_with(Tensor::ones(Shape::new(1, 1, 2, 2)));
        for _ in 0..2 {
            let mut g = Graph::new(Mode::Train);
            let x = g.param(&store, id);
            let l = g.sum(x);
            g.backward(l, &mut store).unwrap();
        }
        assert!(store.grad(id).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones(Shape::new(1, 1, 2, 2)), true).unwrap();
        let b = store.add("b", Tensor::ones(Shape::new(1, 1, 2, 2)), true).unwrap();
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&store, a);
        let _unused = g.param(&store, b);
        let l = g.sum(x);
        g.backward(l, &mut store).unwrap();
        assert!(store.grad(b).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (mut store, id) = store_with(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&store, id);
        assert!(matches!(g.backward(x, &mut store), Err(Error::Graph(_))));
    }

    #[test]
    fn stale_graph_rejected() {
        let (mut store, id) = store_with(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&store, id);
        let l = g.sum(x);
        store.value_mut(id).data_mut()[0] = 3.0;
        assert!(matches!(g.backward(l, &mut store), Err(Error::Graph(_))));
    }
}
