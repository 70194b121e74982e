//! Tape-based reverse-mode differentiation over tensors.
//!
//! Nodes are appended in evaluation order, so every node's inputs have
//! smaller ids and a single reverse sweep visits them in topological order.

use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{Real, Tensor};
use super::NnError;
use crate::contrastive::{batch_loss_with_grad, BatchLoss, EmbeddingBatch, LossMode};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad_left: usize,
    },
    BatchNorm {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<T>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Skip {
        input: NodeId,
        stride: usize,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    /// Scalar loss whose input gradient was computed during the forward pass.
    Precomputed {
        input: NodeId,
        grad: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

/// Per-channel batch statistics observed by a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every trainable parameter that
/// influenced it.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn insert(&mut self, name: &str, grad: Tensor<T>) {
        self.by_name.insert(name.to_string(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.by_name.iter()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

fn mismatch(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}

/// Output length and left padding of a "same" convolution.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2, total)
}

/// Zero-pads one row and splits it into `stride` polyphase components so
/// that tap `k` of output `t` reads `phases[k % stride][t + k / stride]`.
fn polyphase<T: Real>(row: &[T], pad_left: usize, pad_total: usize, stride: usize) -> Vec<Vec<T>> {
    let padded_len = row.len() + pad_total;
    let mut phases: Vec<Vec<T>> = (0..stride).map(|_| Vec::with_capacity(padded_len / stride + 1)).collect();
    for j in 0..padded_len {
        let v = if j >= pad_left && j < pad_left + row.len() { row[j - pad_left] } else { T::zero() };
        phases[j % stride].push(v);
    }
    phases
}

#[inline]
fn axpy<T: Real>(acc: &mut [T], w: T, src: &[T]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a += w * s;
    }
}

/// Dot product with eight interleaved partial sums (fixed order, so results
/// are reproducible) that the compiler can vectorize.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    /// Which side of zero every rectifier input fell on, in graph order.
    /// Two evaluations share a linear piece exactly when these agree.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { input } => Some(self.nodes[input.0].value.data().iter().map(|&v| v > T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A named parameter; gradients are reported only when `trainable`.
    pub fn param(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> NodeId {
        let id = self.push(value, Op::Leaf, trainable);
        self.nodes[id.0].param = Some(name.to_string());
        id
    }

    /// "Same"-padded 1-D cross-correlation.
    ///
    /// Shapes: input `(B, Cin, L)`, weight `(Cout, Cin, K)`, bias `(Cout)`;
    /// output `(B, Cout, ceil(L / stride))`.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize) -> Result<NodeId, NnError> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (&[batch, cin, len], &[cout, wcin, k], &[bcout]) = (x.shape(), w.shape(), b.shape()) else {
            return Err(mismatch(format!("conv1d shapes {:?} {:?} {:?}", x.shape(), w.shape(), b.shape())));
        };
        if wcin != cin || bcout != cout || stride == 0 || len == 0 || k == 0 {
            return Err(mismatch(format!("conv1d input {:?} weight {:?} bias {:?}", x.shape(), w.shape(), b.shape())));
        }
        let (out_len, pad_left, pad_total) = same_padding(len, k, stride);
        if k > len + pad_total {
            return Err(mismatch(format!("kernel {k} longer than padded input {}", len + pad_total)));
        }
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![T::zero(); batch * cout * out_len];
        for bi in 0..batch {
            let phases: Vec<Vec<Vec<T>>> = (0..cin)
                .map(|c| polyphase(&xd[(bi * cin + c) * len..(bi * cin + c + 1) * len], pad_left, pad_total, stride))
                .collect();
            for o in 0..cout {
                let acc = &mut out[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len];
                acc.iter_mut().for_each(|a| *a = bd[o]);
                for (c, ph) in phases.iter().enumerate() {
                    let taps = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (tap, &wv) in taps.iter().enumerate() {
                        let off = tap / stride;
                        axpy(acc, wv, &ph[tap % stride][off..off + out_len]);
                    }
                }
            }
        }
        let rg = self.needs(&[input, weight, bias]);
        let value = Tensor::from_vec(&[batch, cout, out_len], out)?;
        Ok(self.push(value, Op::Conv1d { input, weight, bias, stride, pad_left }, rg))
    }

    /// Per-channel normalization of a `(B, C, L)` tensor.
    ///
    /// In train mode the batch statistics are used and returned so the
    /// caller can update running averages; in eval mode `running` supplies
    /// the mean and variance.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        running: (&Tensor<T>, &Tensor<T>),
        mode: Mode,
    ) -> Result<(NodeId, Option<BatchStats<T>>), NnError> {
        let x = self.value(input);
        let &[batch, ch, len] = x.shape() else {
            return Err(mismatch(format!("batch_norm input {:?}", x.shape())));
        };
        for t in [self.value(scale), self.value(shift), running.0, running.1] {
            if t.shape() != [ch] {
                return Err(mismatch(format!("batch_norm channel tensor {:?} for {ch} channels", t.shape())));
            }
        }
        let count = batch * len;
        let xd = x.data();
        let at = |b: usize, c: usize| (b * ch + c) * len;
        let eps = T::of(BN_EPS);
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(mismatch("batch_norm in train mode needs at least 2 values per channel"));
                }
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                let n = T::of(count as f64);
                for c in 0..ch {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s += xd[at(b, c)..at(b, c) + len].iter().copied().sum::<T>();
                    }
                    mean[c] = s / n;
                    let mut v = T::zero();
                    for b in 0..batch {
                        for &q in &xd[at(b, c)..at(b, c) + len] {
                            v += (q - mean[c]) * (q - mean[c]);
                        }
                    }
                    var[c] = v / n;
                }
                let unbiased = var.iter().map(|&v| v * n / (n - T::one())).collect();
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.0.data().to_vec(), running.1.data().to_vec(), None),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, beta) = (self.value(scale).data(), self.value(shift).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for c in 0..ch {
                for i in at(b, c)..at(b, c) + len {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + beta[c];
                }
            }
        }
        let rg = self.needs(&[input, scale, shift]);
        let value = Tensor::from_vec(&[batch, ch, len], out)?;
        let batch_stats = mode == Mode::Train;
        let id = self.push(value, Op::BatchNorm { input, scale, shift, xhat, inv_std, batch_stats }, rg);
        Ok((id, stats))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out =
            Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.max(T::zero())).collect()).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Inverted dropout. Identity when `rng` is `None` (eval) or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: NodeId, rate: f64, rng: Option<&mut R>) -> NodeId {
        let Some(rng) = rng.filter(|_| rate > 0.0) else { return input };
        let keep = T::of(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let out = Tensor::from_vec(x.shape(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())
            .expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Dropout { input, mask }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let out = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect())?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Parameter-free shortcut: keeps every `stride`-th sample and zero-pads
    /// channels up to `out_channels`.
    pub fn skip(&mut self, input: NodeId, stride: usize, out_channels: usize) -> Result<NodeId, NnError> {
        let x = self.value(input);
        let &[batch, cin, len] = x.shape() else {
            return Err(mismatch(format!("skip input {:?}", x.shape())));
        };
        if out_channels < cin || stride == 0 {
            return Err(mismatch(format!("skip from {cin} to {out_channels} channels, stride {stride}")));
        }
        let out_len = len.div_ceil(stride);
        let mut out = vec![T::zero(); batch * out_channels * out_len];
        let xd = x.data();
        for b in 0..batch {
            for c in 0..cin {
                let src = &xd[(b * cin + c) * len..(b * cin + c + 1) * len];
                let dst = &mut out[(b * out_channels + c) * out_len..(b * out_channels + c + 1) * out_len];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = src[t * stride];
                }
            }
        }
        let rg = self.needs(&[input]);
        let value = Tensor::from_vec(&[batch, out_channels, out_len], out)?;
        Ok(self.push(value, Op::Skip { input, stride }, rg))
    }

    /// `(B, C, L)` to `(B, C)` by averaging over L.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let x = self.value(input);
        let &[batch, ch, len] = x.shape() else {
            return Err(mismatch(format!("global_avg_pool input {:?}", x.shape())));
        };
        let inv = T::of(1.0 / len as f64);
        let out: Vec<T> = x.data().chunks(len).map(|row| row.iter().copied().sum::<T>() * inv).collect();
        let rg = self.needs(&[input]);
        let value = Tensor::from_vec(&[batch, ch], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// Affine map: input `(B, In)`, weight `(Out, In)`, bias `(Out)`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[batch, nin], &[nout, win], &[bout]) = (x.shape(), w.shape(), b.shape()) else {
            return Err(mismatch(format!("dense shapes {:?} {:?} {:?}", x.shape(), w.shape(), b.shape())));
        };
        if win != nin || bout != nout {
            return Err(mismatch(format!("dense input {:?} weight {:?} bias {:?}", x.shape(), w.shape(), b.shape())));
        }
        let mut out = Vec::with_capacity(batch * nout);
        for row in x.data().chunks(nin) {
            for o in 0..nout {
                out.push(b.data()[o] + dot(row, &w.data()[o * nin..(o + 1) * nin]));
            }
        }
        let rg = self.needs(&[input, weight, bias]);
        let value = Tensor::from_vec(&[batch, nout], out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    /// Mean softmax cross-entropy of `(B, C)` logits. Returns the scalar loss
    /// node and the row-major class probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<(NodeId, Vec<T>), NnError> {
        let x = self.value(logits);
        let &[batch, classes] = x.shape() else {
            return Err(mismatch(format!("softmax_cross_entropy logits {:?}", x.shape())));
        };
        if labels.len() != batch || batch == 0 || labels.iter().any(|&l| l >= classes) {
            return Err(mismatch(format!("{} labels for {batch} rows of {classes} classes", labels.len())));
        }
        let (probs, loss) = softmax_xent(x.data(), classes, labels);
        let rg = self.needs(&[logits]);
        let id = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, probs: probs.clone(), labels: labels.to_vec() },
            rg,
        );
        Ok((id, probs))
    }

    /// Contrastive loss over `(2N, D)` embeddings.
    pub fn contrastive_loss(
        &mut self,
        embeddings: NodeId,
        temperature: f64,
        mode: LossMode,
    ) -> Result<(NodeId, BatchLoss), NnError> {
        let x = self.value(embeddings);
        let &[_, dim] = x.shape() else {
            return Err(mismatch(format!("contrastive_loss input {:?}", x.shape())));
        };
        let rows: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
        let batch = EmbeddingBatch::from_rows(&rows, dim)?;
        let (loss, grads) = batch_loss_with_grad(&batch, temperature, mode)?;
        let grad: Vec<T> = grads.into_iter().flatten().map(T::of).collect();
        let rg = self.needs(&[embeddings]);
        let id = self.push(Tensor::scalar(T::of(loss.loss)), Op::Precomputed { input: embeddings, grad }, rg);
        Ok((id, loss))
    }

    /// Scalar `sum(w * x)` over all elements of `input`.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<T>) -> Result<NodeId, NnError> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(mismatch(format!("{} weights for {:?}", weights.len(), x.shape())));
        }
        let v = dot(x.data(), &weights);
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(v), Op::Precomputed { input, grad: weights }, rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NnError> {
        if self.value(loss).len() != 1 {
            return Err(mismatch(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(gout);
                continue;
            }
            for (target, g) in self.local_grads(NodeId(id), &gout) {
                if target.0 >= id {
                    return Err(NnError::GraphCycle);
                }
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        let mut by_name = BTreeMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), Some(name)) = (g, &self.nodes[id].param) {
                by_name.insert(name.clone(), g);
            }
        }
        Ok(Gradients { by_name })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn local_grads(&self, id: NodeId, gout: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let node = &self.nodes[id.0];
        let g = gout.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d { input, weight, bias, stride, pad_left } => {
                let x = self.value(input);
                let w = self.value(weight);
                let &[batch, cin, len] = x.shape() else { unreachable!() };
                let &[cout, _, k] = w.shape() else { unreachable!() };
                let out_len = node.value.shape()[2];
                let pad_total = ((out_len - 1) * stride + k).saturating_sub(len);
                let (xd, wd) = (x.data(), w.data());
                let (need_x, need_w, need_b) = (self.wants(input), self.wants(weight), self.wants(bias));
                let mut gx = vec![T::zero(); if need_x { xd.len() } else { 0 }];
                let mut gw = vec![T::zero(); wd.len()];
                let mut gb = vec![T::zero(); cout];
                for bi in 0..batch {
                    let phases: Vec<Vec<Vec<T>>> = (0..cin)
                        .map(|c| {
                            polyphase(&xd[(bi * cin + c) * len..(bi * cin + c + 1) * len], pad_left, pad_total, stride)
                        })
                        .collect();
                    let mut gphases: Vec<Vec<Vec<T>>> = if need_x {
                        phases.iter().map(|ph| ph.iter().map(|p| vec![T::zero(); p.len()]).collect()).collect()
                    } else {
                        Vec::new()
                    };
                    for o in 0..cout {
                        let go = &g[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len];
                        if need_b {
                            gb[o] += go.iter().copied().sum::<T>();
                        }
                        for c in 0..cin {
                            let base = (o * cin + c) * k;
                            for tap in 0..k {
                                let (p, off) = (tap % stride, tap / stride);
                                if need_w {
                                    gw[base + tap] += dot(go, &phases[c][p][off..off + out_len]);
                                }
                                if need_x {
                                    axpy(&mut gphases[c][p][off..off + out_len], wd[base + tap], go);
                                }
                            }
                        }
                    }
                    if need_x {
                        for c in 0..cin {
                            let dst = &mut gx[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                            for (i, d) in dst.iter_mut().enumerate() {
                                let j = i + pad_left;
                                *d = gphases[c][j % stride][j / stride];
                            }
                        }
                    }
                }
                if need_x {
                    out.push((input, Tensor::from_vec(x.shape(), gx).expect("shape")));
                }
                if need_w {
                    out.push((weight, Tensor::from_vec(w.shape(), gw).expect("shape")));
                }
                if need_b {
                    out.push((bias, Tensor::from_vec(&[cout], gb).expect("shape")));
                }
            }
            Op::BatchNorm { input, scale, shift, xhat, inv_std, batch_stats } => {
                let x = self.value(*input);
                let &[batch, ch, len] = x.shape() else { unreachable!() };
                let gamma = self.value(*scale).data();
                let at = |b: usize, c: usize| (b * ch + c) * len;
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for b in 0..batch {
                    for c in 0..ch {
                        for i in at(b, c)..at(b, c) + len {
                            dbeta[c] += g[i];
                            dgamma[c] += g[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*input) {
                    let mut gx = vec![T::zero(); x.len()];
                    let m = T::of((batch * len) as f64);
                    for b in 0..batch {
                        for c in 0..ch {
                            let k = gamma[c] * inv_std[c];
                            for i in at(b, c)..at(b, c) + len {
                                gx[i] = if *batch_stats {
                                    k / m * (m * g[i] - dbeta[c] - xhat[i] * dgamma[c])
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    out.push((*input, Tensor::from_vec(x.shape(), gx).expect("shape")));
                }
                out.push((*scale, Tensor::from_vec(&[ch], dgamma).expect("shape")));
                out.push((*shift, Tensor::from_vec(&[ch], dbeta).expect("shape")));
            }
            &Op::Relu { input } => {
                // Subgradient 0 at 0.
                let x = self.value(input).data();
                let gx = x.iter().zip(g).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
                out.push((input, Tensor::from_vec(self.value(input).shape(), gx).expect("shape")));
            }
            Op::Dropout { input, mask } => {
                let gx = g.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                out.push((*input, Tensor::from_vec(self.value(*input).shape(), gx).expect("shape")));
            }
            &Op::Add { a, b } => {
                out.push((a, gout.clone()));
                out.push((b, gout.clone()));
            }
            &Op::Skip { input, stride } => {
                let x = self.value(input);
                let &[batch, cin, len] = x.shape() else { unreachable!() };
                let &[_, cout, out_len] = node.value.shape() else { unreachable!() };
                let mut gx = vec![T::zero(); x.len()];
                for b in 0..batch {
                    for c in 0..cin {
                        let src = &g[(b * cout + c) * out_len..(b * cout + c + 1) * out_len];
                        let dst = &mut gx[(b * cin + c) * len..(b * cin + c + 1) * len];
                        for (t, &v) in src.iter().enumerate() {
                            dst[t * stride] += v;
                        }
                    }
                }
                out.push((input, Tensor::from_vec(x.shape(), gx).expect("shape")));
            }
            &Op::GlobalAvgPool { input } => {
                let x = self.value(input);
                let len = x.shape()[2];
                let inv = T::of(1.0 / len as f64);
                let gx = g.iter().flat_map(|&d| std::iter::repeat_n(d * inv, len)).collect();
                out.push((input, Tensor::from_vec(x.shape(), gx).expect("shape")));
            }
            &Op::Dense { input, weight, bias } => {
                let (x, w) = (self.value(input), self.value(weight));
                let &[batch, nin] = x.shape() else { unreachable!() };
                let nout = w.shape()[0];
                if self.wants(input) {
                    let mut gx = vec![T::zero(); x.len()];
                    for b in 0..batch {
                        let dst = &mut gx[b * nin..(b + 1) * nin];
                        for o in 0..nout {
                            axpy(dst, g[b * nout + o], &w.data()[o * nin..(o + 1) * nin]);
                        }
                    }
                    out.push((input, Tensor::from_vec(x.shape(), gx).expect("shape")));
                }
                if self.wants(weight) {
                    let mut gw = vec![T::zero(); w.len()];
                    for b in 0..batch {
                        let row = &x.data()[b * nin..(b + 1) * nin];
                        for o in 0..nout {
                            axpy(&mut gw[o * nin..(o + 1) * nin], g[b * nout + o], row);
                        }
                    }
                    out.push((weight, Tensor::from_vec(w.shape(), gw).expect("shape")));
                }
                if self.wants(bias) {
                    let mut gb = vec![T::zero(); nout];
                    for b in 0..batch {
                        for o in 0..nout {
                            gb[o] += g[b * nout + o];
                        }
                    }
                    out.push((bias, Tensor::from_vec(&[nout], gb).expect("shape")));
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let shape = self.value(*logits).shape();
                let classes = shape[1];
                let scale = g[0] / T::of(labels.len() as f64);
                let mut gx = probs.clone();
                for (b, &l) in labels.iter().enumerate() {
                    gx[b * classes + l] -= T::one();
                }
                gx.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, Tensor::from_vec(shape, gx).expect("shape")));
            }
            Op::Precomputed { input, grad } => {
                let gx = grad.iter().map(|&v| v * g[0]).collect();
                out.push((*input, Tensor::from_vec(self.value(*input).shape(), gx).expect("shape")));
            }
        }
        out
    }
}

/// Row-wise stabilised softmax and the mean negative log-likelihood.
pub fn softmax_xent<T: Real>(logits: &[T], classes: usize, labels: &[usize]) -> (Vec<T>, T) {
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &label) in logits.chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[label];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    (probs, total / T::of(labels.len() as f64))
}
