//! Reverse-mode differentiation over a recorded sequence of layer calls.
//!
//! A [`Tape`] records one forward pass. Parameters are referenced by
//! [`ParamId`] rather than copied, so [`Tape::backward`] accumulates
//! directly into the [`ParamStore`] gradient buffers. A tape can be
//! differentiated once; record a new pass to differentiate again.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{self, BatchNormConfig, BatchStats, ConvGeometry, Padding, RunningStats};
use super::params::{ParamId, ParamStore};
use super::tensor::NdArray;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        kernel: ParamId,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: NodeId,
        scale: ParamId,
        shift: ParamId,
        /// Normalized input, needed by the batch-statistics backward.
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Linear {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    Reshape(NodeId),
    Sum(NodeId),
    /// Scalar objective whose gradient with respect to `input` was
    /// computed alongside its value.
    Objective {
        input: NodeId,
        grad: NdArray,
    },
}

#[derive(Debug)]
struct Node {
    value: NdArray,
    op: Op,
}

#[derive(Debug)]
struct PendingStats {
    mean: ParamId,
    var: ParamId,
    batch: BatchStats,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<NdArray>>,
    pending: Vec<PendingStats>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: NdArray, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, node: NodeId) -> &NdArray {
        &self.nodes[node.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last backward root with respect to `node`.
    pub fn grad(&self, node: NodeId) -> Option<&NdArray> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }

    pub fn input(&mut self, value: NdArray) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Copies a parameter onto the tape as a differentiable value.
    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> NodeId {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, params: &ParamStore, input: NodeId, kernel: ParamId, stride: usize) -> Result<NodeId> {
        let x = self.value(input);
        let k = params.value(kernel);
        let geom = ConvGeometry::new(x.nhwc()?, k.shape(), stride, Padding::Same)?;
        let mut out = NdArray::zeros(&geom.output_shape());
        geom.forward(x.data(), k.data(), out.data_mut());
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }))
    }

    /// Batch normalization. With `batch_stats` the batch moments are used
    /// and queued for [`Tape::commit_running_stats`]; otherwise the running
    /// statistics in `running` are applied.
    pub fn batch_norm(
        &mut self,
        params: &ParamStore,
        input: NodeId,
        bn: BatchNormIds,
        batch_stats: bool,
        config: BatchNormConfig,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let channels = *x.shape().last().unwrap_or(&0);
        let (scale, shift) = (params.value(bn.scale).data(), params.value(bn.shift).data());
        if scale.len() != channels || shift.len() != channels {
            return Err(Error::Shape {
                op: "batch_norm",
                expected: vec![channels],
                actual: vec![scale.len()],
            });
        }
        let (mean, inv_std, stats) = if batch_stats {
            let stats = ops::channel_moments(x.data(), channels, config.epsilon);
            (stats.mean.clone(), stats.inv_std.clone(), Some(stats))
        } else {
            let mean = params.value(bn.running_mean).data().to_vec();
            let inv_std = params
                .value(bn.running_var)
                .data()
                .iter()
                .map(|v| 1.0 / libm::sqrt(v + config.epsilon))
                .collect();
            (mean, inv_std, None)
        };
        let unit = vec![1.0; channels];
        let zero = vec![0.0; channels];
        let mut normalized = vec![0.0; x.len()];
        ops::normalize(x.data(), channels, &mean, &inv_std, &unit, &zero, &mut normalized);
        let mut out = NdArray::zeros(x.shape());
        for (o, n) in out.data_mut().chunks_exact_mut(channels).zip(normalized.chunks_exact(channels)) {
            for c in 0..channels {
                o[c] = n[c] * scale[c] + shift[c];
            }
        }
        if let Some(batch) = stats {
            self.pending.push(PendingStats {
                mean: bn.running_mean,
                var: bn.running_var,
                batch,
            });
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                scale: bn.scale,
                shift: bn.shift,
                normalized,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Folds batch statistics recorded in train mode into the running
    /// statistics.
    pub fn commit_running_stats(&mut self, params: &mut ParamStore, momentum: f64) {
        for p in self.pending.drain(..) {
            let mut mean = params.value(p.mean).clone();
            let mut var = params.value(p.var).clone();
            RunningStats::update(mean.data_mut(), var.data_mut(), &p.batch, momentum);
            *params.value_mut(p.mean) = mean;
            *params.value_mut(p.var) = var;
        }
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: "add",
                expected: a.shape().to_vec(),
                actual: b.shape().to_vec(),
            });
        }
        let mut out = a.clone();
        out.add_scaled(b, 1.0);
        Ok(self.push(out, Op::Add(lhs, rhs)))
    }

    pub fn linear(&mut self, params: &ParamStore, input: NodeId, weight: ParamId, bias: ParamId) -> Result<NodeId> {
        let out = ops::fully_connected(self.value(input), params.value(weight), params.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum();
        self.push(NdArray::scalar(s), Op::Sum(input))
    }

    /// Records a scalar objective of `input`. `f` returns the value and its
    /// gradient with respect to the input values.
    pub fn objective(&mut self, input: NodeId, f: impl FnOnce(&NdArray) -> (f64, NdArray)) -> Result<NodeId> {
        let (value, grad) = f(self.value(input));
        if grad.shape() != self.value(input).shape() {
            return Err(Error::Shape {
                op: "objective gradient",
                expected: self.value(input).shape().to_vec(),
                actual: grad.shape().to_vec(),
            });
        }
        Ok(self.push(NdArray::scalar(value), Op::Objective { input, grad }))
    }

    /// Backpropagates from the scalar `root` with seed 1.
    pub fn backward(&mut self, root: NodeId, params: &mut ParamStore) -> Result<()> {
        self.backward_with_seed(root, 1.0, params)
    }

    pub fn backward_with_seed(&mut self, root: NodeId, seed: f64, params: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(self.value(root).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<NdArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(NdArray::filled(self.value(root).shape(), seed));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.grad_mut(*id).add_scaled(&g, 1.0),
                Op::Conv2d { input, kernel, geom } => {
                    let x = &self.nodes[input.0].value;
                    let mut gin = take_or_zeros(&mut grads, *input, x.shape());
                    let k = params.value(*kernel).clone();
                    geom.backward(
                        x.data(),
                        k.data(),
                        g.data(),
                        Some(gin.data_mut()),
                        params.grad_mut(*kernel).data_mut(),
                    );
                    grads[input.0] = Some(gin);
                }
                Op::BatchNorm {
                    input,
                    scale,
                    shift,
                    normalized,
                    inv_std,
                    batch_stats,
                } => {
                    let channels = inv_std.len();
                    let count = (g.len() / channels) as f64;
                    let mut sum_g = vec![0.0; channels];
                    let mut sum_gn = vec![0.0; channels];
                    for (gp, np) in g.data().chunks_exact(channels).zip(normalized.chunks_exact(channels)) {
                        for c in 0..channels {
                            sum_g[c] += gp[c];
                            sum_gn[c] += gp[c] * np[c];
                        }
                    }
                    let scale_v = params.value(*scale).data().to_vec();
                    for (gs, s) in params.grad_mut(*scale).data_mut().iter_mut().zip(&sum_gn) {
                        *gs += s;
                    }
                    for (gs, s) in params.grad_mut(*shift).data_mut().iter_mut().zip(&sum_g) {
                        *gs += s;
                    }
                    let mut gin = take_or_zeros(&mut grads, *input, g.shape());
                    for ((gi, gp), np) in gin
                        .data_mut()
                        .chunks_exact_mut(channels)
                        .zip(g.data().chunks_exact(channels))
                        .zip(normalized.chunks_exact(channels))
                    {
                        for c in 0..channels {
                            let k = scale_v[c] * inv_std[c];
                            gi[c] += if *batch_stats {
                                k * (gp[c] - sum_g[c] / count - np[c] * sum_gn[c] / count)
                            } else {
                                k * gp[c]
                            };
                        }
                    }
                    grads[input.0] = Some(gin);
                }
                Op::Relu(input) => {
                    let x = &self.nodes[input.0].value;
                    let mut gin = take_or_zeros(&mut grads, *input, x.shape());
                    for ((gi, &gv), &xv) in gin.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if xv > 0.0 {
                            *gi += gv;
                        }
                    }
                    grads[input.0] = Some(gin);
                }
                Op::Add(lhs, rhs) => {
                    for id in [*lhs, *rhs] {
                        let mut gin = take_or_zeros(&mut grads, id, g.shape());
                        gin.add_scaled(&g, 1.0);
                        grads[id.0] = Some(gin);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let x = &self.nodes[input.0].value;
                    let dout = g.shape()[g.shape().len() - 1];
                    let din = x.len() / (g.len() / dout);
                    let rows = g.len() / dout;
                    let w = params.value(*weight).clone();
                    let mut gin = take_or_zeros(&mut grads, *input, x.shape());
                    {
                        let gw = params.grad_mut(*weight).data_mut();
                        for r in 0..rows {
                            let gr = &g.data()[r * dout..(r + 1) * dout];
                            let xr = &x.data()[r * din..(r + 1) * din];
                            for i in 0..din {
                                let row = i * dout..(i + 1) * dout;
                                if xr[i] != 0.0 {
                                    for (gwv, &gv) in gw[row.clone()].iter_mut().zip(gr) {
                                        *gwv += xr[i] * gv;
                                    }
                                }
                                gin.data_mut()[r * din + i] += ops::dot(&w.data()[row], gr);
                            }
                        }
                    }
                    let gb = params.grad_mut(*bias).data_mut();
                    for gr in g.data().chunks_exact(dout) {
                        for (b, &gv) in gb.iter_mut().zip(gr) {
                            *b += gv;
                        }
                    }
                    grads[input.0] = Some(gin);
                }
                Op::Reshape(input) => {
                    let shape = self.nodes[input.0].value.shape();
                    let mut gin = take_or_zeros(&mut grads, *input, shape);
                    for (a, b) in gin.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                    grads[input.0] = Some(gin);
                }
                Op::Sum(input) => {
                    let shape = self.nodes[input.0].value.shape();
                    let mut gin = take_or_zeros(&mut grads, *input, shape);
                    let s = g.data()[0];
                    gin.data_mut().iter_mut().for_each(|v| *v += s);
                    grads[input.0] = Some(gin);
                }
                Op::Objective { input, grad } => {
                    let mut gin = take_or_zeros(&mut grads, *input, grad.shape());
                    gin.add_scaled(grad, g.data()[0]);
                    grads[input.0] = Some(gin);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

fn take_or_zeros(grads: &mut [Option<NdArray>], id: NodeId, shape: &[usize]) -> NdArray {
    grads[id.0].take().unwrap_or_else(|| NdArray::zeros(shape))
}

/// Parameter handles of one batch-normalization layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNormIds {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}
