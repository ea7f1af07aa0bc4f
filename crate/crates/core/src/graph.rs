//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation as a node holding its value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! for every node. Nodes are immutable once pushed.

use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::ops::{self, BnCache, Mode, RunningStats};
use crate::tensor::{ConvSpec, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec },
    Relu6(Var),
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Linear { input: Var, weight: Var, bias: Option<Var> },
    BatchNorm { input: Var, gamma: Var, beta: Var, cache: BnCache },
    Softmax(Var),
    Add(Var, Var),
    ChannelMul { input: Var, mask: Var },
    ScaleByElement { input: Var, scalars: Var, index: usize },
    Reshape(Var),
    Sum(Var),
    Dot { input: Var, weights: Tensor },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    scope: Arc<str>,
}

/// Region of a ReLU6 input: below 0, inside (0,6), or above 6.
pub type KinkRegion = u8;

/// Reverse-mode tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    scope: Option<Arc<str>>,
    count_macs: bool,
    macs: u64,
    record_regions: bool,
    regions: Vec<KinkRegion>,
}

/// Gradients of leaf nodes, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn region(v: f64) -> KinkRegion {
    if v <= 0.0 {
        0
    } else if v < 6.0 {
        1
    } else {
        2
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts every multiply-accumulate executed by conv and linear nodes.
    pub fn with_mac_counting(mut self) -> Self {
        self.count_macs = true;
        self
    }

    /// Records which side of each ReLU6 kink every activation input falls on.
    pub fn with_kink_recording(mut self) -> Self {
        self.record_regions = true;
        self
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn kink_regions(&self) -> &[KinkRegion] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Labels subsequently created nodes, used in diagnostics.
    pub fn set_scope(&mut self, scope: &str) {
        self.scope = Some(Arc::from(scope));
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scope_of(&self, var: Var) -> &str {
        &self.nodes[var.0].scope
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let scope = self.scope.clone().unwrap_or_else(|| Arc::from(""));
        self.nodes.push(Node { value, op, requires_grad, scope });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::State(format!("variable {} was not recorded in this graph", var.0)));
        }
        Ok(())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (inputs under analysis).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let b = bias.map(|b| self.check(b).map(|_| &self.nodes[b.0].value)).transpose()?;
        let (x, w) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
        let value = if self.count_macs {
            let mut macs = 0;
            let v = ops::conv2d_counted::<true>(x, w, b, &spec, &mut macs)?;
            self.macs += macs;
            v
        } else {
            ops::conv2d(x, w, b, &spec)?
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, spec }, rg))
    }

    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if self.record_regions {
            self.regions.extend(xv.data().iter().map(|&v| region(v)));
        }
        let value = ops::relu6(xv);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Relu6(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if self.record_regions {
            self.regions.extend(xv.data().iter().map(|&v| u8::from(v > 0.0)));
        }
        let value = xv.map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = ops::sigmoid(&self.nodes[x.0].value);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Sigmoid(x), rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = ops::global_avg_pool(&self.nodes[x.0].value)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let b = bias.map(|b| &self.nodes[b.0].value);
        let (x, w) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
        let value = if self.count_macs {
            let mut macs = 0;
            let v = ops::linear_counted::<true>(x, w, b, &mut macs)?;
            self.macs += macs;
            v
        } else {
            ops::linear(x, w, b)?
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Linear { input, weight, bias }, rg))
    }

    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, stats: &mut RunningStats, mode: Mode) -> Result<Var> {
        for v in [input, gamma, beta] {
            self.check(v)?;
        }
        let (value, cache) =
            ops::batch_norm(&self.nodes[input.0].value, &self.nodes[gamma.0].value, &self.nodes[beta.0].value, stats, mode)?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(value, Op::BatchNorm { input, gamma, beta, cache }, rg))
    }

    /// Softmax over a 1-d vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 1 {
            return dim_err(format!("softmax expects a vector, got {:?}", xv.shape()));
        }
        let value = Tensor::new(xv.shape().to_vec(), ops::softmax(xv.data()))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return dim_err(format!("add of {:?} and {:?}", av.shape(), bv.shape()));
        }
        let mut value = av.clone();
        value.data_mut().iter_mut().zip(bv.data()).for_each(|(x, y)| *x += y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// `[N,C,H,W] * [N,C,1,1]`, broadcasting the mask over space.
    pub fn channel_mul(&mut self, input: Var, mask: Var) -> Result<Var> {
        self.check(input)?;
        self.check(mask)?;
        let (n, c, h, w) = self.nodes[input.0].value.dims4()?;
        let mv = &self.nodes[mask.0].value;
        if mv.shape() != [n, c, 1, 1] {
            return dim_err(format!("mask shape {:?} for input [{n},{c},{h},{w}]", mv.shape()));
        }
        let mut value = self.nodes[input.0].value.clone();
        for (plane, &m) in value.data_mut().chunks_mut(h * w).zip(mv.data()) {
            plane.iter_mut().for_each(|v| *v *= m);
        }
        let rg = self.rg(&[input, mask]);
        Ok(self.push(value, Op::ChannelMul { input, mask }, rg))
    }

    /// `input * scalars[index]` where `scalars` is a vector node.
    pub fn scale_by_element(&mut self, input: Var, scalars: Var, index: usize) -> Result<Var> {
        self.check(input)?;
        self.check(scalars)?;
        let sv = &self.nodes[scalars.0].value;
        if sv.shape().len() != 1 || index >= sv.numel() {
            return dim_err(format!("element {index} of {:?}", sv.shape()));
        }
        let s = sv.data()[index];
        let value = self.nodes[input.0].value.map(|v| v * s);
        let rg = self.rg(&[input, scalars]);
        Ok(self.push(value, Op::ScaleByElement { input, scalars, index }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `[N,C,H,W] → [N,C·H·W]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (n, c, h, w) = self.value(x).dims4()?;
        self.reshape(x, &[n, c * h * w])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.nodes[x.0].value.data().iter().sum());
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    /// `Σ input ⊙ weights` with constant weights.
    pub fn dot(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        self.check(input)?;
        let xv = &self.nodes[input.0].value;
        if xv.shape() != weights.shape() {
            return dim_err(format!("dot of {:?} with {:?}", xv.shape(), weights.shape()));
        }
        let value = Tensor::scalar(xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum());
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Dot { input, weights }, rg))
    }

    /// Mean softmax cross-entropy of `[N,K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let (n, k) = self.nodes[logits.0].value.dims2()?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return dim_err(format!("{} labels for {n}×{k} logits", labels.len()));
        }
        let lv = self.nodes[logits.0].value.data();
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &label) in lv.chunks(k).zip(labels) {
            let p = ops::softmax(row);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            probs.extend(p);
        }
        let probs = Tensor::new(vec![n, k], probs)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss / n as f64), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// First computed node (in execution order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes.iter().position(|n| !matches!(n.op, Op::Leaf) && !n.value.is_finite()).map(Var)
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        self.check(loss)?;
        if self.nodes[loss.0].value.numel() != 1 {
            return dim_err(format!("backward needs a scalar loss, got {:?}", self.nodes[loss.0].value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let mut contribs: Vec<(Var, Tensor)> = Vec::new();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, spec } => {
                    let cg = ops::conv2d_backward(self.value(*input), self.value(*weight), spec, &g)?;
                    contribs.push((*input, cg.input));
                    contribs.push((*weight, cg.weight));
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        contribs.push((*b, gb));
                    }
                }
                Op::Relu6(x) => contribs.push((*x, ops::relu6_backward(self.value(*x), &g))),
                Op::Sigmoid(x) => contribs.push((*x, ops::sigmoid_backward(&node.value, &g))),
                Op::GlobalAvgPool(x) => {
                    contribs.push((*x, ops::global_avg_pool_backward(self.value(*x).shape(), &g)?));
                }
                Op::Linear { input, weight, bias } => {
                    let lg = ops::linear_backward(self.value(*input), self.value(*weight), &g)?;
                    contribs.push((*input, lg.input));
                    contribs.push((*weight, lg.weight));
                    if let Some(b) = bias {
                        contribs.push((*b, lg.bias));
                    }
                }
                Op::BatchNorm { input, gamma, beta, cache } => {
                    let bg = ops::batch_norm_backward(self.value(*input), self.value(*gamma), cache, &g)?;
                    contribs.push((*input, bg.input));
                    contribs.push((*gamma, bg.gamma));
                    contribs.push((*beta, bg.beta));
                }
                Op::Softmax(x) => {
                    let d = ops::softmax_backward(node.value.data(), g.data());
                    contribs.push((*x, Tensor::new(g.shape().to_vec(), d)?));
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g));
                }
                Op::ChannelMul { input, mask } => {
                    let xv = self.value(*input);
                    let mv = self.value(*mask);
                    let (_, _, h, w) = xv.dims4()?;
                    let mut gx = g.clone();
                    let mut gm = Tensor::zeros(mv.shape());
                    for (p, ((gplane, xplane), &m)) in
                        gx.data_mut().chunks_mut(h * w).zip(xv.data().chunks(h * w)).zip(mv.data()).enumerate()
                    {
                        gm.data_mut()[p] = gplane.iter().zip(xplane).map(|(a, b)| a * b).sum();
                        gplane.iter_mut().for_each(|v| *v *= m);
                    }
                    contribs.push((*input, gx));
                    contribs.push((*mask, gm));
                }
                Op::ScaleByElement { input, scalars, index } => {
                    let sv = self.value(*scalars);
                    let s = sv.data()[*index];
                    let gs: f64 = g.data().iter().zip(self.value(*input).data()).map(|(a, b)| a * b).sum();
                    let mut gvec = Tensor::zeros(sv.shape());
                    gvec.data_mut()[*index] = gs;
                    contribs.push((*input, g.map(|v| v * s)));
                    contribs.push((*scalars, gvec));
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::Reshape(x) => contribs.push((*x, g.reshape(self.value(*x).shape())?)),
                Op::Sum(x) => {
                    let s = g.data()[0];
                    contribs.push((*x, Tensor::full(self.value(*x).shape(), s)));
                }
                Op::Dot { input, weights } => {
                    let s = g.data()[0];
                    contribs.push((*input, weights.map(|w| w * s)));
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let s = g.data()[0];
                    let (n, k) = probs.dims2()?;
                    let mut gl = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        gl.data_mut()[i * k + l] -= 1.0;
                    }
                    gl.data_mut().iter_mut().for_each(|v| *v *= s / n as f64);
                    contribs.push((*logits, gl));
                }
            }
            for (var, c) in contribs {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(c.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }
}
