use std::collections::HashMap;

use crate::{ops, Conv, Exec, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Conv {
        x: usize,
        w: &'a Tensor,
        has_bias: bool,
        w_slot: Option<usize>,
        b_slot: Option<usize>,
        stride: usize,
        pad: usize,
        transposed: bool,
    },
    LeakyRelu { x: usize, slope: f32 },
    TanhUnit { x: usize },
    Add { a: usize, b: usize },
    Scale { x: usize, s: f32 },
    Concat { xs: Vec<usize>, channels: Vec<usize> },
    ConcatBatch { xs: Vec<usize>, sizes: Vec<usize> },
    SliceBatch { x: usize, start: usize },
    MaxPool2 { x: usize, arg: Vec<u32> },
    MeanPool { x: usize },
    ChannelAffine { x: usize, scale: Vec<f32> },
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
    needs_grad: bool,
}

/// Tape of recorded operations. Parameters of the one `trainable` store get
/// gradients; parameters of any other store are treated as constants.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    trainable: Option<&'a ParamStore>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradients indexed by parameter position in their store.
    pub fn from_params(params: Vec<Option<Tensor>>) -> Self {
        Self { params, leaves: HashMap::new() }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    pub fn leaf(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    /// Sum of squared gradient entries over all parameters.
    pub fn sum_sq(&self) -> f64 {
        self.params.iter().flatten().map(Tensor::sum_sq).sum()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if let Some(t) = theirs {
                accumulate(mine, t.clone());
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in self.params.iter_mut().flatten() {
            t.scale_in_place(s);
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'a> Default for Graph<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), trainable: None }
    }

    pub fn with_trainable(store: &'a ParamStore) -> Self {
        Self { nodes: Vec::new(), trainable: Some(store) }
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn slot(&self, store: &'a ParamStore, id: ParamId) -> Option<usize> {
        match self.trainable {
            Some(t) if std::ptr::eq(t, store) => Some(id.index()),
            _ => None,
        }
    }

    /// Back-propagate `seeds` (gradients of the scalar objective with respect
    /// to recorded values) through the tape.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.nodes[v.0].value.shape() {
                return Err(TensorError::Shape(format!(
                    "seed {:?} for value {:?}",
                    g.shape(),
                    self.nodes[v.0].value.shape()
                )));
            }
            accumulate(&mut grads[v.0], g);
        }
        let n_params = self.trainable.map_or(0, ParamStore::len);
        let mut out = Gradients {
            params: (0..n_params).map(|_| None).collect(),
            leaves: HashMap::new(),
        };
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                &Op::Conv { x, w, has_bias, w_slot, b_slot, stride, pad, transposed } => {
                    let xv = &self.nodes[x].value;
                    let need_dx = self.needs(x);
                    let need_dw = w_slot.is_some();
                    let cg = if transposed {
                        ops::conv_transpose2d_backward(xv, w, has_bias, stride, pad, &g, need_dx, need_dw)?
                    } else {
                        ops::conv2d_backward(xv, w, has_bias, stride, pad, &g, need_dx, need_dw)?
                    };
                    if let (Some(s), Some(dw)) = (w_slot, cg.dw) {
                        accumulate(&mut out.params[s], dw);
                    }
                    if let (Some(s), Some(db)) = (b_slot, cg.db) {
                        accumulate(&mut out.params[s], db);
                    }
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads[x], dx);
                    }
                }
                &Op::LeakyRelu { x, slope } => {
                    let dx = ops::leaky_relu_backward(&self.nodes[x].value, &g, slope);
                    accumulate(&mut grads[x], dx);
                }
                &Op::TanhUnit { x } => {
                    let dx = ops::tanh_unit_backward(&node.value, &g);
                    accumulate(&mut grads[x], dx);
                }
                &Op::Add { a, b } => {
                    if self.needs(a) && self.needs(b) {
                        accumulate(&mut grads[a], g.clone());
                        accumulate(&mut grads[b], g);
                    } else if self.needs(a) {
                        accumulate(&mut grads[a], g);
                    } else {
                        accumulate(&mut grads[b], g);
                    }
                }
                &Op::Scale { x, s } => {
                    let mut dx = g;
                    dx.scale_in_place(s);
                    accumulate(&mut grads[x], dx);
                }
                Op::Concat { xs, channels } => {
                    for (&x, dx) in xs.iter().zip(ops::split_channels(&g, channels)) {
                        if self.needs(x) {
                            accumulate(&mut grads[x], dx);
                        }
                    }
                }
                Op::ConcatBatch { xs, sizes } => {
                    let mut start = 0;
                    for (&x, &len) in xs.iter().zip(sizes) {
                        if self.needs(x) {
                            accumulate(&mut grads[x], ops::slice_batch(&g, start, len)?);
                        }
                        start += len;
                    }
                }
                &Op::SliceBatch { x, start } => {
                    let dx = ops::slice_batch_backward(self.nodes[x].value.shape(), start, &g);
                    accumulate(&mut grads[x], dx);
                }
                Op::MaxPool2 { x, arg } => {
                    let dx = ops::max_pool2_backward(self.nodes[*x].value.shape(), arg, &g);
                    accumulate(&mut grads[*x], dx);
                }
                &Op::MeanPool { x } => {
                    let dx = ops::mean_pool_backward(self.nodes[x].value.shape(), &g);
                    accumulate(&mut grads[x], dx);
                }
                Op::ChannelAffine { x, scale } => {
                    let dx = ops::channel_affine_backward(&g, scale);
                    accumulate(&mut grads[*x], dx);
                }
            }
        }
        Ok(out)
    }
}

impl<'a> Exec<'a> for Graph<'a> {
    type Value = Var;

    fn conv(&mut self, x: &Var, store: &'a ParamStore, layer: &Conv) -> Result<Var> {
        let w = store.get(layer.weight);
        let b = layer.bias.map(|id| store.get(id));
        let xv = &self.nodes[x.0].value;
        let value = if layer.transposed {
            ops::conv_transpose2d(xv, w, b, layer.stride, layer.pad)?
        } else {
            ops::conv2d(xv, w, b, layer.stride, layer.pad)?
        };
        let w_slot = self.slot(store, layer.weight);
        let b_slot = layer.bias.and_then(|id| self.slot(store, id));
        let needs = self.needs(x.0) || w_slot.is_some() || b_slot.is_some();
        let op = Op::Conv {
            x: x.0,
            w,
            has_bias: b.is_some(),
            w_slot,
            b_slot,
            stride: layer.stride,
            pad: layer.pad,
            transposed: layer.transposed,
        };
        Ok(self.push(value, op, needs))
    }

    fn leaky_relu(&mut self, x: &Var, slope: f32) -> Var {
        let value = ops::leaky_relu(&self.nodes[x.0].value, slope);
        let needs = self.needs(x.0);
        self.push(value, Op::LeakyRelu { x: x.0, slope }, needs)
    }

    fn tanh_unit(&mut self, x: &Var) -> Var {
        let value = ops::tanh_unit(&self.nodes[x.0].value);
        let needs = self.needs(x.0);
        self.push(value, Op::TanhUnit { x: x.0 }, needs)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = ops::add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, needs))
    }

    fn scale(&mut self, x: &Var, s: f32) -> Var {
        let value = ops::map(&self.nodes[x.0].value, |v| v * s);
        let needs = self.needs(x.0);
        self.push(value, Op::Scale { x: x.0, s }, needs)
    }

    fn concat(&mut self, xs: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = ops::concat_channels(&tensors)?;
        let channels = tensors.iter().map(|t| t.shape()[1]).collect();
        let needs = xs.iter().any(|v| self.needs(v.0));
        let op = Op::Concat { xs: xs.iter().map(|v| v.0).collect(), channels };
        Ok(self.push(value, op, needs))
    }

    fn concat_batch(&mut self, xs: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = Tensor::stack_batch(&tensors)?;
        let sizes = tensors.iter().map(|t| t.shape()[0]).collect();
        let needs = xs.iter().any(|v| self.needs(v.0));
        let op = Op::ConcatBatch { xs: xs.iter().map(|v| v.0).collect(), sizes };
        Ok(self.push(value, op, needs))
    }

    fn slice_batch(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_batch(&self.nodes[x.0].value, start, len)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::SliceBatch { x: x.0, start }, needs))
    }

    fn max_pool2(&mut self, x: &Var) -> Result<Var> {
        let (value, arg) = ops::max_pool2(&self.nodes[x.0].value)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::MaxPool2 { x: x.0, arg }, needs))
    }

    fn mean_pool(&mut self, x: &Var) -> Result<Var> {
        let value = ops::mean_pool(&self.nodes[x.0].value)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::MeanPool { x: x.0 }, needs))
    }

    fn channel_affine(&mut self, x: &Var, scale: &[f32], shift: &[f32]) -> Result<Var> {
        let value = ops::channel_affine(&self.nodes[x.0].value, scale, shift)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::ChannelAffine { x: x.0, scale: scale.to_vec() }, needs))
    }
}
