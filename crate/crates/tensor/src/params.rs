use std::collections::HashMap;

use rand::{Rng, RngExt};

use crate::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Replace a tensor's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != tensor.shape() {
            return Err(TensorError::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                slot.shape(),
                tensor.shape()
            )));
        }
        *slot = tensor;
        Ok(())
    }
}

/// A convolution layer's parameters and geometry. Regular convolutions store
/// weights as `[c_out, c_in, k, k]`; transposed ones as `[c_in, c_out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Register `name.weight` and `name.bias`, drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in = c_in * k * k`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        shape: ConvShape,
        transposed: bool,
    ) -> Result<Self> {
        let ConvShape { c_in, c_out, kernel, stride, pad } = shape;
        let fan_in = (c_in * kernel * kernel) as f32;
        let bound = 1.0 / fan_in.sqrt();
        let wshape = if transposed {
            [c_in, c_out, kernel, kernel]
        } else {
            [c_out, c_in, kernel, kernel]
        };
        let weight = uniform(&wshape, bound, rng);
        let bias = uniform(&[c_out], bound, rng);
        Ok(Self {
            weight: store.insert(format!("{name}.weight"), weight)?,
            bias: Some(store.insert(format!("{name}.bias"), bias)?),
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            transposed,
        })
    }

    /// Bind to existing entries `name.weight` / `name.bias` of `store`.
    pub fn bind(store: &ParamStore, name: &str, shape: ConvShape, transposed: bool) -> Result<Self> {
        let weight = store
            .id(&format!("{name}.weight"))
            .ok_or_else(|| TensorError::MissingParam(format!("{name}.weight")))?;
        let bias = store.id(&format!("{name}.bias"));
        let ConvShape { c_in, c_out, kernel, stride, pad } = shape;
        let expected = if transposed {
            [c_in, c_out, kernel, kernel]
        } else {
            [c_out, c_in, kernel, kernel]
        };
        if store.get(weight).shape() != expected {
            return Err(TensorError::Shape(format!(
                "{name}.weight has shape {:?}, expected {expected:?}",
                store.get(weight).shape()
            )));
        }
        if let Some(b) = bias {
            if store.get(b).shape() != [c_out] {
                return Err(TensorError::Shape(format!("{name}.bias has shape {:?}", store.get(b).shape())));
            }
        }
        Ok(Self { weight, bias, c_in, c_out, kernel, stride, pad, transposed })
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}
