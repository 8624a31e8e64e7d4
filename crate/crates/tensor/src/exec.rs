use crate::{ops, Conv, ParamStore, Result, Tensor};

/// Executes network operations. [`Eager`] computes values and forgets them;
/// [`crate::Graph`] records a tape for reverse-mode differentiation. Models are
/// written once against this trait.
pub trait Exec<'a> {
    type Value: Clone;

    fn conv(&mut self, x: &Self::Value, store: &'a ParamStore, layer: &Conv) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: f32) -> Self::Value;
    fn tanh_unit(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, s: f32) -> Self::Value;
    fn concat(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn concat_batch(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn slice_batch(&mut self, x: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn max_pool2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn mean_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn channel_affine(&mut self, x: &Self::Value, scale: &[f32], shift: &[f32]) -> Result<Self::Value>;

    fn relu(&mut self, x: &Self::Value) -> Self::Value {
        self.leaky_relu(x, 0.0)
    }
}

/// Forward-only executor; intermediate tensors are dropped as soon as the
/// caller releases them.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<'a> Exec<'a> for Eager {
    type Value = Tensor;

    fn conv(&mut self, x: &Tensor, store: &'a ParamStore, layer: &Conv) -> Result<Tensor> {
        let w = store.get(layer.weight);
        let b = layer.bias.map(|id| store.get(id));
        if layer.transposed {
            ops::conv_transpose2d(x, w, b, layer.stride, layer.pad)
        } else {
            ops::conv2d(x, w, b, layer.stride, layer.pad)
        }
    }

    fn leaky_relu(&mut self, x: &Tensor, slope: f32) -> Tensor {
        ops::leaky_relu(x, slope)
    }

    fn tanh_unit(&mut self, x: &Tensor) -> Tensor {
        ops::tanh_unit(x)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::add(a, b)
    }

    fn scale(&mut self, x: &Tensor, s: f32) -> Tensor {
        ops::map(x, |v| v * s)
    }

    fn concat(&mut self, xs: &[&Tensor]) -> Result<Tensor> {
        ops::concat_channels(xs)
    }

    fn concat_batch(&mut self, xs: &[&Tensor]) -> Result<Tensor> {
        Tensor::stack_batch(xs)
    }

    fn slice_batch(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        ops::slice_batch(x, start, len)
    }

    fn max_pool2(&mut self, x: &Tensor) -> Result<Tensor> {
        ops::max_pool2(x).map(|(t, _)| t)
    }

    fn mean_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        ops::mean_pool(x)
    }

    fn channel_affine(&mut self, x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
        ops::channel_affine(x, scale, shift)
    }
}
