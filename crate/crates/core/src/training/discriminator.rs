//! Two-class discriminator on sharp images: five stride-2 3×3 convolutions
//! (widths `base`..`16·base`), global average pooling and a 1×1 logit, trained
//! with the non-saturating GAN losses.

use photoseq_tensor::{Adam, Conv, ConvShape, Eager, Exec, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_BASE_CHANNELS: usize = 32;
const SLOPE: f32 = 0.2;

#[derive(Clone, Debug)]
pub struct Discriminator {
    base: usize,
    store: ParamStore,
    convs: Vec<Conv>,
    logit: Conv,
    adam: Adam,
}

fn layout(base: usize) -> Vec<(String, ConvShape)> {
    let mut c_in = 3;
    let mut out = Vec::new();
    for k in 0..5 {
        let c_out = base << k;
        out.push((format!("conv{}", k + 1), ConvShape { c_in, c_out, kernel: 3, stride: 2, pad: 1 }));
        c_in = c_out;
    }
    out.push(("logit".into(), ConvShape { c_in, c_out: 1, kernel: 1, stride: 1, pad: 0 }));
    out
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Discriminator {
    pub fn new(base: usize, seed: u64) -> Result<Self> {
        if base == 0 {
            return Err(Error::Config("discriminator width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut convs: Vec<Conv> = layout(base)
            .into_iter()
            .map(|(name, s)| Conv::new(&mut store, &mut rng, &name, s, false))
            .collect::<photoseq_tensor::Result<_>>()?;
        let logit = convs.pop().expect("logit layer");
        let adam = Adam::new(&store);
        Ok(Self { base, store, convs, logit, adam })
    }

    /// Rebuild from saved parameters and optimizer state.
    pub fn from_parts(base: usize, store: ParamStore, adam: Adam) -> Result<Self> {
        let mut convs: Vec<Conv> = layout(base)
            .into_iter()
            .map(|(name, s)| Conv::bind(&store, &name, s, false))
            .collect::<photoseq_tensor::Result<_>>()
            .map_err(|e| Error::Weights(format!("discriminator: {e}")))?;
        if store.len() != 2 * convs.len() {
            return Err(Error::Weights("discriminator: unexpected parameters".into()));
        }
        let logit = convs.pop().expect("logit layer");
        Ok(Self { base, store, convs, logit, adam })
    }

    pub fn base_channels(&self) -> usize {
        self.base
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    /// Logits `[batch, 1, 1, 1]`.
    pub fn logits<'a, E: Exec<'a>>(&'a self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let mut x = x.clone();
        for c in &self.convs {
            let y = ex.conv(&x, &self.store, c)?;
            x = ex.leaky_relu(&y, SLOPE);
        }
        let pooled = ex.mean_pool(&x)?;
        Ok(ex.conv(&pooled, &self.store, &self.logit)?)
    }

    /// Non-saturating generator cost `mean softplus(-D(fake))` and its
    /// gradient with respect to `fake`.
    pub fn generator_cost(&self, fake: &Tensor) -> Result<(f64, Tensor)> {
        let mut g = Graph::new();
        let x = g.leaf(fake.clone());
        let l = self.logits(&mut g, &x)?;
        let logits = g.value(l).data().to_vec();
        let n = logits.len() as f64;
        let cost = logits.iter().map(|&v| softplus(-(v as f64))).sum::<f64>() / n;
        let seed = logits.iter().map(|&v| (-sigmoid(-(v as f64)) / n) as f32).collect();
        let seed = Tensor::from_vec(g.value(l).shape(), seed)?;
        let grads = g.backward(vec![(l, seed)])?;
        let dx = grads.leaf(x).cloned().unwrap_or_else(|| Tensor::zeros(fake.shape()));
        Ok((cost, dx))
    }

    /// Discriminator cost `mean softplus(-D(real)) + mean softplus(D(fake))`
    /// without updating.
    pub fn cost(&self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let both = Tensor::stack_batch(&[real, fake])?;
        let l = self.logits(&mut Eager, &both)?;
        let b = real.shape()[0];
        Ok(split_cost(l.data(), b).0)
    }

    /// One Adam step on the real-vs-fake classification; returns the cost
    /// before the step.
    pub fn update(&mut self, real: &Tensor, fake: &Tensor, lr: f32) -> Result<f64> {
        let b = real.shape()[0];
        if real.shape() != fake.shape() {
            return Err(Error::Argument(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
        }
        let both = Tensor::stack_batch(&[real, fake])?;
        let (cost, grads) = {
            let mut g = Graph::with_trainable(&self.store);
            let x = g.input(both);
            let l = self.logits(&mut g, &x)?;
            let (cost, seed) = split_cost(g.value(l).data(), b);
            let seed = Tensor::from_vec(g.value(l).shape(), seed)?;
            (cost, g.backward(vec![(l, seed)])?)
        };
        self.adam.step(&mut self.store, &grads, lr)?;
        Ok(cost)
    }
}

/// Cost and logit gradient for a batch of `b` real then `b` fake logits.
fn split_cost(logits: &[f32], b: usize) -> (f64, Vec<f32>) {
    let n = b as f64;
    let mut cost = 0.0;
    let mut seed = Vec::with_capacity(logits.len());
    for (i, &v) in logits.iter().enumerate() {
        let v = v as f64;
        if i < b {
            cost += softplus(-v) / n;
            seed.push((-sigmoid(-v) / n) as f32);
        } else {
            cost += softplus(v) / n;
            seed.push((sigmoid(v) / n) as f32);
        }
    }
    (cost, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }
}
