//! Fixed convolutional feature extractor for the perceptual cost.
//!
//! The layout follows the VGG19 `features` stack with torchvision parameter
//! names (`features.{i}.weight`, `features.{i}.bias`). Features are taken
//! after the ReLU of the configured convolution, `conv5_4` by default.

use std::path::Path;

use photoseq_tensor::{Conv, ConvShape, Exec, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{container, Error, Result};

/// VGG19 convolution widths, `0` marking a 2×2 max pool.
const VGG19: [usize; 21] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0];

/// Per-channel statistics the pretrained classifier was trained with.
const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug)]
enum Stage {
    Conv(Conv),
    Pool,
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    store: ParamStore,
    stages: Vec<Stage>,
    layer: String,
}

/// `convB_K` names with their torchvision `features` index.
fn vgg19_convs() -> Vec<(String, usize, usize)> {
    let (mut block, mut k, mut idx) = (1, 0, 0);
    let mut out = Vec::new();
    for &w in &VGG19 {
        if w == 0 {
            block += 1;
            k = 0;
            idx += 1;
        } else {
            k += 1;
            out.push((format!("conv{block}_{k}"), idx, w));
            idx += 2;
        }
    }
    out
}

/// Parse `convB_K` into the number of convolutions up to and including it.
fn depth_of(layer: &str) -> Result<usize> {
    vgg19_convs()
        .iter()
        .position(|(name, _, _)| name == layer)
        .map(|p| p + 1)
        .ok_or_else(|| Error::Config(format!("unknown feature layer {layer:?} (expected convB_K, e.g. conv5_4)")))
}

impl FeatureExtractor {
    /// Check that `layer` names a VGG19 convolution.
    pub fn check_layer(layer: &str) -> Result<()> {
        depth_of(layer).map(|_| ())
    }

    /// Load pretrained VGG19 weights, truncated after `layer`.
    pub fn load_vgg19(path: &Path, layer: &str) -> Result<Self> {
        let (_, tensors) = container::read(path)?;
        let mut store = ParamStore::new();
        for (name, t) in tensors {
            store.insert(name, t).map_err(|e| Error::Weights(e.to_string()))?;
        }
        Self::bind(store, layer, 1)
    }

    /// Randomly initialised extractor with the VGG19 layout and every width
    /// divided by `width_divisor`; for tests and pipelines without
    /// pretrained weights.
    pub fn random_vgg19(layer: &str, width_divisor: usize, seed: u64) -> Result<Self> {
        let depth = depth_of(layer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut c_in = 3;
        for (_, idx, w) in vgg19_convs().into_iter().take(depth) {
            let c_out = (w / width_divisor.max(1)).max(1);
            Conv::new(&mut store, &mut rng, &format!("features.{idx}"), shape(c_in, c_out), false)?;
            c_in = c_out;
        }
        Self::bind(store, layer, width_divisor)
    }

    fn bind(store: ParamStore, layer: &str, width_divisor: usize) -> Result<Self> {
        let depth = depth_of(layer)?;
        let mut stages = Vec::new();
        let mut c_in = 3;
        let mut convs = 0;
        for &w in &VGG19 {
            if convs == depth {
                break;
            }
            if w == 0 {
                stages.push(Stage::Pool);
                continue;
            }
            let (_, idx, _) = vgg19_convs()[convs];
            let c_out = (w / width_divisor.max(1)).max(1);
            let conv = Conv::bind(&store, &format!("features.{idx}"), shape(c_in, c_out), false)
                .map_err(|e| Error::Weights(format!("feature extractor: {e}")))?;
            stages.push(Stage::Conv(conv));
            c_in = c_out;
            convs += 1;
        }
        Ok(Self { store, stages, layer: layer.to_string() })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    /// Save in the same layout [`FeatureExtractor::load_vgg19`] reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, &Tensor)> = self.store.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
        container::write(path, &tensors, &Default::default())
    }

    /// Feature map of `[batch, 3, H, W]` images in `[0, 1]`.
    pub fn features<'a, E: Exec<'a>>(&'a self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let scale = STD.map(|s| 1.0 / s);
        let shift = [0, 1, 2].map(|c| -MEAN[c] / STD[c]);
        let mut x = ex.channel_affine(x, &scale, &shift)?;
        for stage in &self.stages {
            x = match stage {
                Stage::Conv(c) => {
                    let y = ex.conv(&x, &self.store, c)?;
                    ex.relu(&y)
                }
                Stage::Pool => ex.max_pool2(&x)?,
            };
        }
        Ok(x)
    }
}

fn shape(c_in: usize, c_out: usize) -> ConvShape {
    ConvShape { c_in, c_out, kernel: 3, stride: 1, pad: 1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torchvision_indices() {
        let convs = vgg19_convs();
        assert_eq!(convs.len(), 16);
        assert_eq!(convs[0], ("conv1_1".into(), 0, 64));
        assert_eq!(convs[2], ("conv2_1".into(), 5, 128));
        assert_eq!(convs[15], ("conv5_4".into(), 34, 512));
        assert!(depth_of("conv6_1").is_err());
    }
}
