//! Toolkit configuration file: one TOML document with a table per stage.
//! Omitted keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::BuilderConfig;
use crate::evaluation::{EvalConfig, BLUR_SWEEP_N};
use crate::net::NetworkConfig;
use crate::noise::NoiseParams;
use crate::sequencer::MAX_LEVELS;
use crate::training::discriminator::DEFAULT_BASE_CHANNELS;
use crate::training::{LossWeights, TrainSchedule};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Frame rate assumed for PNG directories.
    pub nominal_fps: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { nominal_fps: 240.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub log_every: u64,
    /// `0` disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub discriminator_channels: usize,
    pub perceptual_layer: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            log_every: 100,
            checkpoint_every: 5_000,
            discriminator_channels: DEFAULT_BASE_CHANNELS,
            perceptual_layer: "conv5_4".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequencerConfig {
    pub levels: u32,
    /// Write 16-bit PNG frames.
    pub sixteen_bit: bool,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        Self { levels: 2, sixteen_bit: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Frames averaged into each test long exposure.
    pub n: usize,
    pub blur_sweep: Vec<usize>,
    pub examples_per_clip: usize,
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { n: 11, blur_sweep: BLUR_SWEEP_N.to_vec(), examples_per_clip: e.examples_per_clip, crop_size: e.crop_size, seed: e.seed }
    }
}

impl EvaluationConfig {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { examples_per_clip: self.examples_per_clip, crop_size: self.crop_size, seed: self.seed }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub corpus: CorpusConfig,
    pub builder: BuilderConfig,
    /// Short-exposure noise; noise-free until calibrated.
    pub noise: NoiseParams,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub schedule: TrainSchedule,
    pub training: TrainingConfig,
    pub sequencer: SequencerConfig,
    pub evaluation: EvaluationConfig,
}

fn odd_blur(n: usize, what: &str) -> Result<()> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::Config(format!("{what} = {n} must be odd and at least 3")));
    }
    Ok(())
}

impl ToolkitConfig {
    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if !(self.corpus.nominal_fps.is_finite() && self.corpus.nominal_fps > 0.0) {
            return Err(Error::Config(format!("corpus.nominal_fps = {} must be positive", self.corpus.nominal_fps)));
        }
        self.builder.validate().map_err(cfg)?;
        self.noise.validate().map_err(cfg)?;
        self.network.validate().map_err(cfg)?;
        self.loss.validate().map_err(cfg)?;
        self.schedule.validate().map_err(cfg)?;
        let t = &self.training;
        if t.discriminator_channels == 0 {
            return Err(Error::Config("training.discriminator_channels must be positive".into()));
        }
        crate::training::FeatureExtractor::check_layer(&t.perceptual_layer).map_err(cfg)?;
        if self.sequencer.levels == 0 || self.sequencer.levels > MAX_LEVELS {
            return Err(Error::Config(format!("sequencer.levels must be in 1..={MAX_LEVELS}")));
        }
        let e = &self.evaluation;
        odd_blur(e.n, "evaluation.n")?;
        for &n in &e.blur_sweep {
            odd_blur(n, "evaluation.blur_sweep entry")?;
        }
        if e.examples_per_clip == 0 {
            return Err(Error::Config("evaluation.examples_per_clip must be positive".into()));
        }
        if e.crop_size % 16 != 0 {
            return Err(Error::Config(format!("evaluation.crop_size {} must be a multiple of 16 (0 = automatic)", e.crop_size)));
        }
        Ok(())
    }
}
