//! Short-long-short exposure photosequencing: data synthesis, the
//! decomposition network, training, recursive sequencing and evaluation.

pub mod cache;
pub mod config;
pub mod container;
pub mod dataset;
pub mod evaluation;
mod error;
pub mod image;
pub mod io;
pub mod net;
pub mod noise;
pub mod sequencer;
pub mod synthetic;
pub mod training;

pub use config::ToolkitConfig;
pub use dataset::{BuilderConfig, NoisyShorts, SampleBuilder, TrainingSample};
pub use error::{Error, Result};
pub use net::{Decomposer, NetworkConfig};
pub use image::{average_frames, make_triplet, DecompositionTriple, ExposureTriplet, FrameClip, Image};
pub use noise::{add_noise, estimate_noise_params, NoiseParams};
