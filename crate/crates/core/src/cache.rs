//! On-disk sample cache: one directory of 16-bit PNGs per sample plus a JSON
//! manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSample;
use crate::image::{DecompositionTriple, ExposureTriplet};
use crate::{io, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "photoseq-samples";
const VERSION: u32 = 1;

/// Worst-case sum-identity error introduced by 16-bit storage: each stored
/// image is off by at most half a code value, and the recomposition is a
/// convex combination, so the error is bounded by twice that.
pub const QUANTIZATION_TOLERANCE: f64 = 2.0 * 0.5 / 65535.0;
pub const SUM_IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub dir: String,
    pub source_id: String,
    pub crop_origin: (usize, usize),
    pub n1: usize,
    pub n2: usize,
    pub short_is_noisy: [bool; 2],
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Effective configuration that produced the samples.
    pub config: serde_json::Value,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn new(config: serde_json::Value) -> Self {
        Self { format: FORMAT.into(), version: VERSION, config, samples: Vec::new() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::format("sample manifest", e))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::format("sample manifest", format!("unsupported format {} v{}", m.format, m.version)));
        }
        for s in &m.samples {
            if s.n1 == 0 || s.n2 == 0 {
                return Err(Error::format("sample manifest", format!("{}: half lengths must be positive", s.dir)));
            }
            if s.dir.is_empty() || s.dir.contains(['/', '\\']) || s.dir.starts_with('.') {
                return Err(Error::format("sample manifest", format!("sample directory {:?} is not a plain name", s.dir)));
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest always serializes") + "\n"
    }
}

const NAMES: [&str; 6] = ["short_pre", "long", "short_post", "first_half", "mid_sharp", "second_half"];

/// Write `samples` (with their generating seeds) under `dir`.
pub fn write_cache(dir: &Path, samples: &[(u64, TrainingSample)], config: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new(config);
    for (k, (seed, s)) in samples.iter().enumerate() {
        let name = format!("sample_{k:05}");
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let t = &s.triplet;
        let d = &s.target;
        for (file, img) in NAMES.iter().zip([&t.short_pre, &t.long, &t.short_post, &d.first_half, &d.mid_sharp, &d.second_half]) {
            io::write_image(&sub.join(format!("{file}.png")), img, true)?;
        }
        manifest.samples.push(SampleEntry {
            dir: name,
            source_id: s.source_id.clone(),
            crop_origin: s.crop_origin,
            n1: d.n1,
            n2: d.n2,
            short_is_noisy: t.short_is_noisy,
            seed: *seed,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&text)
}

pub fn read_cache(dir: &Path) -> Result<(Manifest, Vec<TrainingSample>)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let sub = dir.join(&e.dir);
        let mut imgs = NAMES
            .iter()
            .map(|n| io::read_image(&sub.join(format!("{n}.png"))))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || imgs.next().expect("six images");
        let triplet = ExposureTriplet::new(next(), next(), next(), Some(e.n1 + e.n2 + 1), e.short_is_noisy)?;
        let target = DecompositionTriple::new(next(), next(), next(), e.n1, e.n2)?;
        samples.push(TrainingSample { triplet, target, crop_origin: e.crop_origin, source_id: e.source_id.clone() });
    }
    Ok((manifest, samples))
}

/// Check every cached sample's sum identity; returns the worst residual.
pub fn verify_cache(dir: &Path) -> Result<f64> {
    let (_, samples) = read_cache(dir)?;
    let mut worst = 0.0f64;
    for (k, s) in samples.iter().enumerate() {
        let r = s.sum_identity_residual();
        if r > SUM_IDENTITY_TOLERANCE + QUANTIZATION_TOLERANCE {
            return Err(Error::Numerical(format!("sample {k}: sum identity residual {r:.3e}")));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}
