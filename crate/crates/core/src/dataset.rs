//! Training-sample synthesis: crop and window selection, motion-dependent blur
//! length, short-exposure noise and augmentation.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{make_triplet, DecompositionTriple, ExposureTriplet, FrameClip, Image};
use crate::noise::{add_noise, NoiseParams};
use crate::{Error, Result};

/// Which short exposures of a sample receive sensor noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisyShorts {
    #[default]
    Both,
    /// Exactly one, side chosen at random per sample.
    One,
    None,
}

impl NoisyShorts {
    pub fn count(self) -> usize {
        match self {
            NoisyShorts::Both => 2,
            NoisyShorts::One => 1,
            NoisyShorts::None => 0,
        }
    }

    pub fn from_count(count: usize) -> Result<Self> {
        match count {
            2 => Ok(NoisyShorts::Both),
            1 => Ok(NoisyShorts::One),
            0 => Ok(NoisyShorts::None),
            n => Err(Error::Argument(format!("noisy-input count {n} is not 0, 1 or 2"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub crop_size: usize,
    pub variance_reject_threshold: f64,
    /// Ascending `(variance cutoff, N)` steps: a window maps to the N of the
    /// largest cutoff not exceeding its variance.
    pub variance_to_n: Vec<(f64, usize)>,
    pub h_flip: bool,
    pub rot90: bool,
    pub temporal_flip: bool,
    pub noisy_shorts: NoisyShorts,
    /// Rejected draws tolerated per generated sample before giving up.
    pub max_attempts: usize,
}

pub const DEFAULT_N_STEPS: [usize; 5] = [11, 17, 23, 31, 39];

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            n_min: 11,
            n_max: 39,
            crop_size: 128,
            variance_reject_threshold: 1e-4,
            variance_to_n: vec![(1e-4, 11), (5e-4, 17), (1.5e-3, 23), (3e-3, 31), (6e-3, 39)],
            h_flip: true,
            rot90: true,
            temporal_flip: true,
            noisy_shorts: NoisyShorts::Both,
            max_attempts: 64,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_min < 3 || self.n_min % 2 == 0 || self.n_max % 2 == 0 || self.n_min > self.n_max {
            return bad(format!("n_min {} / n_max {} must be odd with 3 <= n_min <= n_max", self.n_min, self.n_max));
        }
        if self.crop_size == 0 || self.crop_size % 16 != 0 {
            return bad(format!("crop_size {} must be a positive multiple of 16", self.crop_size));
        }
        if !(self.variance_reject_threshold >= 0.0) {
            return bad("variance_reject_threshold must be non-negative".into());
        }
        if self.variance_to_n.is_empty() {
            return bad("variance_to_n needs at least one step".into());
        }
        for (i, &(cut, n)) in self.variance_to_n.iter().enumerate() {
            if !cut.is_finite() || n % 2 == 0 || n < self.n_min || n > self.n_max {
                return bad(format!("step ({cut}, {n}) needs a finite cutoff and odd N in [n_min, n_max]"));
            }
            if i > 0 {
                let (prev_cut, prev_n) = self.variance_to_n[i - 1];
                if cut <= prev_cut || n < prev_n {
                    return bad("variance_to_n must have increasing cutoffs and non-decreasing N".into());
                }
            }
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }

    /// Frames a sampling window spans: the longest blur plus both shorts.
    pub fn window_len(&self) -> usize {
        self.n_max + 2
    }

    /// Map a motion variance to a blur length; `None` rejects the window.
    pub fn map_variance(&self, variance: f64) -> Option<usize> {
        if !(variance >= self.variance_reject_threshold) {
            return None;
        }
        let steps = &self.variance_to_n;
        Some(steps.iter().rev().find(|(cut, _)| variance >= *cut).unwrap_or(&steps[0]).1)
    }
}

/// Mean over pixels of the per-pixel temporal variance of luma.
pub fn motion_variance(frames: &[Image]) -> Result<f64> {
    let first = frames.first().ok_or_else(|| Error::Argument("empty frame window".into()))?;
    let lumas: Vec<Vec<f32>> = frames.iter().map(Image::luma).collect();
    if frames.iter().any(|f| f.dims() != first.dims()) {
        return Err(Error::Argument("frame window mixes image sizes".into()));
    }
    let t = frames.len() as f64;
    let px = lumas[0].len();
    let mut total = 0.0;
    for p in 0..px {
        let mean = lumas.iter().map(|l| l[p] as f64).sum::<f64>() / t;
        total += lumas.iter().map(|l| (l[p] as f64 - mean).powi(2)).sum::<f64>() / t;
    }
    Ok(total / px as f64)
}

/// Blur length for a window of frames, or `None` for a static window.
pub fn select_blur_length(frames: &[Image], cfg: &BuilderConfig) -> Result<Option<usize>> {
    if frames.len() < cfg.window_len() {
        return Err(Error::Range(format!(
            "window of {} frames is shorter than n_max + 2 = {}",
            frames.len(),
            cfg.window_len()
        )));
    }
    Ok(cfg.map_variance(motion_variance(frames)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Network input; shorts carry noise as flagged, `long` is noise-free.
    pub triplet: ExposureTriplet,
    /// Noise-free target.
    pub target: DecompositionTriple,
    pub crop_origin: (usize, usize),
    pub source_id: String,
}

impl TrainingSample {
    pub fn n_frames(&self) -> usize {
        self.target.n_total()
    }

    pub fn sum_identity_residual(&self) -> f64 {
        self.target.sum_identity_residual(&self.triplet.long).expect("sample images share dimensions")
    }
}

fn noisy_sides(mode: NoisyShorts, rng: &mut ChaCha8Rng) -> [bool; 2] {
    match mode {
        NoisyShorts::Both => [true, true],
        NoisyShorts::None => [false, false],
        NoisyShorts::One => {
            let pre = rng.random_bool(0.5);
            [pre, !pre]
        }
    }
}

/// Build one sample from `clip`; `Ok(None)` when the drawn window is static.
pub fn build_sample(
    clip: &FrameClip,
    source_id: &str,
    seed: u64,
    cfg: &BuilderConfig,
    noise: &NoiseParams,
) -> Result<Option<TrainingSample>> {
    cfg.validate()?;
    noise.validate()?;
    let win = cfg.window_len();
    let (h, w) = clip.dims();
    if clip.len() < win {
        return Err(Error::Range(format!("{source_id}: {} frames, need at least {win}", clip.len())));
    }
    if h < cfg.crop_size || w < cfg.crop_size {
        return Err(Error::Range(format!("{source_id}: {h}x{w} frames are smaller than the {} crop", cfg.crop_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=clip.len() - win);
    let top = rng.random_range(0..=h - cfg.crop_size);
    let left = rng.random_range(0..=w - cfg.crop_size);
    let window = clip.crop_window(start..start + win, top, left, cfg.crop_size, cfg.crop_size)?;
    let Some(n) = select_blur_length(window.frames(), cfg)? else {
        return Ok(None);
    };
    // Centre the n+2 frames of the triplet in the window.
    let offset = (win - (n + 2)) / 2;
    let (mut triplet, target) = make_triplet(&window, offset + 1, n)?;
    let sides = noisy_sides(cfg.noisy_shorts, &mut rng);
    let seeds: [u64; 2] = [rng.random(), rng.random()];
    if sides[0] {
        triplet.short_pre = add_noise(&triplet.short_pre, noise, seeds[0])?;
    }
    if sides[1] {
        triplet.short_post = add_noise(&triplet.short_post, noise, seeds[1])?;
    }
    triplet.short_is_noisy = sides;
    Ok(Some(TrainingSample { triplet, target, crop_origin: (top, left), source_id: source_id.to_string() }))
}

fn map_images(sample: &TrainingSample, f: impl Fn(&Image) -> Image) -> TrainingSample {
    let t = &sample.triplet;
    let d = &sample.target;
    TrainingSample {
        triplet: ExposureTriplet {
            short_pre: f(&t.short_pre),
            long: f(&t.long),
            short_post: f(&t.short_post),
            ..t.clone()
        },
        target: DecompositionTriple {
            first_half: f(&d.first_half),
            mid_sharp: f(&d.mid_sharp),
            second_half: f(&d.second_half),
            ..d.clone()
        },
        ..sample.clone()
    }
}

pub fn flip_horizontal(sample: &TrainingSample) -> TrainingSample {
    map_images(sample, Image::flip_horizontal)
}

pub fn rotate90(sample: &TrainingSample, clockwise: bool) -> TrainingSample {
    map_images(sample, |i| i.rotate90(clockwise))
}

/// Swap the shorts and the halves; `long` and `mid_sharp` are unchanged.
pub fn temporal_flip(sample: &TrainingSample) -> TrainingSample {
    TrainingSample { triplet: sample.triplet.reversed(), target: sample.target.reversed(), ..sample.clone() }
}

/// Apply each enabled augmentation independently with probability 0.5.
pub fn augment(sample: &TrainingSample, seed: u64, cfg: &BuilderConfig) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    // Draws happen whether or not an augmentation is enabled so toggling one
    // flag does not reshuffle the others.
    let (hf, rot, rot_cw, tf) = (rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5));
    if cfg.h_flip && hf {
        out = flip_horizontal(&out);
    }
    if cfg.rot90 && rot {
        out = rotate90(&out, rot_cw);
    }
    if cfg.temporal_flip && tf {
        out = temporal_flip(&out);
    }
    out
}

/// Derive quantile cutoffs for [`DEFAULT_N_STEPS`]-style buckets from the
/// motion variance of random crops of `clips`. Static draws are ignored.
pub fn calibrate_cutoffs(
    clips: &[(String, FrameClip)],
    cfg: &BuilderConfig,
    steps: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<(f64, usize)>> {
    if clips.is_empty() || steps.is_empty() {
        return Err(Error::Argument("cutoff calibration needs clips and steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let win = cfg.window_len();
    let mut vars = Vec::new();
    for _ in 0..draws {
        let (id, clip) = &clips[rng.random_range(0..clips.len())];
        let (h, w) = clip.dims();
        if clip.len() < win || h < cfg.crop_size || w < cfg.crop_size {
            return Err(Error::Range(format!("{id}: too small for window {win} / crop {}", cfg.crop_size)));
        }
        let start = rng.random_range(0..=clip.len() - win);
        let top = rng.random_range(0..=h - cfg.crop_size);
        let left = rng.random_range(0..=w - cfg.crop_size);
        let window = clip.crop_window(start..start + win, top, left, cfg.crop_size, cfg.crop_size)?;
        let v = motion_variance(window.frames())?;
        if v >= cfg.variance_reject_threshold {
            vars.push(v);
        }
    }
    if vars.len() < steps.len() {
        return Err(Error::IllPosed(format!("only {} non-static draws for {} buckets", vars.len(), steps.len())));
    }
    vars.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for (k, &n) in steps.iter().enumerate() {
        let cut = if k == 0 { cfg.variance_reject_threshold } else { vars[k * vars.len() / steps.len()] };
        match out.last_mut() {
            Some(last) if cut <= last.0 => last.1 = n,
            _ => out.push((cut, n)),
        }
    }
    Ok(out)
}

/// Stateless sample source over one or more corpora. Corpora are mixed
/// uniformly at random, then a clip is drawn uniformly within the corpus.
#[derive(Clone, Debug)]
pub struct SampleBuilder {
    corpora: Vec<Vec<(String, FrameClip)>>,
    pub config: BuilderConfig,
    pub noise: NoiseParams,
}

impl SampleBuilder {
    pub fn new(corpora: Vec<Vec<(String, FrameClip)>>, config: BuilderConfig, noise: NoiseParams) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        if corpora.is_empty() || corpora.iter().any(Vec::is_empty) {
            return Err(Error::Argument("every corpus must contain at least one clip".into()));
        }
        Ok(Self { corpora, config, noise })
    }

    pub fn with_noisy_shorts(&self, mode: NoisyShorts) -> Self {
        let mut b = self.clone();
        b.config.noisy_shorts = mode;
        b
    }

    pub fn corpora(&self) -> &[Vec<(String, FrameClip)>] {
        &self.corpora
    }

    /// Sample for `seed`, retrying rejected windows with derived seeds and
    /// applying augmentation.
    pub fn generate(&self, seed: u64) -> Result<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.config.max_attempts {
            let corpus = &self.corpora[rng.random_range(0..self.corpora.len())];
            let (id, clip) = &corpus[rng.random_range(0..corpus.len())];
            if let Some(s) = build_sample(clip, id, rng.random(), &self.config, &self.noise)? {
                return Ok(augment(&s, rng.random(), &self.config));
            }
        }
        Err(Error::IllPosed(format!(
            "{} consecutive draws were static (below variance threshold {})",
            self.config.max_attempts, self.config.variance_reject_threshold
        )))
    }
}
