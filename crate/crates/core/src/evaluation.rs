//! PSNR metrics and the timepoint, blur-length and relative-PSNR protocols.
//!
//! Evaluation examples are taken from test clips: `N` consecutive frames are
//! averaged into the long exposure, the frames just before and after become
//! the shorts (noise added with per-example seeds), and the frames in between
//! are the ground truth. A timepoint `t` compares against frame `t·(N+1)`
//! (1-based within the blurred window), so `t = 0.5` is the centre frame.

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{make_triplet, ExposureTriplet, FrameClip, Image};
use crate::net::SIZE_MULTIPLE;
use crate::noise::{add_noise, NoiseParams};
use crate::sequencer::{build_plan, sequence, ModelSet, PhotoSequence};
use crate::{Error, Result};

/// Reported for identical images (zero MSE).
pub const PSNR_CAP_DB: f64 = 99.0;
pub const BLUR_SWEEP_N: [usize; 4] = [9, 11, 15, 19];
pub const TIMEPOINTS: [f64; 3] = [0.25, 0.5, 0.75];

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("psnr of {:?} and {:?}", a.dims(), b.dims())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Frame-wise PSNR between two reconstructions of the same plan.
pub fn relative_psnr(a: &PhotoSequence, b: &PhotoSequence) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.timepoints != b.timepoints {
        return Err(Error::Argument(format!(
            "sequences differ in timepoints ({} vs {} frames)",
            a.len(),
            b.len()
        )));
    }
    a.frames.iter().zip(&b.frames).map(|(x, y)| psnr(x, y)).collect()
}

/// XT slice (row `r` of every frame stacked over time, `T×W`) and YT slice
/// (column `c` of every frame, `H×T`).
pub fn slice_xt_yt(frames: &[Image], r: usize, c: usize) -> Result<(Image, Image)> {
    let first = frames.first().ok_or_else(|| Error::Argument("no frames to slice".into()))?;
    let (h, w) = first.dims();
    if frames.iter().any(|f| f.dims() != (h, w)) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    if r >= h || c >= w {
        return Err(Error::Range(format!("slice at row {r}, column {c} outside {h}x{w}")));
    }
    let t = frames.len();
    let xt = Image::from_fn(t, w, |ti, x, ch| frames[ti].get(r, x, ch))?;
    let yt = Image::from_fn(h, t, |y, ti, ch| frames[ti].get(y, c, ch))?;
    Ok((xt, yt))
}

/// One test triplet with its ground-truth frames.
#[derive(Clone, Debug)]
pub struct EvalExample {
    pub source_id: String,
    pub triplet: ExposureTriplet,
    /// The `N` frames averaged into the long exposure.
    pub truth: Vec<Image>,
}

impl EvalExample {
    /// Ground-truth frame at timepoint `t`.
    pub fn truth_at(&self, t: f64) -> Result<&Image> {
        let n = self.truth.len();
        let pos = t * (n + 1) as f64;
        if (pos - pos.round()).abs() > 1e-9 || pos < 1.0 || pos > n as f64 {
            return Err(Error::Argument(format!("timepoint {t} does not fall on a frame of a {n}-frame exposure")));
        }
        Ok(&self.truth[pos.round() as usize - 1])
    }
}

/// Produces a sequence for an example; the network sequencer in practice, a
/// ground-truth oracle for harness self-tests.
pub trait SequencePredictor: Sync {
    fn predict(&self, example: &EvalExample, levels: u32) -> Result<PhotoSequence>;
}

impl SequencePredictor for ModelSet<'_> {
    fn predict(&self, example: &EvalExample, levels: u32) -> Result<PhotoSequence> {
        sequence(&example.triplet, *self, &build_plan(levels, None)?)
    }
}

/// Returns the ground-truth frame at every timepoint.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthOracle;

impl SequencePredictor for GroundTruthOracle {
    fn predict(&self, example: &EvalExample, levels: u32) -> Result<PhotoSequence> {
        let plan = build_plan(levels, None)?;
        let timepoints = plan.timepoints();
        let frames = timepoints.iter().map(|&t| example.truth_at(t).cloned()).collect::<Result<_>>()?;
        Ok(PhotoSequence { frames, timepoints, plan })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub examples_per_clip: usize,
    /// Square crop side; `0` takes the largest centred crop whose sides are
    /// multiples of 16.
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { examples_per_clip: 4, crop_size: 0, seed: 0 }
    }
}

fn crop_dims(cfg: &EvalConfig, (h, w): (usize, usize)) -> Result<(usize, usize)> {
    let dims = if cfg.crop_size > 0 {
        (cfg.crop_size, cfg.crop_size)
    } else {
        (h / SIZE_MULTIPLE * SIZE_MULTIPLE, w / SIZE_MULTIPLE * SIZE_MULTIPLE)
    };
    if dims.0 == 0 || dims.1 == 0 || dims.0 > h || dims.1 > w || dims.0 % SIZE_MULTIPLE != 0 || dims.1 % SIZE_MULTIPLE != 0 {
        return Err(Error::Range(format!("cannot take a {}x{} crop (multiple of {SIZE_MULTIPLE}) from {h}x{w} frames", dims.0, dims.1)));
    }
    Ok(dims)
}

/// Deterministic test triplets of `n` blurred frames from every clip.
pub fn build_examples(clips: &[(String, FrameClip)], n: usize, noise: &NoiseParams, cfg: &EvalConfig) -> Result<Vec<EvalExample>> {
    if clips.is_empty() {
        return Err(Error::Argument("empty test corpus".into()));
    }
    let mut out = Vec::new();
    for (k, (id, clip)) in clips.iter().enumerate() {
        if clip.len() < n + 2 {
            return Err(Error::Range(format!("clip {id} has {} frames; N = {n} needs {}", clip.len(), n + 2)));
        }
        let (ch, cw) = crop_dims(cfg, clip.dims())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for _ in 0..cfg.examples_per_clip {
            let start = rng.random_range(1..clip.len() - n);
            let (top, left) = ((clip.dims().0 - ch) / 2, (clip.dims().1 - cw) / 2);
            let window = clip.crop_window(start - 1..start + n + 1, top, left, ch, cw)?;
            let (mut triplet, _) = make_triplet(&window, 1, n)?;
            triplet.short_pre = add_noise(&triplet.short_pre, noise, rng.random())?;
            triplet.short_post = add_noise(&triplet.short_post, noise, rng.random())?;
            triplet.short_is_noisy = [!noise.is_noise_free(); 2];
            let truth = window.frames()[1..=n].to_vec();
            out.push(EvalExample { source_id: id.clone(), triplet, truth });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimepointRow {
    pub timepoint: f64,
    pub psnr: f64,
    /// PSNR of the long exposure against the same ground truth.
    pub baseline_long: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub psnr: f64,
    pub baseline_long: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over examples of the PSNR at each of `timepoints` after two-level
/// sequencing.
pub fn eval_timepoints(predictor: &dyn SequencePredictor, examples: &[EvalExample], timepoints: &[f64]) -> Result<Vec<TimepointRow>> {
    if examples.is_empty() {
        return Err(Error::Argument("no evaluation examples".into()));
    }
    let levels = 2;
    let per_example = examples
        .par_iter()
        .map(|ex| {
            let seq = predictor.predict(ex, levels)?;
            timepoints
                .iter()
                .map(|&t| {
                    let k = seq.timepoints.iter().position(|&s| (s - t).abs() < 1e-12).ok_or_else(|| {
                        Error::Argument(format!("timepoint {t} is not produced by {levels}-level sequencing"))
                    })?;
                    let truth = ex.truth_at(t)?;
                    Ok((psnr(&seq.frames[k], truth)?, psnr(&ex.triplet.long, truth)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(timepoints
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (p, b): (Vec<f64>, Vec<f64>) = per_example.iter().map(|r| r[j]).unzip();
            TimepointRow { timepoint: t, psnr: mean(&p), baseline_long: mean(&b) }
        })
        .collect())
}

/// Mid-frame PSNR for each blur length in `ns`.
pub fn eval_blur_sweep(
    predictor: &dyn SequencePredictor,
    clips: &[(String, FrameClip)],
    ns: &[usize],
    noise: &NoiseParams,
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    ns.iter()
        .map(|&n| {
            let examples = build_examples(clips, n, noise, cfg)?;
            let rows = examples
                .par_iter()
                .map(|ex| {
                    let seq = predictor.predict(ex, 1)?;
                    let truth = ex.truth_at(0.5)?;
                    Ok((psnr(&seq.frames[0], truth)?, psnr(&ex.triplet.long, truth)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (p, b): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
            Ok(SweepRow { n, psnr: mean(&p), baseline_long: mean(&b) })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub weights: Vec<String>,
    pub dataset: String,
    pub n: Option<usize>,
    pub levels: Option<u32>,
    pub examples: usize,
    pub timepoints: Vec<TimepointRow>,
    pub blur_sweep: Vec<SweepRow>,
    /// Per-frame relative PSNR: `(timepoint, dB)`.
    pub relative: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,key,psnr_db,baseline_long_db\n");
        for r in &self.timepoints {
            let _ = writeln!(s, "timepoint,{},{:.4},{:.4}", r.timepoint, r.psnr, r.baseline_long);
        }
        for r in &self.blur_sweep {
            let _ = writeln!(s, "blur_sweep,{},{:.4},{:.4}", r.n, r.psnr, r.baseline_long);
        }
        for (t, p) in &self.relative {
            let _ = writeln!(s, "relative,{t},{p:.4},");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "weights: {}", self.weights.join(", "));
        if let Some(n) = self.n {
            let _ = writeln!(s, "blurred frames N: {n}");
        }
        if let Some(l) = self.levels {
            let _ = writeln!(s, "levels: {l}");
        }
        let _ = writeln!(s, "examples: {}", self.examples);
        let _ = writeln!(s, "PSNR is over all three channels in [0, 1], averaged over examples per row; {PSNR_CAP_DB} dB marks identical images.");
        if !self.timepoints.is_empty() {
            let _ = writeln!(s, "\n  t       PSNR    long");
            for r in &self.timepoints {
                let _ = writeln!(s, "  {:<6}  {:>6.2}  {:>6.2}", r.timepoint, r.psnr, r.baseline_long);
            }
        }
        if !self.blur_sweep.is_empty() {
            let _ = writeln!(s, "\n  N    PSNR    long");
            for r in &self.blur_sweep {
                let _ = writeln!(s, "  {:<3}  {:>6.2}  {:>6.2}", r.n, r.psnr, r.baseline_long);
            }
        }
        if !self.relative.is_empty() {
            let _ = writeln!(s, "\n  t       relative PSNR");
            for (t, p) in &self.relative {
                let _ = writeln!(s, "  {t:<6}  {p:>6.2}");
            }
        }
        s
    }
}
