//! Signal-dependent Gaussian noise with affine variance `alpha * i + beta`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::image::{FrameClip, Image};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub gain_label: String,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::noise_free()
    }
}

impl NoiseParams {
    pub fn new(alpha: f64, beta: f64, gain_label: impl Into<String>) -> Result<Self> {
        let p = Self { alpha, beta, gain_label: gain_label.into() };
        p.validate()?;
        Ok(p)
    }

    pub fn noise_free() -> Self {
        Self { alpha: 0.0, beta: 0.0, gain_label: String::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Argument(format!("noise {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn variance(&self, intensity: f64) -> f64 {
        self.alpha * intensity + self.beta
    }

    pub fn is_noise_free(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    /// Parse the `alpha` / `beta` / `gain_label` text form.
    pub fn parse(text: &str) -> Result<Self> {
        let p: NoiseParams = toml::from_str(text).map_err(|e| Error::format("noise parameters", e.message()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("noise parameters always serialize")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Unclamped noise realisation: one zero-mean sample per image element with
/// variance `alpha * i + beta`, `i` the clean intensity.
pub fn noise_field(img: &Image, params: &NoiseParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img
        .data()
        .iter()
        .map(|&i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * params.variance(i as f64).sqrt()
        })
        .collect())
}

/// Corrupt `img` with signal-dependent noise, clamped to `[0, 1]`.
pub fn add_noise(img: &Image, params: &NoiseParams, seed: u64) -> Result<Image> {
    if params.is_noise_free() {
        params.validate()?;
        return Ok(img.clone());
    }
    let noise = noise_field(img, params, seed)?;
    let data = img
        .data()
        .iter()
        .zip(noise)
        .map(|(&i, n)| (i as f64 + n).clamp(0.0, 1.0) as f32)
        .collect();
    Image::new(img.height(), img.width(), data)
}

const BINS: usize = 64;
const MIN_BIN_SAMPLES: usize = 32;
/// Between-pixel spread of temporal means must exceed this multiple of the
/// spread explained by temporal noise alone.
const LEVEL_SEPARATION: f64 = 4.0;
/// Bins whose fitted Gaussian lies within this many deviations of 0 or 1 are
/// treated as clip-affected.
const CLIP_MARGIN: f64 = 3.0;

#[derive(Clone, Copy, Default)]
struct Bin {
    count: usize,
    mean_sum: f64,
    var_sum: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Calibrate `(alpha, beta)` from static-scene bursts.
///
/// Each sample position contributes its temporal mean and variance. The frames
/// of a burst are split into interleaved halves; one half selects the intensity
/// bin, the other supplies the moments (and vice versa), so binning does not
/// correlate with the measured noise. Per bin, the moments are mapped back
/// through the `[0, 1]` clamp to the underlying Gaussian before the weighted
/// least-squares line fit.
pub fn estimate_noise_params(bursts: &[FrameClip]) -> Result<NoiseParams> {
    if bursts.is_empty() {
        return Err(Error::Argument("no bursts supplied".into()));
    }
    let mut bins = [Bin::default(); BINS];
    let mut n_px = 0usize;
    let (mut mean_acc, mut mean_sq_acc, mut within_acc) = (0.0f64, 0.0f64, 0.0f64);
    let mut any_variance = false;
    for burst in bursts {
        let t = burst.len();
        if t < 8 {
            return Err(Error::Argument(format!("burst has {t} frames, at least 8 are needed")));
        }
        let frames = burst.frames();
        let numel = frames[0].data().len();
        let mut series = vec![0.0f64; t];
        for p in 0..numel {
            for (s, f) in series.iter_mut().zip(frames) {
                *s = f.data()[p] as f64;
            }
            let (m, v) = mean_var(&series);
            n_px += 1;
            mean_acc += m;
            mean_sq_acc += m * m;
            within_acc += v / t as f64;
            any_variance |= v > 0.0;
            let even: Vec<f64> = series.iter().step_by(2).copied().collect();
            let odd: Vec<f64> = series.iter().skip(1).step_by(2).copied().collect();
            for (key, measured) in [(&even, &odd), (&odd, &even)] {
                let k = key.iter().sum::<f64>() / key.len() as f64;
                let (m, v) = mean_var(measured);
                let b = &mut bins[((k * BINS as f64) as usize).min(BINS - 1)];
                b.count += 1;
                b.mean_sum += m;
                b.var_sum += v;
            }
        }
    }
    let n = n_px as f64;
    let grand = mean_acc / n;
    let between = (mean_sq_acc / n - grand * grand).max(0.0) * n / (n - 1.0).max(1.0);
    let within = within_acc / n;
    if between <= 1e-12 || between <= LEVEL_SEPARATION * within {
        return Err(Error::IllPosed(format!(
            "bursts do not span distinct intensity levels (between-pixel variance {between:.3e}, noise-explained {within:.3e})"
        )));
    }
    if !any_variance {
        return Ok(NoiseParams::noise_free());
    }

    let mut points = Vec::new();
    for b in bins.iter().filter(|b| b.count >= MIN_BIN_SAMPLES) {
        let c = b.count as f64;
        if let Some((mu, var)) = unclamp_moments(b.mean_sum / c, b.var_sum / c) {
            points.push((mu, var, c));
        }
    }
    // Bins near the clip points mix neighbouring intensities through a strongly
    // curved moment map; keep them only if nothing else is available.
    let interior: Vec<_> = points
        .iter()
        .copied()
        .filter(|&(mu, var, _)| mu - CLIP_MARGIN * var.sqrt() >= 0.0 && mu + CLIP_MARGIN * var.sqrt() <= 1.0)
        .collect();
    let spread = |ps: &[(f64, f64, f64)]| {
        ps.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) - ps.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
    };
    if interior.len() >= 2 && spread(&interior) >= 0.1 {
        points = interior;
    }
    if points.len() < 2 || spread(&points) < 1e-6 {
        return Err(Error::IllPosed("fewer than two usable intensity levels".into()));
    }
    let (alpha, beta) = weighted_line_fit(&points);
    Ok(NoiseParams { alpha: alpha.max(0.0), beta: beta.max(0.0), gain_label: String::new() })
}

fn weighted_line_fit(points: &[(f64, f64, f64)]) -> (f64, f64) {
    let w: f64 = points.iter().map(|p| p.2).sum();
    let mx = points.iter().map(|p| p.2 * p.0).sum::<f64>() / w;
    let my = points.iter().map(|p| p.2 * p.1).sum::<f64>() / w;
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean and variance of `clamp(X, 0, 1)` for `X ~ N(mu, sigma^2)`.
pub fn clamped_moments(mu: f64, sigma: f64) -> (f64, f64) {
    if sigma <= 0.0 {
        let m = mu.clamp(0.0, 1.0);
        return (m, 0.0);
    }
    let a = -mu / sigma;
    let b = (1.0 - mu) / sigma;
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let inside = std_normal_cdf(b) - std_normal_cdf(a);
    let upper = 1.0 - std_normal_cdf(b);
    let m1 = upper + mu * inside + sigma * (pa - pb);
    let m2 = upper
        + (mu * mu + sigma * sigma) * inside
        + 2.0 * mu * sigma * (pa - pb)
        + sigma * sigma * (a * pa - b * pb);
    (m1, (m2 - m1 * m1).max(0.0))
}

/// Invert [`clamped_moments`] by damped Newton iteration in `(mu, ln sigma)`.
fn unclamp_moments(mean: f64, var: f64) -> Option<(f64, f64)> {
    if var <= 0.0 {
        return Some((mean, 0.0));
    }
    if !(1e-9..1.0 - 1e-9).contains(&mean) {
        return None;
    }
    let mut mu = mean;
    let mut ls = 0.5 * var.ln();
    let residual = |mu: f64, ls: f64| {
        let (m, v) = clamped_moments(mu, ls.exp());
        (m - mean, v.max(1e-300).ln() - var.ln())
    };
    for _ in 0..100 {
        let (r0, r1) = residual(mu, ls);
        if r0.abs() < 1e-12 && r1.abs() < 1e-10 {
            break;
        }
        let h = 1e-6;
        let (a0, a1) = residual(mu + h, ls);
        let (b0, b1) = residual(mu, ls + h);
        let j = [[(a0 - r0) / h, (b0 - r0) / h], [(a1 - r1) / h, (b1 - r1) / h]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let dmu = (j[1][1] * r0 - j[0][1] * r1) / det;
        let dls = (j[0][0] * r1 - j[1][0] * r0) / det;
        let step = 1.0f64.min(0.5 / dls.abs().max(1e-300)).min(0.25 / dmu.abs().max(1e-300));
        mu -= step * dmu;
        ls -= step * dls;
        if !mu.is_finite() || !ls.is_finite() {
            return None;
        }
    }
    let (r0, r1) = residual(mu, ls);
    if r0.abs() > 1e-6 || r1.abs() > 1e-4 {
        return None;
    }
    let s = ls.exp();
    Some((mu, s * s))
}
