//! Observation model: images, clips, exposure triplets and the discrete
//! temporal-averaging synthesis of long exposures.

use crate::{Error, Result};

/// H×W×3 linear-intensity image, interleaved RGB, every sample in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.height, self.width)
    }
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!("image dimensions {height}x{width} must be positive")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Argument(format!(
                "{height}x{width}x3 image needs {} samples, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Build from arbitrary values, clamping into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Range(format!(
                "crop {height}x{width} at ({top}, {left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(Image { height, width, data })
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Image { height: self.height, width: self.width, data }
    }

    /// Rotate by 90 degrees; `clockwise = false` rotates by -90.
    pub fn rotate90(&self, clockwise: bool) -> Image {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(self.data.len());
        // Output is w×h.
        for y in 0..w {
            for x in 0..h {
                let (sy, sx) = if clockwise { (h - 1 - x, y) } else { (x, w - 1 - y) };
                let i = (sy * w + sx) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Image { height: w, width: h, data }
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        check_same_dims(self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max))
    }
}

pub(crate) fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Ordered frames of a high-frame-rate video.
#[derive(Clone, Debug)]
pub struct FrameClip {
    frames: Vec<Image>,
    nominal_fps: f64,
}

impl FrameClip {
    pub fn new(frames: Vec<Image>, nominal_fps: f64) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Argument("clip has no frames".into()))?;
        if let Some(f) = frames.iter().find(|f| f.dims() != first.dims()) {
            return Err(Error::Argument(format!(
                "clip frames differ in size: {:?} vs {:?}",
                first.dims(),
                f.dims()
            )));
        }
        if !(nominal_fps > 0.0) {
            return Err(Error::Argument(format!("frame rate {nominal_fps} must be positive")));
        }
        Ok(Self { frames, nominal_fps })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn nominal_fps(&self) -> f64 {
        self.nominal_fps
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn reversed(&self) -> FrameClip {
        let mut frames = self.frames.clone();
        frames.reverse();
        FrameClip { frames, nominal_fps: self.nominal_fps }
    }

    /// Same crop applied to every frame in `range`.
    pub fn crop_window(
        &self,
        range: std::ops::Range<usize>,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<FrameClip> {
        if range.end > self.frames.len() || range.is_empty() {
            return Err(Error::Range(format!("frame window {range:?} outside clip of {}", self.frames.len())));
        }
        let frames = self.frames[range]
            .iter()
            .map(|f| f.crop(top, left, height, width))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameClip { frames, nominal_fps: self.nominal_fps })
    }
}

/// Short-long-short capture: the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureTriplet {
    pub short_pre: Image,
    pub long: Image,
    pub short_post: Image,
    /// Frames averaged into `long`; `None` for real captures where it is unknown.
    pub n_frames_long: Option<usize>,
    /// Whether `short_pre` / `short_post` carry sensor noise.
    pub short_is_noisy: [bool; 2],
}

impl ExposureTriplet {
    pub fn new(
        short_pre: Image,
        long: Image,
        short_post: Image,
        n_frames_long: Option<usize>,
        short_is_noisy: [bool; 2],
    ) -> Result<Self> {
        check_same_dims(&short_pre, &long)?;
        check_same_dims(&short_post, &long)?;
        if let Some(n) = n_frames_long {
            check_odd_length(n)?;
        }
        Ok(Self { short_pre, long, short_post, n_frames_long, short_is_noisy })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.long.dims()
    }

    /// Swap the roles of the two shorts (temporal reversal).
    pub fn reversed(&self) -> ExposureTriplet {
        ExposureTriplet {
            short_pre: self.short_post.clone(),
            long: self.long.clone(),
            short_post: self.short_pre.clone(),
            n_frames_long: self.n_frames_long,
            short_is_noisy: [self.short_is_noisy[1], self.short_is_noisy[0]],
        }
    }
}

/// Two half-blurred images and the midpoint sharp image.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionTriple {
    pub first_half: Image,
    pub mid_sharp: Image,
    pub second_half: Image,
    pub n1: usize,
    pub n2: usize,
}

impl DecompositionTriple {
    pub fn new(first_half: Image, mid_sharp: Image, second_half: Image, n1: usize, n2: usize) -> Result<Self> {
        check_same_dims(&first_half, &mid_sharp)?;
        check_same_dims(&second_half, &mid_sharp)?;
        if n1 == 0 || n2 == 0 {
            return Err(Error::Argument(format!("half lengths ({n1}, {n2}) must be positive")));
        }
        Ok(Self { first_half, mid_sharp, second_half, n1, n2 })
    }

    pub fn n_total(&self) -> usize {
        self.n1 + self.n2 + 1
    }

    /// `(n1·first_half + mid_sharp + n2·second_half) / (n1 + n2 + 1)` in f64.
    pub fn recompose(&self) -> Vec<f64> {
        let (n1, n2) = (self.n1 as f64, self.n2 as f64);
        let n = n1 + n2 + 1.0;
        self.first_half
            .data()
            .iter()
            .zip(self.mid_sharp.data())
            .zip(self.second_half.data())
            .map(|((&a, &m), &b)| (n1 * a as f64 + m as f64 + n2 * b as f64) / n)
            .collect()
    }

    /// Largest per-sample deviation between the recomposition and `long`.
    pub fn sum_identity_residual(&self, long: &Image) -> Result<f64> {
        check_same_dims(&self.mid_sharp, long)?;
        Ok(self
            .recompose()
            .iter()
            .zip(long.data())
            .map(|(r, &l)| (r - l as f64).abs())
            .fold(0.0, f64::max))
    }

    pub fn reversed(&self) -> DecompositionTriple {
        DecompositionTriple {
            first_half: self.second_half.clone(),
            mid_sharp: self.mid_sharp.clone(),
            second_half: self.first_half.clone(),
            n1: self.n2,
            n2: self.n1,
        }
    }
}

fn check_odd_length(n: usize) -> Result<()> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::Argument(format!("long exposure length {n} must be odd and at least 3")));
    }
    Ok(())
}

/// Pixelwise arithmetic mean of equally sized frames.
pub fn average_frames<'a>(frames: impl IntoIterator<Item = &'a Image>) -> Result<Image> {
    let mut iter = frames.into_iter();
    let first = iter.next().ok_or_else(|| Error::Argument("cannot average zero frames".into()))?;
    let mut acc: Vec<f64> = first.data().iter().map(|&v| v as f64).collect();
    let mut count = 1usize;
    for f in iter {
        if f.dims() != first.dims() {
            return Err(Error::Argument(format!(
                "cannot average {:?} with {:?} frames",
                first.dims(),
                f.dims()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += v as f64;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    let data = acc.into_iter().map(|a| ((a * inv) as f32).clamp(0.0, 1.0)).collect();
    Image::new(first.height(), first.width(), data)
}

/// Synthesize a short-long-short triplet and its ground-truth decomposition.
///
/// `start` is the 0-based index of the first frame averaged into the long
/// exposure; the shorts are frames `start - 1` and `start + n`. The shorts
/// are returned noise-free.
pub fn make_triplet(clip: &FrameClip, start: usize, n: usize) -> Result<(ExposureTriplet, DecompositionTriple)> {
    check_odd_length(n)?;
    if start == 0 || start + n >= clip.len() {
        return Err(Error::Range(format!(
            "triplet with {n} blurred frames at {start} needs frames {}..={} of a {}-frame clip",
            start as isize - 1,
            start + n,
            clip.len()
        )));
    }
    let frames = clip.frames();
    let half = (n - 1) / 2;
    let window = &frames[start..start + n];
    let long = average_frames(window)?;
    let first_half = average_frames(&window[..half])?;
    let mid_sharp = window[half].clone();
    let second_half = average_frames(&window[half + 1..])?;
    let triplet = ExposureTriplet::new(
        frames[start - 1].clone(),
        long,
        frames[start + n].clone(),
        Some(n),
        [false, false],
    )?;
    let target = DecompositionTriple::new(first_half, mid_sharp, second_half, half, half)?;
    Ok((triplet, target))
}
