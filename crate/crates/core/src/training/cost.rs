//! Cost terms in `f64` with analytic gradients.
//!
//! Kernels take planar data (channel, row, column), the layout of one NCHW
//! tensor item. The image-level wrappers convert from [`Image`].

use crate::image::{DecompositionTriple, Image};
use crate::{Error, Result};

/// Smoothing inside the total-variation square root.
pub const TV_EPSILON: f64 = 1e-6;

/// Mean squared error.
///
/// # Panics
/// If the slices differ in length or are empty.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mse operands differ in length");
    assert!(!pred.is_empty(), "mse of nothing");
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    assert_eq!(pred.len(), target.len(), "mse operands differ in length");
    let k = 2.0 / pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| k * (p - t)).collect()
}

/// `(n1·first + mid + n2·second) / (n1 + n2 + 1)`.
pub fn recomposition(first: &[f64], mid: &[f64], second: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    assert!(first.len() == mid.len() && mid.len() == second.len(), "recomposition operands differ in length");
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b + 1.0;
    first.iter().zip(mid).zip(second).map(|((f, m), s)| (a * f + m + b * s) / n).collect()
}

/// MSE between `long` and the weighted recomposition, with gradients for
/// `first`, `mid` and `second`.
pub fn sum_mse(
    first: &[f64],
    mid: &[f64],
    second: &[f64],
    long: &[f64],
    n1: usize,
    n2: usize,
) -> (f64, [Vec<f64>; 3]) {
    let r = recomposition(first, mid, second, n1, n2);
    let cost = mse(&r, long);
    let g = mse_grad(&r, long);
    let n = (n1 + n2 + 1) as f64;
    let scaled = |k: f64| g.iter().map(|v| v * k / n).collect::<Vec<_>>();
    (cost, [scaled(n1 as f64), scaled(1.0), scaled(n2 as f64)])
}

/// Isotropic total variation `Σ sqrt(dx² + dy² + ε²)` over every pixel and
/// channel, with forward differences; differences leaving the image are zero.
/// Returns the value and its gradient.
pub fn tv(data: &[f64], channels: usize, height: usize, width: usize) -> (f64, Vec<f64>) {
    assert_eq!(data.len(), channels * height * width, "tv data does not match its dimensions");
    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    let eps2 = TV_EPSILON * TV_EPSILON;
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..height {
            for x in 0..width {
                let i = base + y * width + x;
                let dx = if x + 1 < width { data[i + 1] - data[i] } else { 0.0 };
                let dy = if y + 1 < height { data[i + width] - data[i] } else { 0.0 };
                let s = (dx * dx + dy * dy + eps2).sqrt();
                total += s;
                grad[i] -= (dx + dy) / s;
                if x + 1 < width {
                    grad[i + 1] += dx / s;
                }
                if y + 1 < height {
                    grad[i + width] += dy / s;
                }
            }
        }
    }
    (total, grad)
}

/// Planar `f64` copy of an image.
pub fn planar(img: &Image) -> Vec<f64> {
    let plane = img.height() * img.width();
    let mut out = vec![0.0; 3 * plane];
    for (p, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = px[c] as f64;
        }
    }
    out
}

fn same_dims(a: &Image, b: &Image, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Argument(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn parts(d: &DecompositionTriple) -> [&Image; 3] {
    [&d.first_half, &d.mid_sharp, &d.second_half]
}

/// Sum of the three per-image mean squared errors.
pub fn supervised_cost(pred: &DecompositionTriple, target: &DecompositionTriple) -> Result<f64> {
    let mut total = 0.0;
    for (p, t) in parts(pred).into_iter().zip(parts(target)) {
        same_dims(p, t, "supervised cost")?;
        total += mse(&planar(p), &planar(t));
    }
    Ok(total)
}

/// MSE between `long` and the recomposition of `pred` with weights `n1`, `n2`.
pub fn sum_cost(pred: &DecompositionTriple, long: &Image, n1: usize, n2: usize) -> Result<f64> {
    for p in parts(pred) {
        same_dims(p, long, "sum cost")?;
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::Argument(format!("sum cost weights ({n1}, {n2}) must be positive")));
    }
    let [a, m, b] = parts(pred).map(planar);
    Ok(sum_mse(&a, &m, &b, &planar(long), n1, n2).0)
}

/// Total variation of an image, summed over pixels and channels.
pub fn tv_cost(img: &Image) -> f64 {
    tv(&planar(img), 3, img.height(), img.width()).0
}
