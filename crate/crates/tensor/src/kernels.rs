//! Raw CPU kernels. Convolutions lower to im2col + SGEMM; every routine works
//! on a single image of an `N, C, H, W` batch.

/// Sampling geometry of a 2-D convolution window over an image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let span_h = (height + 2 * pad).checked_sub(kernel)?;
        let span_w = (width + 2 * pad).checked_sub(kernel)?;
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: span_h / stride + 1,
            out_w: span_w / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `image` (C×H×W) into `col` (C·k·k × out_h·out_w).
pub(crate) fn im2col(image: &[f32], win: &Window, col: &mut [f32]) {
    if win.is_pointwise() {
        col.copy_from_slice(image);
        return;
    }
    let (h, w, k, s, p) = (win.height as isize, win.width as isize, win.kernel, win.stride as isize, win.pad as isize);
    let (oh, ow) = (win.out_h, win.out_w);
    let mut row = 0;
    for c in 0..win.channels {
        let plane = &image[c * (h * w) as usize..(c + 1) * (h * w) as usize];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + ky as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix >= 0 && ix < w { src[ix as usize] } else { 0.0 };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold `col` back onto `image`, accumulating overlapping taps.
pub(crate) fn col2im_add(col: &[f32], win: &Window, image: &mut [f32]) {
    if win.is_pointwise() {
        for (d, s) in image.iter_mut().zip(col) {
            *d += *s;
        }
        return;
    }
    let (h, w, k, s, p) = (win.height as isize, win.width as isize, win.kernel, win.stride as isize, win.pad as isize);
    let (oh, ow) = (win.out_h, win.out_w);
    let mut row = 0;
    for c in 0..win.channels {
        let plane = &mut image[c * (h * w) as usize..(c + 1) * (h * w) as usize];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += *v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Strided matrix view: element `(i, j)` lives at `ptr[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f32], ncols: usize) -> Self {
        Self { data, rs: ncols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c (m×n, row-major) = beta·c + a (m×k) · b (k×n)`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // Bounds: the furthest element each operand touches must be in range.
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    // SAFETY: index ranges checked above; `c` is an exclusive row-major m×n buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v += *b;
        }
    }
}

pub(crate) fn bias_grad_add(dout: &[f32], plane: usize, db: &mut [f32]) {
    for (chunk, g) in dout.chunks(plane).zip(db.iter_mut()) {
        *g += chunk.iter().sum::<f32>();
    }
}
