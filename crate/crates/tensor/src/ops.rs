//! Forward and backward rules shared by the tape and the eager executor.

use crate::kernels::{add_bias, bias_grad_add, col2im_add, gemm, im2col, Mat, Window};
use crate::{Result, Tensor, TensorError};

fn shape_err<T>(msg: String) -> Result<T> {
    Err(TensorError::Shape(msg))
}

fn conv_window(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<(Window, usize)> {
    let (_, c, h, wd) = x.dims4()?;
    let (o, wc, kh, kw) = w.dims4()?;
    if wc != c || kh != kw || stride == 0 {
        return shape_err(format!(
            "conv weight {:?} incompatible with input {:?} (stride {stride})",
            w.shape(),
            x.shape()
        ));
    }
    match Window::new(c, h, wd, kh, stride, pad) {
        Some(win) => Ok((win, o)),
        None => shape_err(format!("kernel {kh} larger than padded input {:?}", x.shape())),
    }
}

fn check_bias(b: Option<&Tensor>, channels: usize) -> Result<()> {
    match b {
        Some(b) if b.numel() != channels => {
            shape_err(format!("bias of {} elements for {channels} channels", b.numel()))
        }
        _ => Ok(()),
    }
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (win, o) = conv_window(x, w, stride, pad)?;
    check_bias(b, o)?;
    let n = x.shape()[0];
    let (rows, cols) = (win.rows(), win.cols());
    let mut out = Tensor::zeros(&[n, o, win.out_h, win.out_w]);
    let mut col = vec![0.0f32; rows * cols];
    for i in 0..n {
        im2col(x.item(i), &win, &mut col);
        let dst = &mut out.data_mut()[i * o * cols..(i + 1) * o * cols];
        gemm(o, rows, cols, Mat::rows(w.data(), rows), Mat::rows(&col, cols), 0.0, dst);
        if let Some(b) = b {
            add_bias(dst, b.data(), cols);
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dout: &Tensor,
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads> {
    let (win, o) = conv_window(x, w, stride, pad)?;
    let n = x.shape()[0];
    let (rows, cols) = (win.rows(), win.cols());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = (need_dw && has_bias).then(|| Tensor::zeros(&[o]));
    let mut col = vec![0.0f32; rows * cols];
    let plane = x.numel() / n.max(1);
    for i in 0..n {
        let g = dout.item(i);
        if let Some(dw) = dw.as_mut() {
            im2col(x.item(i), &win, &mut col);
            gemm(o, cols, rows, Mat::rows(g, cols), Mat::rows(&col, cols).t(), 1.0, dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            bias_grad_add(g, cols, db.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, o, cols, Mat::rows(w.data(), rows).t(), Mat::rows(g, cols), 0.0, &mut col);
            col2im_add(&col, &win, &mut dx.data_mut()[i * plane..(i + 1) * plane]);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

fn convt_window(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<(Window, usize)> {
    let (_, c, h, wd) = x.dims4()?;
    let (wc, o, kh, kw) = w.dims4()?;
    if wc != c || kh != kw || stride == 0 || h == 0 || wd == 0 {
        return shape_err(format!(
            "transposed conv weight {:?} incompatible with input {:?}",
            w.shape(),
            x.shape()
        ));
    }
    let out_h = ((h - 1) * stride + kh).checked_sub(2 * pad);
    let out_w = ((wd - 1) * stride + kw).checked_sub(2 * pad);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return shape_err(format!("padding {pad} too large for transposed conv"));
    };
    match Window::new(o, out_h, out_w, kh, stride, pad) {
        Some(win) if win.out_h == h && win.out_w == wd => Ok((win, c)),
        _ => shape_err(format!("inconsistent transposed conv geometry for {:?}", x.shape())),
    }
}

/// Transposed convolution; weight layout is `[c_in, c_out, k, k]`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (win, cin) = convt_window(x, w, stride, pad)?;
    check_bias(b, win.channels)?;
    let n = x.shape()[0];
    let (rows, cols) = (win.rows(), win.cols());
    let out_plane = win.channels * win.height * win.width;
    let mut out = Tensor::zeros(&[n, win.channels, win.height, win.width]);
    let mut col = vec![0.0f32; rows * cols];
    for i in 0..n {
        gemm(rows, cin, cols, Mat::rows(w.data(), rows).t(), Mat::rows(x.item(i), cols), 0.0, &mut col);
        let dst = &mut out.data_mut()[i * out_plane..(i + 1) * out_plane];
        col2im_add(&col, &win, dst);
        if let Some(b) = b {
            add_bias(dst, b.data(), win.height * win.width);
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dout: &Tensor,
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads> {
    let (win, cin) = convt_window(x, w, stride, pad)?;
    let n = x.shape()[0];
    let (rows, cols) = (win.rows(), win.cols());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = (need_dw && has_bias).then(|| Tensor::zeros(&[win.channels]));
    let mut col = vec![0.0f32; rows * cols];
    for i in 0..n {
        let g = dout.item(i);
        im2col(g, &win, &mut col);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[i * cin * cols..(i + 1) * cin * cols];
            gemm(cin, rows, cols, Mat::rows(w.data(), rows), Mat::rows(&col, cols), 0.0, dst);
        }
        if let Some(dw) = dw.as_mut() {
            gemm(cin, cols, rows, Mat::rows(x.item(i), cols), Mat::rows(&col, cols).t(), 1.0, dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            bias_grad_add(g, win.height * win.width, db.data_mut());
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

pub fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(format!("cannot add {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(zip_map(a, b, |x, y| x + y))
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    map(x, |v| if v > 0.0 { v } else { v * slope })
}

pub fn leaky_relu_backward(x: &Tensor, dout: &Tensor, slope: f32) -> Tensor {
    zip_map(x, dout, |v, g| if v > 0.0 { g } else { g * slope })
}

/// `(tanh(x) + 1) / 2`, which maps the reals onto `(0, 1)`.
pub fn tanh_unit(x: &Tensor) -> Tensor {
    map(x, |v| 0.5 * (v.tanh() + 1.0))
}

pub fn tanh_unit_backward(y: &Tensor, dout: &Tensor) -> Tensor {
    zip_map(y, dout, |y, g| g * 2.0 * y * (1.0 - y))
}

pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::Shape("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for t in xs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return shape_err(format!("cannot concat {:?} with {:?}", first.shape(), t.shape()));
        }
        total_c += tc;
    }
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for i in 0..n {
        for t in xs {
            data.extend_from_slice(t.item(i));
        }
    }
    Tensor::from_vec(&[n, total_c, h, w], data)
}

/// Split a channel gradient back into the pieces of a concat.
pub fn split_channels(dout: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let (n, _, h, w) = dout.dims4_unchecked();
    let plane = h * w;
    let mut parts: Vec<Vec<f32>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for i in 0..n {
        let src = dout.item(i);
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&src[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(&[n, c, h, w], d).expect("split shape"))
        .collect()
}

/// Items `start..start + len` of a batch.
pub fn slice_batch(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if len == 0 || start + len > n {
        return shape_err(format!("batch slice {start}..{} of {:?}", start + len, x.shape()));
    }
    let stride = c * h * w;
    Tensor::from_vec(&[len, c, h, w], x.data()[start * stride..(start + len) * stride].to_vec())
}

/// Gradient of [`slice_batch`]: `dout` placed at `start` in a zero tensor.
pub fn slice_batch_backward(x_shape: &[usize], start: usize, dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x_shape);
    let offset = start * x_shape[1..].iter().product::<usize>();
    dx.data_mut()[offset..offset + dout.numel()].copy_from_slice(dout.data());
    dx
}

/// 2×2 max pooling with stride 2; returns argmax offsets for the backward pass.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return shape_err(format!("cannot 2x2-pool {:?}", x.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                dst[o] = src[best];
                arg[o] = (best - base) as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward(x_shape: &[usize], arg: &[u32], dout: &Tensor) -> Tensor {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (_, _, oh, ow) = dout.dims4_unchecked();
    let mut dx = Tensor::zeros(x_shape);
    let d = dx.data_mut();
    for (o, (&a, &g)) in arg.iter().zip(dout.data()).enumerate() {
        let p = o / (oh * ow);
        d[p * h * w + a as usize] += g;
    }
    dx
}

/// Global average over the spatial axes, producing `[n, c, 1, 1]`.
pub fn mean_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let plane = (h * w) as f32;
    let data = x.data().chunks(h * w).map(|p| p.iter().sum::<f32>() / plane).collect();
    Tensor::from_vec(&[n, c, 1, 1], data)
}

pub fn mean_pool_backward(x_shape: &[usize], dout: &Tensor) -> Tensor {
    let plane = x_shape[2] * x_shape[3];
    let mut dx = Tensor::zeros(x_shape);
    for (chunk, &g) in dx.data_mut().chunks_mut(plane).zip(dout.data()) {
        chunk.fill(g / plane as f32);
    }
    dx
}

/// Per-channel `x * scale[c] + shift[c]`.
pub fn channel_affine(x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if scale.len() != c || shift.len() != c {
        return shape_err(format!("channel affine of width {} on {:?}", scale.len(), x.shape()));
    }
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (s, b) = (scale[i % c], shift[i % c]);
        for v in chunk {
            *v = *v * s + b;
        }
    }
    Ok(out)
}

pub fn channel_affine_backward(dout: &Tensor, scale: &[f32]) -> Tensor {
    let (_, c, h, w) = dout.dims4_unchecked();
    let mut dx = dout.clone();
    for (i, chunk) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let s = scale[i % c];
        for v in chunk {
            *v *= s;
        }
    }
    dx
}
