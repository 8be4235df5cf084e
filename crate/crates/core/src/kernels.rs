//! Low-level dense kernels: GEMM wrapper, im2col-based convolution,
//! transposed convolution, bilinear resampling and average pooling.
//!
//! All feature tensors here are single-sample `[C][H][W]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c = beta * c + a · b` where `a` is `m×k` and `b` is `k×n`, each optionally
/// stored transposed (row-major in memory).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length of a strided, padded window sweep.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn deconv_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input.max(1) - 1) * stride + kernel + output_padding).checked_sub(2 * padding)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Stride-1 window that preserves spatial size for odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self::new(kernel, 1, kernel / 2)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold `[c][h][w]` into a `(c·k·k) × (oh·ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(input: &[f64], c: usize, h: usize, w: usize, win: Window, oh: usize, ow: usize) -> Vec<f64> {
    let k = win.kernel;
    let cols_per_row = oh * ow;
    let mut cols = vec![0.0; c * k * k * cols_per_row];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * cols_per_row..(row + 1) * cols_per_row];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into `[c][h][w]`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, win: Window, oh: usize, ow: usize, out: &mut [f64]) {
    let k = win.kernel;
    let cols_per_row = oh * ow;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * cols_per_row..(row + 1) * cols_per_row];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Shape(format!("{what} must be rank 3, got {s:?}"))),
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor, win: Window) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (c, h, w) = dims3(input, "conv input")?;
    let (o, wc, kh, kw) = match weight.shape() {
        &[o, wc, kh, kw] => (o, wc, kh, kw),
        s => return Err(Error::Shape(format!("conv weight must be rank 4, got {s:?}"))),
    };
    if wc != c || kh != win.kernel || kw != win.kernel {
        return Err(Error::Shape(format!(
            "conv weight {:?} incompatible with input {:?} / kernel {}",
            weight.shape(),
            input.shape(),
            win.kernel
        )));
    }
    let oh = conv_out_dim(h, win.kernel, win.stride, win.padding)
        .ok_or_else(|| Error::Shape(format!("input {h}x{w} too small for window {win:?}")))?;
    let ow = conv_out_dim(w, win.kernel, win.stride, win.padding)
        .ok_or_else(|| Error::Shape(format!("input {h}x{w} too small for window {win:?}")))?;
    Ok((c, h, w, o, oh, ow))
}

/// Cross-correlation of `[C][H][W]` with `[O][C][k][k]` weights.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, win: Window) -> Result<Tensor> {
    let (c, h, w, o, oh, ow) = conv_dims(input, weight, win)?;
    let kk = c * win.kernel * win.kernel;
    let mut out = vec![0.0; o * oh * ow];
    if win.is_pointwise() {
        gemm(o, kk, oh * ow, weight.data(), false, input.data(), false, 0.0, &mut out);
    } else {
        let cols = im2col(input.data(), c, h, w, win, oh, ow);
        gemm(o, kk, oh * ow, weight.data(), false, &cols, false, 0.0, &mut out);
    }
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_mut(oh * ow).zip(b) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(&[o, oh, ow], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    win: Window,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (c, h, w, o, oh, ow) = conv_dims(input, weight, win)?;
    if grad_out.shape() != [o, oh, ow] {
        return Err(Error::Shape("conv grad_out shape".into()));
    }
    let kk = c * win.kernel * win.kernel;
    let p = oh * ow;
    let g = grad_out.data();
    let grad_b: Vec<f64> = g.chunks(p).map(|ch| ch.iter().sum()).collect();
    let mut grad_w = vec![0.0; o * kk];
    let mut grad_in = vec![0.0; c * h * w];
    if win.is_pointwise() {
        gemm(o, p, kk, g, false, input.data(), true, 0.0, &mut grad_w);
        gemm(kk, o, p, weight.data(), true, g, false, 0.0, &mut grad_in);
    } else {
        let cols = im2col(input.data(), c, h, w, win, oh, ow);
        gemm(o, p, kk, g, false, &cols, true, 0.0, &mut grad_w);
        let mut grad_cols = vec![0.0; kk * p];
        gemm(kk, o, p, weight.data(), true, g, false, 0.0, &mut grad_cols);
        col2im(&grad_cols, c, h, w, win, oh, ow, &mut grad_in);
    }
    Ok((
        Tensor::new(&[c, h, w], grad_in)?,
        Tensor::new(weight.shape(), grad_w)?,
        grad_b,
    ))
}

fn deconv_dims(
    input: &Tensor,
    weight: &Tensor,
    win: Window,
    output_padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (c, h, w) = dims3(input, "deconv input")?;
    let (wc, o, kh, kw) = match weight.shape() {
        &[wc, o, kh, kw] => (wc, o, kh, kw),
        s => return Err(Error::Shape(format!("deconv weight must be rank 4, got {s:?}"))),
    };
    if wc != c || kh != win.kernel || kw != win.kernel {
        return Err(Error::Shape(format!(
            "deconv weight {:?} incompatible with input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if output_padding >= win.stride.max(1) && output_padding > 0 {
        return Err(Error::InvalidParam("output padding must be below stride".into()));
    }
    let oh = deconv_out_dim(h, win.kernel, win.stride, win.padding, output_padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Shape("deconv output would be empty".into()))?;
    let ow = deconv_out_dim(w, win.kernel, win.stride, win.padding, output_padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Shape("deconv output would be empty".into()))?;
    Ok((c, h, w, o, oh, ow))
}

/// Transposed convolution of `[Ci][H][W]` with `[Ci][Co][k][k]` weights.
pub fn deconv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    win: Window,
    output_padding: usize,
) -> Result<Tensor> {
    let (c, h, w, o, oh, ow) = deconv_dims(input, weight, win, output_padding)?;
    let kk = o * win.kernel * win.kernel;
    let mut cols = vec![0.0; kk * h * w];
    gemm(kk, c, h * w, weight.data(), true, input.data(), false, 0.0, &mut cols);
    let mut out = vec![0.0; o * oh * ow];
    col2im(&cols, o, oh, ow, win, h, w, &mut out);
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_mut(oh * ow).zip(b) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(&[o, oh, ow], out)
}

pub fn deconv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    win: Window,
    output_padding: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (c, h, w, o, oh, ow) = deconv_dims(input, weight, win, output_padding)?;
    if grad_out.shape() != [o, oh, ow] {
        return Err(Error::Shape("deconv grad_out shape".into()));
    }
    let kk = o * win.kernel * win.kernel;
    let g = grad_out.data();
    let grad_b: Vec<f64> = g.chunks(oh * ow).map(|ch| ch.iter().sum()).collect();
    let grad_cols = im2col(g, o, oh, ow, win, h, w);
    let mut grad_in = vec![0.0; c * h * w];
    gemm(c, kk, h * w, weight.data(), false, &grad_cols, false, 0.0, &mut grad_in);
    let mut grad_w = vec![0.0; c * kk];
    gemm(c, h * w, kk, input.data(), false, &grad_cols, true, 0.0, &mut grad_w);
    Ok((
        Tensor::new(&[c, h, w], grad_in)?,
        Tensor::new(weight.shape(), grad_w)?,
        grad_b,
    ))
}

/// Per-axis interpolation taps: `(lo, hi, weight_of_hi)`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling (half-pixel centers) of `[C][H][W]` to `[C][oh][ow]`.
pub fn resize_bilinear(input: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (c, h, w) = dims3(input, "resize input")?;
    if h == oh && w == ow {
        return Ok(input.clone());
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let src = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn resize_bilinear_backward(grad_out: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, oh, ow) = dims3(grad_out, "resize grad")?;
    if h == oh && w == ow {
        return Ok(grad_out.clone());
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let g = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[(ch * oh + oy) * ow + ox];
                plane[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += v * (1.0 - fy) * fx;
                plane[y1 * w + x0] += v * fy * (1.0 - fx);
                plane[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Non-overlapping `factor × factor` average pooling over the trailing two axes.
/// Works for any leading shape.
pub fn avg_pool(input: &Tensor, factor: usize) -> Result<Tensor> {
    let rank = input.rank();
    if rank < 2 || factor == 0 {
        return Err(Error::Shape("avg_pool needs rank ≥ 2 and factor ≥ 1".into()));
    }
    let (h, w) = (input.shape()[rank - 2], input.shape()[rank - 1]);
    let (oh, ow) = (h / factor, w / factor);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("{h}x{w} too small to pool by {factor}")));
    }
    let lead: usize = input.shape()[..rank - 2].iter().product();
    let norm = 1.0 / (factor * factor) as f64;
    let src = input.data();
    let mut out = vec![0.0; lead * oh * ow];
    for l in 0..lead {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += src[(l * h + oy * factor + dy) * w + ox * factor + dx];
                    }
                }
                out[(l * oh + oy) * ow + ox] = s * norm;
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    Tensor::new(&shape, out)
}

pub fn avg_pool_backward(grad_out: &Tensor, input_shape: &[usize], factor: usize) -> Result<Tensor> {
    let rank = input_shape.len();
    let (h, w) = (input_shape[rank - 2], input_shape[rank - 1]);
    let (oh, ow) = (h / factor, w / factor);
    let lead: usize = input_shape[..rank - 2].iter().product();
    let norm = 1.0 / (factor * factor) as f64;
    let g = grad_out.data();
    let mut out = vec![0.0; lead * h * w];
    for l in 0..lead {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[(l * oh + oy) * ow + ox] * norm;
                for dy in 0..factor {
                    for dx in 0..factor {
                        out[(l * h + oy * factor + dy) * w + ox * factor + dx] = v;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, out)
}
