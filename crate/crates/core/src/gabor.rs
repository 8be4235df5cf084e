//! Gabor filter banks and Gabor-orientation-modulated convolution.
//!
//! A learned canonical kernel `[O][C][k][k]` is multiplied elementwise by a
//! fixed Gabor kernel for each orientation, giving one modulated kernel per
//! orientation channel. Orientation `u` of the output is the convolution of
//! orientation `u` of the input with the `u`-modulated kernel, so gradients
//! for the canonical kernel sum contributions from every orientation.

use std::f64::consts::PI;
use std::rc::Rc;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Window};
use crate::tensor::{OrientedFeatureMap, Tensor};

/// Parameters of a Gabor bank. `wavelength` and `sigma` refer to the first
/// scale; each further scale multiplies both by `scale_factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaborParams {
    pub orientations: usize,
    pub scales: usize,
    pub kernel_size: usize,
    pub wavelength: f64,
    pub aspect: f64,
    pub sigma: f64,
    pub phase: f64,
    pub scale_factor: f64,
}

impl GaborParams {
    /// Defaults: γ = 0.5, ψ = 0, λ = k, σ = 0.56·λ, scale step √2.
    pub fn new(orientations: usize, scales: usize, kernel_size: usize) -> Self {
        let wavelength = kernel_size as f64;
        Self {
            orientations,
            scales,
            kernel_size,
            wavelength,
            aspect: 0.5,
            sigma: 0.56 * wavelength,
            phase: 0.0,
            scale_factor: std::f64::consts::SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.orientations == 0 || self.scales == 0 {
            return Err(Error::InvalidParam("orientations and scales must be ≥ 1".into()));
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "kernel size must be odd and ≥ 3, got {}",
                self.kernel_size
            )));
        }
        if !(self.wavelength > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidParam("wavelength and sigma must be positive".into()));
        }
        if !(self.scale_factor > 0.0) || !self.aspect.is_finite() || !self.phase.is_finite() {
            return Err(Error::InvalidParam("scale factor, aspect and phase must be finite".into()));
        }
        Ok(())
    }

    /// Orientation angle for the 0-based orientation index.
    pub fn theta(&self, u: usize) -> f64 {
        u as f64 * PI / self.orientations as f64
    }
}

/// Real Gabor response at integer offset `(x, y)` from the kernel center.
pub fn gabor_value(x: f64, y: f64, theta: f64, wavelength: f64, sigma: f64, aspect: f64, phase: f64) -> f64 {
    let xr = x * theta.cos() + y * theta.sin();
    let yr = -x * theta.sin() + y * theta.cos();
    (-(xr * xr + aspect * aspect * yr * yr) / (2.0 * sigma * sigma)).exp()
        * (2.0 * PI * xr / wavelength + phase).cos()
}

/// Fixed Gabor kernels stored as `[scales][orientations][k][k]`, each scaled
/// to unit max magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct GaborBank {
    kernels: Tensor,
}

impl GaborBank {
    /// Wrap explicit `[V][U][k][k]` kernels (k odd, may be 1).
    pub fn from_kernels(kernels: Tensor) -> Result<Self> {
        match kernels.shape() {
            &[v, u, kh, kw] if v > 0 && u > 0 && kh == kw && kh % 2 == 1 => {}
            s => return Err(Error::Shape(format!("Gabor kernels must be [V][U][k][k] with odd k, got {s:?}"))),
        }
        if !kernels.is_finite() {
            return Err(Error::NonFinite("Gabor kernels".into()));
        }
        Ok(Self { kernels })
    }

    /// Pointwise bank: every `1×1` kernel is 1, so modulation is the identity.
    pub fn pointwise(orientations: usize) -> Self {
        Self {
            kernels: Tensor::full(&[1, orientations, 1, 1], 1.0),
        }
    }

    pub fn scales(&self) -> usize {
        self.kernels.shape()[0]
    }
    pub fn orientations(&self) -> usize {
        self.kernels.shape()[1]
    }
    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }
    pub fn tensor(&self) -> &Tensor {
        &self.kernels
    }

    /// Kernel for 0-based scale `v`, orientation `u`, row-major `k×k`.
    pub fn kernel(&self, v: usize, u: usize) -> &[f64] {
        let kk = self.kernel_size() * self.kernel_size();
        let start = (v * self.orientations() + u) * kk;
        &self.kernels.data()[start..start + kk]
    }

    /// All orientations at scale `v`, `[U][k][k]`.
    pub fn scale(&self, v: usize) -> Result<Tensor> {
        if v >= self.scales() {
            return Err(Error::InvalidParam(format!(
                "scale index {v} out of range ({} scales)",
                self.scales()
            )));
        }
        let (u, k) = (self.orientations(), self.kernel_size());
        Ok(self.kernels.slice_outer(v, v + 1).reshape(&[u, k, k])?)
    }
}

pub fn build_gabor_bank(params: &GaborParams) -> Result<GaborBank> {
    params.validate()?;
    let (v_count, u_count, k) = (params.scales, params.orientations, params.kernel_size);
    let r = (k / 2) as isize;
    let mut data = Vec::with_capacity(v_count * u_count * k * k);
    for v in 0..v_count {
        let factor = params.scale_factor.powi(v as i32);
        let (wavelength, sigma) = (params.wavelength * factor, params.sigma * factor);
        for u in 0..u_count {
            let theta = params.theta(u);
            let mut kernel = Vec::with_capacity(k * k);
            for y in -r..=r {
                for x in -r..=r {
                    kernel.push(gabor_value(
                        x as f64,
                        y as f64,
                        theta,
                        wavelength,
                        sigma,
                        params.aspect,
                        params.phase,
                    ));
                }
            }
            let peak = kernel.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if !(peak > 0.0) || !peak.is_finite() {
                return Err(Error::InvalidParam("Gabor kernel vanished".into()));
            }
            data.extend(kernel.into_iter().map(|g| g / peak));
        }
    }
    Ok(GaborBank {
        kernels: Tensor::new(&[v_count, u_count, k, k], data)?,
    })
}

fn check_canonical(canonical: &Tensor, k: usize) -> Result<(usize, usize)> {
    match canonical.shape() {
        &[o, c, kh, kw] if kh == k && kw == k => Ok((o, c)),
        s => Err(Error::Shape(format!("canonical weights {s:?} do not match kernel size {k}"))),
    }
}

/// `[O][C][k][k]` canonical weights times each orientation's Gabor kernel,
/// giving `[O][U][C][k][k]`.
pub fn modulate_weights(canonical: &Tensor, bank: &GaborBank, scale_index: usize) -> Result<Tensor> {
    let gabor = bank.scale(scale_index)?;
    let k = bank.kernel_size();
    let (o, c) = check_canonical(canonical, k)?;
    let u_count = bank.orientations();
    let kk = k * k;
    let mut out = Vec::with_capacity(o * u_count * c * kk);
    for oc in 0..o {
        let src = &canonical.data()[oc * c * kk..(oc + 1) * c * kk];
        for u in 0..u_count {
            let g = &gabor.data()[u * kk..(u + 1) * kk];
            for ic in 0..c {
                out.extend(src[ic * kk..(ic + 1) * kk].iter().zip(g).map(|(w, g)| w * g));
            }
        }
    }
    Tensor::new(&[o, u_count, c, k, k], out)
}

/// `canonical ⊙ gabor[u]`, broadcast over the two leading axes.
fn modulate_one(canonical: &Tensor, gabor_u: &[f64]) -> Tensor {
    let kk = gabor_u.len();
    Tensor::from_fn(canonical.shape(), |i| canonical.data()[i] * gabor_u[i % kk])
}

fn orientation_slice(t: &Tensor, u: usize) -> Tensor {
    let (n, uc, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for ch in 0..n {
        let start = (ch * uc + u) * plane;
        out.extend_from_slice(&t.data()[start..start + plane]);
    }
    Tensor::new(&[n, h, w], out).expect("slice shape")
}

fn scatter_orientation(dst: &mut Tensor, u: usize, src: &Tensor) {
    let (n, uc, h, w) = (dst.shape()[0], dst.shape()[1], dst.shape()[2], dst.shape()[3]);
    let plane = h * w;
    for ch in 0..n {
        let start = (ch * uc + u) * plane;
        dst.data_mut()[start..start + plane].copy_from_slice(&src.data()[ch * plane..(ch + 1) * plane]);
    }
}

/// Canonical weights and bias of one Gabor-orientation convolution, plus the
/// fixed Gabor kernels `[U][k][k]` they are modulated with.
#[derive(Clone, Debug, PartialEq)]
pub struct GofWeights {
    pub canonical: Tensor,
    pub gabor: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl GofWeights {
    pub fn new(canonical: Tensor, bank: &GaborBank, scale_index: usize, bias: Option<Vec<f64>>) -> Result<Self> {
        check_canonical(&canonical, bank.kernel_size())?;
        Ok(Self {
            canonical,
            gabor: bank.scale(scale_index)?,
            bias,
        })
    }
}

fn gof_raw_forward(input: &Tensor, canonical: &Tensor, gabor: &Tensor, bias: Option<&[f64]>, win: Window) -> Result<Tensor> {
    let u_count = gabor.shape()[0];
    let kk = gabor.len() / u_count;
    if input.rank() != 4 || input.shape()[1] != u_count {
        return Err(Error::Shape(format!(
            "GOF input {:?} does not carry {u_count} orientations",
            input.shape()
        )));
    }
    let mut out: Option<Tensor> = None;
    for u in 0..u_count {
        let xu = orientation_slice(input, u);
        let wu = modulate_one(canonical, &gabor.data()[u * kk..(u + 1) * kk]);
        let yu = kernels::conv2d_forward(&xu, &wu, bias, win)?;
        let dst = out.get_or_insert_with(|| {
            Tensor::zeros(&[yu.shape()[0], u_count, yu.shape()[1], yu.shape()[2]])
        });
        scatter_orientation(dst, u, &yu);
    }
    out.ok_or_else(|| Error::Shape("no orientations".into()))
}

fn gof_raw_backward(
    input: &Tensor,
    canonical: &Tensor,
    gabor: &Tensor,
    grad_out: &Tensor,
    win: Window,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let u_count = gabor.shape()[0];
    let kk = gabor.len() / u_count;
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(canonical.shape());
    let mut gb = vec![0.0; canonical.shape()[0]];
    for u in 0..u_count {
        let g_u = &gabor.data()[u * kk..(u + 1) * kk];
        let xu = orientation_slice(input, u);
        let wu = modulate_one(canonical, g_u);
        let go = orientation_slice(grad_out, u);
        let (gxu, gwu, gbu) = kernels::conv2d_backward(&xu, &wu, &go, win)?;
        scatter_orientation(&mut gx, u, &gxu);
        for (i, (acc, d)) in gw.data_mut().iter_mut().zip(gwu.data()).enumerate() {
            *acc += d * g_u[i % kk];
        }
        for (acc, d) in gb.iter_mut().zip(gbu) {
            *acc += d;
        }
    }
    Ok((gx, gw, gb))
}

/// Gabor-orientation convolution `[N][U][H][W] → [O][U][H'][W']`.
pub fn gof_conv_forward(input: &OrientedFeatureMap, weights: &GofWeights, win: Window) -> Result<OrientedFeatureMap> {
    if weights.canonical.shape()[1] != input.channels() {
        return Err(Error::Shape(format!(
            "GOF weights expect {} input channels, got {}",
            weights.canonical.shape()[1],
            input.channels()
        )));
    }
    let out = gof_raw_forward(
        input.tensor(),
        &weights.canonical,
        &weights.gabor,
        weights.bias.as_deref(),
        win,
    )?;
    OrientedFeatureMap::new(out)
}

/// Gradients of [`gof_conv_forward`] for input, canonical weights and bias.
pub fn gof_conv_backward(
    input: &OrientedFeatureMap,
    weights: &GofWeights,
    grad_out: &Tensor,
    win: Window,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    gof_raw_backward(input.tensor(), &weights.canonical, &weights.gabor, grad_out, win)
}

/// Tape version of [`gof_conv_forward`]; `gabor` is the `[U][k][k]` slice.
pub fn gof_conv(tape: &Tape, x: Var, canonical: Var, gabor: Rc<Tensor>, bias: Option<Var>, win: Window) -> Result<Var> {
    let vx = tape.value(x);
    let vw = tape.value(canonical);
    if vw.rank() != 4 || vw.shape()[1] != vx.shape()[0] {
        return Err(Error::Shape(format!(
            "GOF weights {:?} vs input {:?}",
            vw.shape(),
            vx.shape()
        )));
    }
    let vb = bias.map(|b| tape.value(b));
    let out = gof_raw_forward(&vx, &vw, &gabor, vb.as_ref().map(|t| t.data()), win)?;
    let mut parents = vec![x, canonical];
    parents.extend(bias);
    let has_bias = bias.is_some();
    Ok(tape.custom(&parents, out, move |g| {
        let (gx, gw, gb) = gof_raw_backward(&vx, &vw, &gabor, g, win)?;
        let mut grads = vec![gx, gw];
        if has_bias {
            let n = gb.len();
            grads.push(Tensor::new(&[n], gb)?);
        }
        Ok(grads)
    }))
}
