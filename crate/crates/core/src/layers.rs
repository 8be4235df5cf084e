//! Parameterised layers: thin structs of [`ParamId`]s that replay
//! themselves onto a [`Tape`].

use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::gabor::{gof_conv, GaborBank};
use crate::kernels::Window;
use crate::params::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Plain weights for a (possibly transposed) convolution, detached from any store.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvWeights {
    pub fn new(weight: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let bias = match bias {
            Some(b) => {
                let n = b.len();
                Some(Tensor::new(&[n], b)?)
            }
            None => None,
        };
        Ok(Self { weight, bias })
    }

    /// `[O][C][1][1]` weights that copy channel `i` to output `i`.
    pub fn identity(channels: usize) -> Self {
        let mut w = Tensor::zeros(&[channels, channels, 1, 1]);
        for c in 0..channels {
            w.set(&[c, c, 0, 0], 1.0);
        }
        Self { weight: w, bias: None }
    }

    pub fn zeros(c_out: usize, c_in: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_out, c_in, kernel, kernel]),
            bias: None,
        }
    }

    pub fn on_tape(&self, tape: &Tape) -> (Var, Option<Var>) {
        (
            tape.leaf(self.weight.clone()),
            self.bias.as_ref().map(|b| tape.leaf(b.clone())),
        )
    }
}

/// Per-channel normalisation with learned scale and shift.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.channel_norm(x, g, b, NORM_EPS)
    }
}

/// Gabor-orientation-modulated convolution, optional norm.
#[derive(Clone, Debug)]
pub struct GofConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub norm: Option<Norm>,
    gabor: Tensor,
    pub window: Window,
}

impl GofConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        bank: &GaborBank,
        scale_index: usize,
        stride: usize,
        norm: bool,
    ) -> Result<Self> {
        let k = bank.kernel_size();
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
        );
        let (bias, norm) = if norm {
            (None, Some(Norm::new(store, &format!("{name}.norm"), c_out)))
        } else {
            (Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))), None)
        };
        Ok(Self {
            weight,
            bias,
            norm,
            gabor: bank.scale(scale_index.min(bank.scales() - 1))?,
            window: Window::new(k, stride, k / 2),
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        let y = gof_conv(tape, x, w, Rc::new(self.gabor.clone()), b, self.window)?;
        match &self.norm {
            Some(n) => n.forward(tape, store, y),
            None => Ok(y),
        }
    }
}

/// Plain convolution on `[C][H][W]`, optional norm.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub norm: Option<Norm>,
    pub window: Window,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        window: Window,
        norm: bool,
    ) -> Self {
        let k = window.kernel;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
        );
        let (bias, norm) = if norm {
            (None, Some(Norm::new(store, &format!("{name}.norm"), c_out)))
        } else {
            (Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))), None)
        };
        Self {
            weight,
            bias,
            norm,
            window,
        }
    }

    pub fn pointwise(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        Self::new(store, rng, name, c_in, c_out, Window::new(1, 1, 0), false)
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        let y = tape.conv2d(x, w, b, self.window)?;
        match &self.norm {
            Some(n) => n.forward(tape, store, y),
            None => Ok(y),
        }
    }

    pub fn weights(&self, store: &ParamStore) -> ConvWeights {
        ConvWeights {
            weight: store.get(self.weight).clone(),
            bias: self.bias.map(|b| store.get(b).clone()),
        }
    }
}

/// Transposed 3×3 convolution, optional norm.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub norm: Option<Norm>,
    pub window: Window,
    pub output_padding: usize,
}

impl Deconv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        factor: usize,
        norm: bool,
    ) -> Self {
        let k = 3;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_in, c_out, k, k], c_in * k * k / (factor * factor), rng),
        );
        let (bias, norm) = if norm {
            (None, Some(Norm::new(store, &format!("{name}.norm"), c_out)))
        } else {
            (Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))), None)
        };
        Self {
            weight,
            bias,
            norm,
            window: Window::new(k, factor, 1),
            output_padding: factor - 1,
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        let y = tape.deconv2d(x, w, b, self.window, self.output_padding)?;
        match &self.norm {
            Some(n) => n.forward(tape, store, y),
            None => Ok(y),
        }
    }
}
