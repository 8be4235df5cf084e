//! Orientation expansion and the Gabor-modulated residual encoder.
//!
//! Stage layout (strides relative to the input image):
//!
//! | stage | blocks            | stride | emits            |
//! |-------|-------------------|--------|------------------|
//! | stem  | GOF 3×3, s2       | 2      |                  |
//! | conv2 | 2 residual blocks | 4      | skip at stride 4 |
//! | conv3 | 2 residual blocks | 8      | conv3_1 skip, conv3_2 |

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::gabor::GaborBank;
use crate::layers::GofConv;
use crate::params::ParamStore;
use crate::tensor::{ImageTensor, OrientedFeatureMap, Tensor};

/// Replicate a `[3][H][W]` image into `[3][U][H][W]`.
pub fn expand_orientation_channels(image: &ImageTensor, orientations: usize) -> Result<OrientedFeatureMap> {
    OrientedFeatureMap::new(expand_tensor(image.tensor(), orientations)?)
}

fn expand_tensor(t: &Tensor, orientations: usize) -> Result<Tensor> {
    if orientations == 0 {
        return Err(Error::InvalidParam("orientation count must be ≥ 1".into()));
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let plane = h * w;
    let mut data = Vec::with_capacity(c * orientations * plane);
    for ch in 0..c {
        let src = &t.data()[ch * plane..(ch + 1) * plane];
        for _ in 0..orientations {
            data.extend_from_slice(src);
        }
    }
    Tensor::new(&[c, orientations, h, w], data)
}

/// Tape version of [`expand_orientation_channels`] for `[C][H][W]` inputs.
pub fn expand_op(tape: &Tape, x: Var, orientations: usize) -> Result<Var> {
    let vx = tape.value(x);
    let out = expand_tensor(&vx, orientations)?;
    let shape = vx.shape().to_vec();
    Ok(tape.custom(&[x], out, move |g| {
        let plane = shape[1] * shape[2];
        let mut gx = Tensor::zeros(&shape);
        for ch in 0..shape[0] {
            for u in 0..orientations {
                let src = &g.data()[(ch * orientations + u) * plane..(ch * orientations + u + 1) * plane];
                for (d, s) in gx.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(vec![gx])
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub orientations: usize,
    /// Widths of stem/conv2 and conv3 stages: `[stem, conv2, conv3]`.
    pub widths: [usize; 3],
    pub blocks_per_stage: usize,
    pub norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            orientations: 4,
            widths: [16, 32, 64],
            blocks_per_stage: 2,
            norm: true,
        }
    }
}

/// Two GOF 3×3 convolutions with a residual connection; a pointwise GOF
/// projection replaces the identity when stride or width changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: GofConv,
    pub conv2: GofConv,
    pub shortcut: Option<GofConv>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        bank: &GaborBank,
        scale_index: usize,
        norm: bool,
    ) -> Result<Self> {
        let conv1 = GofConv::new(store, rng, &format!("{name}.conv1"), c_in, c_out, bank, scale_index, stride, norm)?;
        let conv2 = GofConv::new(store, rng, &format!("{name}.conv2"), c_out, c_out, bank, scale_index, 1, norm)?;
        let shortcut = if stride != 1 || c_in != c_out {
            let point = GaborBank::pointwise(bank.orientations());
            Some(GofConv::new(store, rng, &format!("{name}.shortcut"), c_in, c_out, &point, 0, stride, norm)?)
        } else {
            None
        };
        Ok(Self { conv1, conv2, shortcut })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, store, x)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, store, y)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(tape, store, x)?,
            None => x,
        };
        let sum = tape.add(y, s)?;
        Ok(tape.relu(sum))
    }
}

/// Values of the encoder outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub conv3_2: Var,
    pub skip4: Var,
    pub skip8: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub conv3_2: OrientedFeatureMap,
    /// Skip features at strides 4 and 8, in that order.
    pub skips: Vec<OrientedFeatureMap>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub stem: GofConv,
    pub conv2: Vec<ResidualBlock>,
    pub conv3: Vec<ResidualBlock>,
}

impl Encoder {
    pub const STRIDE: usize = 8;

    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &EncoderConfig, bank: &GaborBank) -> Result<Self> {
        if config.blocks_per_stage < 2 {
            return Err(Error::Config("encoder needs at least 2 blocks per stage".into()));
        }
        if bank.orientations() != config.orientations {
            return Err(Error::Config("Gabor bank orientation count differs from encoder".into()));
        }
        let [w0, w1, w2] = config.widths;
        let stem = GofConv::new(store, rng, "encoder.stem", 3, w0, bank, 0, 2, config.norm)?;
        let mut conv2 = Vec::new();
        let mut conv3 = Vec::new();
        for b in 0..config.blocks_per_stage {
            let (c_in, stride) = if b == 0 { (w0, 2) } else { (w1, 1) };
            conv2.push(ResidualBlock::new(
                store,
                rng,
                &format!("encoder.conv2_{}", b + 1),
                c_in,
                w1,
                stride,
                bank,
                1,
                config.norm,
            )?);
        }
        for b in 0..config.blocks_per_stage {
            let (c_in, stride) = if b == 0 { (w1, 2) } else { (w2, 1) };
            conv3.push(ResidualBlock::new(
                store,
                rng,
                &format!("encoder.conv3_{}", b + 1),
                c_in,
                w2,
                stride,
                bank,
                2,
                config.norm,
            )?);
        }
        Ok(Self {
            config: config.clone(),
            stem,
            conv2,
            conv3,
        })
    }

    /// Check an input size: multiples of 32 and at least 32×32.
    pub fn check_input(height: usize, width: usize) -> Result<()> {
        if height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0 {
            return Err(Error::Shape(format!(
                "image must be at least 32x32 with sides divisible by 32, got {height}x{width}"
            )));
        }
        Ok(())
    }

    /// `image` is a `[3][H][W]` tape value.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, image: Var) -> Result<EncoderVars> {
        let shape = tape.shape(image);
        Self::check_input(shape[1], shape[2])?;
        let x = expand_op(tape, image, self.config.orientations)?;
        let x = self.stem.forward(tape, store, x)?;
        let mut x = tape.relu(x);
        for block in &self.conv2 {
            x = block.forward(tape, store, x)?;
        }
        let skip4 = x;
        let mut skip8 = None;
        for block in &self.conv3 {
            x = block.forward(tape, store, x)?;
            skip8.get_or_insert(x);
        }
        Ok(EncoderVars {
            conv3_2: x,
            skip4,
            skip8: skip8.expect("conv3 has blocks"),
        })
    }

    pub fn encode(&self, store: &ParamStore, image: &ImageTensor) -> Result<EncoderOutput> {
        let tape = Tape::new();
        let x = tape.leaf(image.tensor().clone());
        let out = self.forward(&tape, store, x)?;
        let get = |v: Var| OrientedFeatureMap::new((*tape.value(v)).clone());
        Ok(EncoderOutput {
            conv3_2: get(out.conv3_2)?,
            skips: vec![get(out.skip4)?, get(out.skip8)?],
        })
    }
}
