//! Transposed-convolution decoder with additive skip merges.
//!
//! Each stage is a 3×3 transposed convolution (stride = the stage's
//! upsample factor) followed by norm and ReLU. After the stages listed in
//! `merge_after`, a skip feature is flattened over orientations, reduced by a
//! pointwise convolution and added to the running map.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Window;
use crate::layers::{Conv, ConvWeights, Deconv};
use crate::mfrm::concat_op;
use crate::params::ParamStore;
use crate::tensor::{FlatFeatureMap, OrientedFeatureMap};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Output width of each stage, strictly decreasing.
    pub channels: Vec<usize>,
    /// Spatial upsample factor of each stage (1 or 2).
    pub factors: Vec<usize>,
    /// Stage indices followed by a skip merge, in skip order.
    pub merge_after: Vec<usize>,
    pub norm: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![48, 32, 24, 16],
            factors: vec![1, 2, 1, 1],
            merge_after: vec![0, 1],
            norm: true,
        }
    }
}

impl DecoderConfig {
    pub fn full_scale() -> Self {
        Self {
            channels: vec![256, 128, 64, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.factors.len() {
            return Err(Error::Config("decoder channels and factors must align".into()));
        }
        if self.channels.windows(2).any(|w| w[1] >= w[0]) || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "decoder ladder must be strictly decreasing, got {:?}",
                self.channels
            )));
        }
        if self.factors.iter().any(|&f| f != 1 && f != 2) {
            return Err(Error::Config("decoder factors must be 1 or 2".into()));
        }
        if self.merge_after.windows(2).any(|w| w[1] <= w[0])
            || self.merge_after.iter().any(|&m| m >= self.channels.len())
        {
            return Err(Error::Config("decoder merge points must be increasing stage indices".into()));
        }
        Ok(())
    }

    /// Overall upsampling from the aggregated map to the output.
    pub fn total_upsample(&self) -> usize {
        self.factors.iter().product()
    }

    /// Spatial size after each stage for an `h×w` input.
    pub fn stage_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        self.factors
            .iter()
            .map(|f| {
                h *= f;
                w *= f;
                (h, w)
            })
            .collect()
    }
}

/// `current + reduce(concat_orientations(skip))`.
pub fn merge_op(tape: &Tape, current: Var, skip: Var, reduce_w: Var, reduce_b: Option<Var>) -> Result<Var> {
    let (cs, ss) = (tape.shape(current), tape.shape(skip));
    if ss.len() != 4 || cs[1..] != ss[2..] {
        return Err(Error::Shape(format!("skip {ss:?} does not match current {cs:?}")));
    }
    let flat = concat_op(tape, skip)?;
    let red = tape.conv2d(flat, reduce_w, reduce_b, Window::new(1, 1, 0))?;
    tape.add(current, red)
}

pub fn merge_point(current: &FlatFeatureMap, skip: &OrientedFeatureMap, reduce: &ConvWeights) -> Result<FlatFeatureMap> {
    let tape = Tape::new();
    let c = tape.leaf(current.tensor().clone());
    let s = tape.leaf(skip.tensor().clone());
    let (w, b) = reduce.on_tape(&tape);
    let out = merge_op(&tape, c, s, w, b)?;
    FlatFeatureMap::new((*tape.value(out)).clone())
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub stages: Vec<Deconv>,
    pub merges: Vec<Conv>,
}

impl Decoder {
    /// `skip_channels[i]` is `N·U` of the i-th skip.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: &DecoderConfig,
        c_in: usize,
        skip_channels: &[usize],
    ) -> Result<Self> {
        config.validate()?;
        if skip_channels.len() != config.merge_after.len() {
            return Err(Error::Config(format!(
                "{} skips for {} merge points",
                skip_channels.len(),
                config.merge_after.len()
            )));
        }
        let mut width = c_in;
        let stages = config
            .channels
            .iter()
            .zip(&config.factors)
            .enumerate()
            .map(|(i, (&c, &f))| {
                let d = Deconv::new(store, rng, &format!("decoder.deconv{}", i + 1), width, c, f, config.norm);
                width = c;
                d
            })
            .collect();
        let merges = config
            .merge_after
            .iter()
            .zip(skip_channels)
            .enumerate()
            .map(|(m, (&stage, &sc))| {
                Conv::pointwise(store, rng, &format!("decoder.merge{}", m + 1), sc, config.channels[stage])
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            stages,
            merges,
        })
    }

    pub fn out_channels(&self) -> usize {
        *self.config.channels.last().expect("validated")
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, agg: Var, skips: &[Var]) -> Result<Var> {
        if skips.len() != self.merges.len() {
            return Err(Error::Shape(format!(
                "decoder expects {} skips, got {}",
                self.merges.len(),
                skips.len()
            )));
        }
        let mut x = agg;
        let mut next_merge = 0;
        for (i, stage) in self.stages.iter().enumerate() {
            let y = stage.forward(tape, store, x)?;
            x = tape.relu(y);
            if self.config.merge_after.get(next_merge) == Some(&i) {
                let conv = &self.merges[next_merge];
                let w = tape.param(store, conv.weight);
                let b = conv.bias.map(|b| tape.param(store, b));
                x = merge_op(tape, x, skips[next_merge], w, b)?;
                next_merge += 1;
            }
        }
        Ok(x)
    }

    pub fn decode_features(
        &self,
        store: &ParamStore,
        agg: &FlatFeatureMap,
        skips: &[OrientedFeatureMap],
    ) -> Result<FlatFeatureMap> {
        let tape = Tape::new();
        let a = tape.leaf(agg.tensor().clone());
        let s: Vec<Var> = skips.iter().map(|k| tape.leaf(k.tensor().clone())).collect();
        let out = self.forward(&tape, store, a, &s)?;
        FlatFeatureMap::new((*tape.value(out)).clone())
    }
}
