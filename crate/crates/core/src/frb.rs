//! Feature Representation Block: rows of Gabor convolutions, one kernel
//! size per row, with the feature downsampled between rows.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::gabor::GaborBank;
use crate::layers::GofConv;
use crate::params::ParamStore;
use crate::tensor::OrientedFeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsample {
    /// The first convolution of the next row runs with stride = factor.
    StridedConv,
    /// Average pooling by `factor` before the next row.
    AvgPool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrbConfig {
    pub rows: usize,
    pub layers_per_row: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub downsample_factor: usize,
    pub downsample: Downsample,
    pub channels: usize,
    pub norm: bool,
}

impl Default for FrbConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            layers_per_row: vec![2, 2, 2],
            kernel_sizes: vec![7, 5, 3],
            downsample_factor: 2,
            downsample: Downsample::StridedConv,
            channels: 32,
            norm: true,
        }
    }
}

impl FrbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 {
            return Err(Error::Config("FRB needs at least 2 rows".into()));
        }
        if self.kernel_sizes.len() != self.rows || self.layers_per_row.len() != self.rows {
            return Err(Error::Config(format!(
                "FRB has {} rows but {} kernel sizes and {} layer counts",
                self.rows,
                self.kernel_sizes.len(),
                self.layers_per_row.len()
            )));
        }
        if self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("FRB kernel sizes must be odd".into()));
        }
        if self.layers_per_row.contains(&0) {
            return Err(Error::Config("every FRB row needs a layer".into()));
        }
        if self.downsample_factor < 2 {
            return Err(Error::Config("FRB downsample factor must be ≥ 2".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("FRB channel count must be positive".into()));
        }
        Ok(())
    }

    /// Receptive field of each row's output, in FRB-input pixels.
    pub fn receptive_fields(&self) -> Vec<usize> {
        let mut rf = 1;
        let mut jump = 1;
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let k = self.kernel_sizes[r];
            let mut convs = self.layers_per_row[r];
            if r > 0 {
                match self.downsample {
                    Downsample::StridedConv => {
                        rf += (k - 1) * jump;
                        jump *= self.downsample_factor;
                        convs -= 1;
                    }
                    Downsample::AvgPool => {
                        rf += (self.downsample_factor - 1) * jump;
                        jump *= self.downsample_factor;
                    }
                }
            }
            rf += convs * (k - 1) * jump;
            out.push(rf);
        }
        out
    }

    /// Total spatial reduction from the first row to the last.
    pub fn total_reduction(&self) -> usize {
        self.downsample_factor.pow(self.rows as u32 - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrbOutput {
    /// Last Gabor layer of each row, finest first.
    pub scale_features: Vec<OrientedFeatureMap>,
}

#[derive(Clone, Debug)]
pub struct Frb {
    pub config: FrbConfig,
    pub rows: Vec<Vec<GofConv>>,
}

impl Frb {
    /// `banks` maps kernel size to a Gabor bank; `c_in` is the incoming width.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: &FrbConfig,
        c_in: usize,
        banks: &BTreeMap<usize, GaborBank>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rows = Vec::with_capacity(config.rows);
        let mut width = c_in;
        for r in 0..config.rows {
            let k = config.kernel_sizes[r];
            let bank = banks
                .get(&k)
                .ok_or_else(|| Error::Config(format!("no Gabor bank for kernel size {k}")))?;
            let mut row = Vec::new();
            for l in 0..config.layers_per_row[r] {
                let stride = if r > 0 && l == 0 && config.downsample == Downsample::StridedConv {
                    config.downsample_factor
                } else {
                    1
                };
                row.push(GofConv::new(
                    store,
                    rng,
                    &format!("frb.row{}.layer{}", r + 1, l + 1),
                    width,
                    config.channels,
                    bank,
                    bank.scales() - 1,
                    stride,
                    config.norm,
                )?);
                width = config.channels;
            }
            rows.push(row);
        }
        Ok(Self {
            config: config.clone(),
            rows,
        })
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let red = self.config.total_reduction();
        if height < red || width < red || height % red != 0 || width % red != 0 {
            return Err(Error::Shape(format!(
                "{height}x{width} cannot be downsampled {} times by {}",
                self.config.rows - 1,
                self.config.downsample_factor
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(x);
        self.check_input(shape[2], shape[3])?;
        let mut outs = Vec::with_capacity(self.rows.len());
        let mut cur = x;
        for (r, row) in self.rows.iter().enumerate() {
            if r > 0 && self.config.downsample == Downsample::AvgPool {
                cur = tape.avg_pool(cur, self.config.downsample_factor)?;
            }
            for layer in row {
                let y = layer.forward(tape, store, cur)?;
                cur = tape.relu(y);
            }
            outs.push(cur);
        }
        Ok(outs)
    }

    pub fn frb_forward(&self, store: &ParamStore, f: &OrientedFeatureMap) -> Result<FrbOutput> {
        let tape = Tape::new();
        let x = tape.leaf(f.tensor().clone());
        let outs = self.forward(&tape, store, x)?;
        Ok(FrbOutput {
            scale_features: outs
                .into_iter()
                .map(|v| OrientedFeatureMap::new((*tape.value(v)).clone()))
                .collect::<Result<_>>()?,
        })
    }
}
