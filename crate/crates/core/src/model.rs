//! The full detector: encoder → FRB → MFRM → decoder → head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::decoder::{Decoder, DecoderConfig};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::frb::{Downsample, Frb, FrbConfig};
use crate::gabor::{build_gabor_bank, GaborBank, GaborParams};
use crate::head::{collect_output, loss_op, Head, HeadConfig, HeadOutput, HeadVars, LossBreakdown, LossWeights, ScoreLossKind, Targets};
use crate::mfrm::{Mfrm, MfrmConfig};
use crate::params::ParamStore;
use crate::tensor::{ImageTensor, Tensor};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub orientations: usize,
    pub scales: usize,
    pub encoder_widths: [usize; 3],
    /// FRB / MFRM channel count `N`.
    pub channels: usize,
    pub frb_kernel_sizes: Vec<usize>,
    pub frb_layers_per_row: Vec<usize>,
    pub frb_downsample: Downsample,
    pub decoder_channels: Vec<usize>,
    pub norm: bool,
    pub max_distance: f64,
    pub quad_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            orientations: 4,
            scales: 4,
            encoder_widths: [16, 32, 64],
            channels: 32,
            frb_kernel_sizes: vec![7, 5, 3],
            frb_layers_per_row: vec![2, 2, 2],
            frb_downsample: Downsample::StridedConv,
            decoder_channels: vec![48, 32, 24, 16],
            norm: true,
            max_distance: 128.0,
            quad_scale: 32.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orientations == 0 {
            return Err(Error::Config("orientations must be ≥ 1".into()));
        }
        if self.scales < 3 {
            return Err(Error::Config("the encoder needs at least 3 Gabor scales".into()));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        self.frb_config().validate()?;
        self.decoder_config().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            orientations: self.orientations,
            widths: self.encoder_widths,
            blocks_per_stage: 2,
            norm: self.norm,
        }
    }

    pub fn frb_config(&self) -> FrbConfig {
        FrbConfig {
            rows: self.frb_kernel_sizes.len(),
            layers_per_row: self.frb_layers_per_row.clone(),
            kernel_sizes: self.frb_kernel_sizes.clone(),
            downsample_factor: 2,
            downsample: self.frb_downsample,
            channels: self.channels,
            norm: self.norm,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let n = self.decoder_channels.len();
        let mut factors = vec![1; n];
        if n > 1 {
            factors[1] = 2;
        }
        DecoderConfig {
            channels: self.decoder_channels.clone(),
            factors,
            merge_after: vec![0, 1.min(n - 1)],
            norm: self.norm,
        }
    }

    /// Input-image pixels per output-map pixel.
    pub fn output_stride(&self) -> usize {
        Encoder::STRIDE / self.decoder_config().total_upsample()
    }
}

/// Gabor banks keyed by kernel size.
pub fn gabor_banks(orientations: usize, scales: usize, kernel_sizes: &[usize]) -> Result<BTreeMap<usize, GaborBank>> {
    let mut banks = BTreeMap::new();
    for &k in kernel_sizes.iter().chain(std::iter::once(&3)) {
        if !banks.contains_key(&k) {
            banks.insert(k, build_gabor_bank(&GaborParams::new(orientations, scales, k))?);
        }
    }
    Ok(banks)
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub frb: Frb,
    pub mfrm: Mfrm,
    pub decoder: Decoder,
    pub head: Head,
}

impl Detector {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let banks = gabor_banks(config.orientations, config.scales, &config.frb_kernel_sizes)?;
        let encoder = Encoder::new(&mut store, &mut rng, &config.encoder_config(), &banks[&3])?;
        let frb = Frb::new(&mut store, &mut rng, &config.frb_config(), config.encoder_widths[2], &banks)?;
        let mfrm = Mfrm::new(
            &mut store,
            &mut rng,
            &MfrmConfig {
                channels: config.channels,
                orientations: config.orientations,
                scales: config.frb_kernel_sizes.len(),
                norm: config.norm,
            },
        )?;
        let u = config.orientations;
        let decoder = Decoder::new(
            &mut store,
            &mut rng,
            &config.decoder_config(),
            config.channels,
            &[config.channels * u, config.encoder_widths[1] * u],
        )?;
        let head = Head::new(
            &mut store,
            &mut rng,
            &HeadConfig {
                in_channels: decoder.out_channels(),
                max_distance: config.max_distance,
                quad_scale: config.quad_scale,
            },
        )?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            frb,
            mfrm,
            decoder,
            head,
        })
    }

    /// Records the whole network for one image.
    pub fn forward(&self, tape: &Tape, image: &ImageTensor) -> Result<HeadVars> {
        let x = tape.leaf(image.tensor().clone());
        let enc = self.encoder.forward(tape, &self.store, x)?;
        let rows = self.frb.forward(tape, &self.store, enc.conv3_2)?;
        let agg = self.mfrm.forward(tape, &self.store, &rows)?;
        let dec = self.decoder.forward(tape, &self.store, agg, &[rows[0], enc.skip4])?;
        self.head.forward(tape, &self.store, dec)
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<HeadOutput> {
        let tape = Tape::new();
        let out = self.forward(&tape, image)?;
        let out = collect_output(&tape, &out);
        if !(out.score.0.is_finite() && out.rbox.distances.is_finite() && out.quad.offsets.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Loss and per-parameter gradients (store order) for one sample.
    pub fn loss_and_gradients(
        &self,
        image: &ImageTensor,
        targets: &Targets,
        weights: &LossWeights,
        score_kind: ScoreLossKind,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let tape = Tape::new();
        let out = self.forward(&tape, image)?;
        let (root, parts) = loss_op(&tape, &out, targets, weights, score_kind)?;
        if !parts.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {parts:?}")));
        }
        let grads = tape.backward(root)?;
        let per_param = self
            .store
            .ids()
            .map(|id| match grads.param(id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.store.get(id).shape()),
            })
            .collect();
        Ok((parts, per_param))
    }
}
