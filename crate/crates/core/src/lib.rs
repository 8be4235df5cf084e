//! Scene-text detection with Gabor-orientation-modulated convolutions.
//!
//! The network runs an orientation-expanded residual encoder, a multi-row
//! feature representation block, a multi-scale refinement module (channel
//! attention, four-direction IRNN, pairwise message aggregation), a
//! transposed-convolution decoder and a score/geometry head. Around it sit
//! ground-truth encoding, box decoding with locality-aware NMS, a curriculum
//! data pipeline with blur and occlusion augmentation, momentum training,
//! checkpoints and ICDAR-style evaluation.

pub mod autograd;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod frb;
pub mod gabor;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod kernels;
pub mod layers;
pub mod mfrm;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{FlatFeatureMap, ImageTensor, OrientedFeatureMap, Tensor};
