//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{CurriculumSchedule, CurriculumStage, DifficultyWeights};
use crate::error::{Error, Result};
use crate::frb::Downsample;
use crate::head::{LossWeights, ScoreLossKind};
use crate::model::ModelConfig;

/// Which geometry branch produces boxes at detection time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Rbox,
    Quad,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectOptions {
    pub score_threshold: f64,
    pub merge_iou: f64,
    pub nms_iou: f64,
    pub geometry: GeometryKind,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            score_threshold: 0.8,
            merge_iou: 0.5,
            nms_iou: 0.3,
            geometry: GeometryKind::Rbox,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_steps: usize,
    pub decay_factor: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            momentum: 0.9,
            decay_steps: 15_000,
            decay_factor: 10.0,
            grad_clip: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub score_loss: ScoreLossKind,
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub curriculum: CurriculumSchedule,
    pub difficulty: DifficultyWeights,
    pub shrink: f64,
    pub seed: u64,
    pub data_seed: u64,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub detect: DetectOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let iterations = 500;
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            score_loss: ScoreLossKind::Dice,
            optimizer: OptimizerConfig::default(),
            iterations,
            batch_size: 4,
            curriculum: default_curriculum(iterations, true).expect("valid default"),
            difficulty: DifficultyWeights::default(),
            shrink: crate::geometry::DEFAULT_SHRINK,
            seed: 1,
            data_seed: 2,
            manifest: None,
            out_dir: PathBuf::from("run"),
            checkpoint_every: 0,
            log_every: 10,
            detect: DetectOptions::default(),
        }
    }
}

pub const DEFAULT_BLUR: [f64; 3] = [0.0, 0.10, 0.25];
pub const DEFAULT_MASK: [f64; 3] = [0.0, 0.05, 0.10];
pub const DEFAULT_CUTOFF: [f64; 3] = [0.6, 0.8, 1.0];

fn default_curriculum(iterations: usize, enabled: bool) -> Result<CurriculumSchedule> {
    if enabled {
        CurriculumSchedule::three_stage(iterations, DEFAULT_MASK, DEFAULT_CUTOFF)
    } else {
        Ok(CurriculumSchedule::disabled())
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {key}", n + 1));
        }
    }
    Ok(map)
}

struct Pairs {
    map: BTreeMap<String, String>,
}

impl Pairs {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true" | "on" | "yes" | "1") => Ok(true),
            Some("false" | "off" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
        }
    }
}

fn three<T: Copy>(key: &str, v: Vec<T>) -> Result<[T; 3]> {
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected exactly 3 values")))
}

/// Model keys shared by run configs and checkpoint headers.
fn read_model(p: &mut Pairs) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let m = ModelConfig {
        orientations: p.num("orientations", d.orientations)?,
        scales: p.num("scales", d.scales)?,
        encoder_widths: match p.list("encoder_widths")? {
            Some(v) => three("encoder_widths", v)?,
            None => d.encoder_widths,
        },
        channels: p.num("channels", d.channels)?,
        frb_kernel_sizes: p.list("frb_kernel_sizes")?.unwrap_or(d.frb_kernel_sizes),
        frb_layers_per_row: p.list("frb_layers_per_row")?.unwrap_or(d.frb_layers_per_row),
        frb_downsample: match p.take("frb_downsample").as_deref() {
            None | Some("strided") => Downsample::StridedConv,
            Some("avgpool") => Downsample::AvgPool,
            Some(v) => return Err(Error::Config(format!("frb_downsample: unknown {v:?}"))),
        },
        decoder_channels: p.list("decoder_channels")?.unwrap_or(d.decoder_channels),
        norm: p.flag("norm", d.norm)?,
        max_distance: p.num("max_distance", d.max_distance)?,
        quad_scale: p.num("quad_scale", d.quad_scale)?,
    };
    m.validate()?;
    Ok(m)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// `key=value` lines that [`model_config_from_text`] reads back exactly.
pub fn model_config_to_text(m: &ModelConfig) -> String {
    let down = match m.frb_downsample {
        Downsample::StridedConv => "strided",
        Downsample::AvgPool => "avgpool",
    };
    format!(
        "orientations={}\nscales={}\nencoder_widths={}\nchannels={}\nfrb_kernel_sizes={}\nfrb_layers_per_row={}\n\
         frb_downsample={down}\ndecoder_channels={}\nnorm={}\nmax_distance={:?}\nquad_scale={:?}\n",
        m.orientations,
        m.scales,
        join(&m.encoder_widths),
        m.channels,
        join(&m.frb_kernel_sizes),
        join(&m.frb_layers_per_row),
        join(&m.decoder_channels),
        m.norm,
        m.max_distance,
        m.quad_scale,
    )
}

pub fn model_config_from_text(text: &str) -> Result<ModelConfig> {
    let map = parse_pairs(text).map_err(Error::Config)?;
    let mut p = Pairs { map };
    let m = read_model(&mut p)?;
    if let Some(k) = p.map.keys().next() {
        return Err(Error::Config(format!("unknown model key {k:?}")));
    }
    Ok(m)
}

impl RunConfig {
    /// Parse a config; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let map = parse_pairs(text).map_err(Error::Config)?;
        let mut p = Pairs { map };
        let d = RunConfig::default();
        let model = read_model(&mut p)?;
        let loss = LossWeights {
            geometry: p.num("lambda_g", d.loss.geometry)?,
            angle: p.num("lambda_theta", d.loss.angle)?,
        };
        loss.validate()?;
        let score_loss = match p.take("score_loss").as_deref() {
            None | Some("dice") => ScoreLossKind::Dice,
            Some("bce") => ScoreLossKind::BalancedCrossEntropy,
            Some(v) => return Err(Error::Config(format!("score_loss: unknown {v:?}"))),
        };
        let optimizer = OptimizerConfig {
            learning_rate: p.num("lr", d.optimizer.learning_rate)?,
            momentum: p.num("momentum", d.optimizer.momentum)?,
            decay_steps: p.num("lr_decay_steps", d.optimizer.decay_steps)?,
            decay_factor: p.num("lr_decay_factor", d.optimizer.decay_factor)?,
            grad_clip: p.num("grad_clip", d.optimizer.grad_clip)?,
        };
        if !(optimizer.learning_rate > 0.0)
            || !(0.0..1.0).contains(&optimizer.momentum)
            || optimizer.decay_steps == 0
            || !(optimizer.decay_factor >= 1.0)
            || !(optimizer.grad_clip >= 0.0)
        {
            return Err(Error::Config(format!("optimizer settings out of range: {optimizer:?}")));
        }
        let iterations = p.num("iterations", d.iterations)?;
        let batch_size = p.num("batch_size", d.batch_size)?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let enabled = p.flag("curriculum", true)?;
        let curriculum = if enabled {
            let blur = p.list::<f64>("blur_fractions")?.map(|v| three("blur_fractions", v)).transpose()?;
            let mask = p.list::<f64>("mask_fractions")?.map(|v| three("mask_fractions", v)).transpose()?;
            let cutoff = p.list::<f64>("difficulty_cutoffs")?.map(|v| three("difficulty_cutoffs", v)).transpose()?;
            let starts = p.list::<usize>("stage_starts")?.map(|v| three("stage_starts", v)).transpose()?;
            let third = (iterations / 3).max(1);
            let starts = starts.unwrap_or([0, third, 2 * third]);
            let blur = blur.unwrap_or(DEFAULT_BLUR);
            let mask = mask.unwrap_or(DEFAULT_MASK);
            let cutoff = cutoff.unwrap_or(DEFAULT_CUTOFF);
            CurriculumSchedule::new(
                (0..3)
                    .map(|i| CurriculumStage {
                        start: starts[i],
                        blur: blur[i],
                        mask: mask[i],
                        cutoff: cutoff[i],
                    })
                    .collect(),
            )?
        } else {
            default_curriculum(iterations, false)?
        };
        let difficulty = DifficultyWeights {
            count: p.num("difficulty_weight_count", d.difficulty.count)?,
            small: p.num("difficulty_weight_small", d.difficulty.small)?,
            blur: p.num("difficulty_weight_blur", d.difficulty.blur)?,
        };
        let shrink = p.num("shrink", d.shrink)?;
        if !(0.0..0.5).contains(&shrink) {
            return Err(Error::Config("shrink must be in [0, 0.5)".into()));
        }
        let resolve = |s: String| {
            let path = PathBuf::from(s);
            if path.is_absolute() {
                path
            } else {
                base_dir.join(path)
            }
        };
        let detect = DetectOptions {
            score_threshold: p.num("score_thresh", d.detect.score_threshold)?,
            merge_iou: p.num("merge_iou", d.detect.merge_iou)?,
            nms_iou: p.num("nms_iou", d.detect.nms_iou)?,
            geometry: match p.take("geometry").as_deref() {
                None | Some("rbox") => GeometryKind::Rbox,
                Some("quad") => GeometryKind::Quad,
                Some(v) => return Err(Error::Config(format!("geometry: unknown {v:?}"))),
            },
        };
        let cfg = RunConfig {
            model,
            loss,
            score_loss,
            optimizer,
            iterations,
            batch_size,
            curriculum,
            difficulty,
            shrink,
            seed: p.num("seed", d.seed)?,
            data_seed: p.num("data_seed", d.data_seed)?,
            manifest: p.take("manifest").map(resolve),
            out_dir: p.take("out_dir").map(resolve).unwrap_or_else(|| base_dir.join(&d.out_dir)),
            checkpoint_every: p.num("checkpoint_every", d.checkpoint_every)?,
            log_every: p.num("log_every", d.log_every)?,
            detect,
        };
        if let Some(k) = p.map.keys().next() {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
