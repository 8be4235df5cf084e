//! Curriculum schedule, corpus loading and seeded batch assembly.

use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{apply_mask, apply_pixel_blur};
use super::difficulty::{rank_difficulty, DifficultyWeights};
use super::image_io::load_image;
use crate::error::{Error, Result};
use crate::geometry::{encode_ground_truth, io::read_ground_truth, TextPolygon};
use crate::head::Targets;
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumStage {
    pub start: usize,
    pub blur: f64,
    pub mask: f64,
    pub cutoff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSchedule {
    stages: Vec<CurriculumStage>,
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<CurriculumStage>) -> Result<Self> {
        let bad = |m: &str| Err(Error::Config(format!("curriculum: {m}")));
        if stages.is_empty() {
            return bad("no stages");
        }
        if stages[0].start != 0 {
            return bad("first stage must start at iteration 0");
        }
        for s in &stages {
            for v in [s.blur, s.mask, s.cutoff] {
                if !(0.0..=1.0).contains(&v) {
                    return bad("fractions and cutoffs must lie in [0, 1]");
                }
            }
        }
        for w in stages.windows(2) {
            if w[1].start <= w[0].start {
                return bad("stage starts must be strictly increasing");
            }
            if w[1].blur < w[0].blur || w[1].mask < w[0].mask || w[1].cutoff < w[0].cutoff {
                return bad("blur, mask and cutoff must be non-decreasing");
            }
        }
        Ok(Self { stages })
    }

    /// Three equal-length stages with blur 0 → 0.10 → 0.25.
    pub fn three_stage(total_iterations: usize, mask: [f64; 3], cutoff: [f64; 3]) -> Result<Self> {
        let third = (total_iterations / 3).max(1);
        let blur = [0.0, 0.10, 0.25];
        Self::new(
            (0..3)
                .map(|i| CurriculumStage {
                    start: i * third,
                    blur: blur[i],
                    mask: mask[i],
                    cutoff: cutoff[i],
                })
                .collect(),
        )
    }

    /// One stage without augmentation, every sample eligible.
    pub fn disabled() -> Self {
        Self {
            stages: vec![CurriculumStage {
                start: 0,
                blur: 0.0,
                mask: 0.0,
                cutoff: 1.0,
            }],
        }
    }

    pub fn stages(&self) -> &[CurriculumStage] {
        &self.stages
    }

    pub fn stage_at(&self, iteration: usize) -> &CurriculumStage {
        self.stages
            .iter()
            .rev()
            .find(|s| s.start <= iteration)
            .expect("first stage starts at 0")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub gt_path: PathBuf,
    pub difficulty: f64,
}

/// A sample held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: ImageTensor,
    pub polygons: Vec<TextPolygon>,
}

impl LoadedSample {
    pub fn load(image_path: &Path, gt_path: &Path, weights: &DifficultyWeights) -> Result<Self> {
        let image = load_image(image_path)?;
        let polygons = read_ground_truth(gt_path)?;
        let difficulty = rank_difficulty(&polygons, &image, weights);
        Ok(Self {
            record: SampleRecord {
                image_path: image_path.to_path_buf(),
                gt_path: gt_path.to_path_buf(),
                difficulty,
            },
            image,
            polygons,
        })
    }
}

/// `image_path<TAB>gt_path` lines; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (img, gt) = line
            .split_once('\t')
            .ok_or_else(|| Error::data(path, format!("line {}: expected image<TAB>gt", n + 1)))?;
        out.push((base.join(img.trim()), base.join(gt.trim())));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[(PathBuf, PathBuf)]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let text: String = entries
        .iter()
        .map(|(i, g)| format!("{}\t{}\n", rel(i), rel(g)))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(manifest: &Path, weights: &DifficultyWeights) -> Result<Vec<LoadedSample>> {
    read_manifest(manifest)?
        .iter()
        .map(|(i, g)| LoadedSample::load(i, g, weights))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub seed: u64,
    /// Output stride of the network, for target encoding.
    pub stride: usize,
    pub shrink: f64,
}

/// One augmented sample ready for the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub index: usize,
    pub image: ImageTensor,
    pub polygons: Vec<TextPolygon>,
    pub targets: Targets,
}

/// Indices eligible at `cutoff`, falling back to the easiest tenth.
pub fn eligible_indices(samples: &[LoadedSample], cutoff: f64) -> Vec<usize> {
    let eligible: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].record.difficulty <= cutoff)
        .collect();
    if !eligible.is_empty() || samples.is_empty() {
        return eligible;
    }
    warn!("no sample within difficulty cutoff {cutoff}; using the easiest decile");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].record.difficulty.total_cmp(&samples[b].record.difficulty));
    order.truncate(samples.len().div_ceil(10));
    order.sort_unstable();
    order
}

/// The batch for `iteration`: a pure function of its arguments.
pub fn curriculum_iter(
    schedule: &CurriculumSchedule,
    samples: &[LoadedSample],
    iteration: usize,
    opts: &BatchOptions,
) -> Result<Vec<TrainingSample>> {
    if samples.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let stage = schedule.stage_at(iteration);
    let eligible = eligible_indices(samples, stage.cutoff);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(iteration as u64);
    let mut picks = Vec::with_capacity(opts.batch_size);
    while picks.len() < opts.batch_size {
        let take = (opts.batch_size - picks.len()).min(eligible.len());
        picks.extend(sample(&mut rng, eligible.len(), take).iter().map(|k| eligible[k]));
    }
    picks
        .into_iter()
        .map(|index| {
            let s = &samples[index];
            let (blur_seed, mask_seed): (u64, u64) = (rng.gen(), rng.gen());
            let image = apply_pixel_blur(&s.image, stage.blur, blur_seed)?;
            let image = apply_mask(&image, &s.polygons, stage.mask, mask_seed)?;
            let (h, w) = (image.height(), image.width());
            if h % opts.stride != 0 || w % opts.stride != 0 {
                return Err(Error::data(&s.record.image_path, format!("{h}x{w} not divisible by stride")));
            }
            let targets = encode_ground_truth(&s.polygons, h / opts.stride, w / opts.stride, opts.stride, opts.shrink)?;
            Ok(TrainingSample {
                index,
                image,
                polygons: s.polygons.clone(),
                targets,
            })
        })
        .collect()
}
