//! Synthetic corpus: rotated high-contrast bars on textured backgrounds.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::curriculum::{write_manifest, SampleRecord};
use super::difficulty::{rank_difficulty, DifficultyWeights};
use super::image_io::{quantize, save_png};
use crate::error::{Error, Result};
use crate::geometry::io::write_ground_truth;
use crate::geometry::{contains_point, intersection_area, rbox_corners, TextPolygon};
use crate::tensor::{ImageTensor, Tensor};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: ImageTensor,
    pub polygons: Vec<TextPolygon>,
}

/// Largest rotation of a generated bar, radians.
pub const MAX_ANGLE: f64 = PI / 6.0;
const MARGIN: f64 = 2.0;
const GAP: f64 = 4.0;

fn render_one(rng: &mut ChaCha8Rng, height: usize, width: usize) -> SyntheticSample {
    let side = height.min(width) as f64;
    let wanted = rng.gen_range(1..=3);
    let mut polygons: Vec<TextPolygon> = Vec::new();
    let mut padded = Vec::new();
    for _ in 0..200 {
        if polygons.len() == wanted {
            break;
        }
        let half_w = rng.gen_range(0.15 * side..0.3 * side);
        let half_h = rng.gen_range(0.075 * side..0.11 * side);
        let angle = rng.gen_range(-MAX_ANGLE..MAX_ANGLE);
        let center = [rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64)];
        let quad = rbox_corners(center, [half_h, half_w, half_h, half_w], angle);
        let inside = quad
            .iter()
            .all(|p| p[0] >= MARGIN && p[1] >= MARGIN && p[0] <= width as f64 - MARGIN && p[1] <= height as f64 - MARGIN);
        let grown = rbox_corners(center, [half_h + GAP, half_w + GAP, half_h + GAP, half_w + GAP], angle);
        if !inside || padded.iter().any(|other: &[[f64; 2]; 4]| intersection_area(&grown, other) > 0.0) {
            continue;
        }
        padded.push(grown);
        polygons.push(TextPolygon {
            vertices: quad,
            ignore: false,
            transcription: "bar".into(),
        });
    }

    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.65));
    let (fx, fy, phase) = (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.0..2.0 * PI));
    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..height {
        for x in 0..width {
            let wave = 0.06 * (fx * x as f64 + fy * y as f64 + phase).sin();
            for c in 0..3 {
                data[c * plane + y * width + x] = base[c] + wave + rng.gen_range(-0.04..0.04);
            }
        }
    }
    for poly in &polygons {
        let dark = rng.gen_bool(0.5);
        let ink: [f64; 3] = std::array::from_fn(|_| if dark { rng.gen_range(0.02..0.15) } else { rng.gen_range(0.85..0.98) });
        let period = rng.gen_range(4.0..8.0);
        let [a, b, _, _] = poly.vertices;
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        for y in 0..height {
            for x in 0..width {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                if !contains_point(&poly.vertices, p) {
                    continue;
                }
                let along = (p[0] - a[0]) * dir[0] + (p[1] - a[1]) * dir[1];
                let stripe = if (2.0 * PI * along / period).sin() > 0.0 { 0.05 } else { -0.05 };
                for c in 0..3 {
                    data[c * plane + y * width + x] = ink[c] + stripe;
                }
            }
        }
    }
    let mut image = ImageTensor::new(Tensor::new(&[3, height, width], data).expect("sized")).expect("finite");
    quantize(&mut image);
    SyntheticSample { image, polygons }
}

/// `count` images of `height × width`, a pure function of the arguments.
pub fn generate_synthetic_dataset(count: usize, height: usize, width: usize, seed: u64) -> Vec<SyntheticSample> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            render_one(&mut rng, height, width)
        })
        .collect()
}

/// Write images, ground-truth files and a manifest into `out_dir`.
pub fn write_synthetic_dataset(
    out_dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    weights: &DifficultyWeights,
) -> Result<Vec<SampleRecord>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParam("image size must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(count);
    for (i, s) in generate_synthetic_dataset(count, height, width, seed).into_iter().enumerate() {
        let image_path = out_dir.join(format!("img_{i:04}.png"));
        let gt_path = out_dir.join(format!("gt_img_{i:04}.txt"));
        save_png(&image_path, &s.image)?;
        write_ground_truth(&gt_path, &s.polygons)?;
        records.push(SampleRecord {
            image_path,
            gt_path,
            difficulty: rank_difficulty(&s.polygons, &s.image, weights),
        });
    }
    let entries: Vec<_> = records.iter().map(|r| (r.image_path.clone(), r.gt_path.clone())).collect();
    write_manifest(&out_dir.join(MANIFEST_NAME), &entries)?;
    Ok(records)
}
