//! Easy-to-hard ordering proxy.

use crate::geometry::{shortest_edge, TextPolygon};
use crate::tensor::ImageTensor;

/// Boxes whose short edge is below this many pixels count as small.
pub const SMALL_BOX_EDGE: f64 = 12.0;
/// Half-saturation constant of the box-count term.
const COUNT_SCALE: f64 = 4.0;
/// Half-saturation constant of the blurriness term.
const SHARPNESS_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DifficultyWeights {
    pub count: f64,
    pub small: f64,
    pub blur: f64,
}

impl Default for DifficultyWeights {
    fn default() -> Self {
        Self {
            count: 1.0 / 3.0,
            small: 1.0 / 3.0,
            blur: 1.0 / 3.0,
        }
    }
}

/// Variance of the 4-neighbour Laplacian of the luminance, interior pixels only.
pub fn laplacian_variance(image: &ImageTensor) -> f64 {
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return 0.0;
    }
    let lum = |y: usize, x: usize| {
        0.299 * image.pixel(0, y, x) + 0.587 * image.pixel(1, y, x) + 0.114 * image.pixel(2, y, x)
    };
    let mut vals = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            vals.push(lum(y - 1, x) + lum(y + 1, x) + lum(y, x - 1) + lum(y, x + 1) - 4.0 * lum(y, x));
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

/// The three factors, each in `[0, 1]`: box count, small-box fraction, blurriness.
pub fn difficulty_factors(polygons: &[TextPolygon], image: &ImageTensor) -> [f64; 3] {
    let active: Vec<&TextPolygon> = polygons.iter().filter(|p| !p.ignore).collect();
    let n = active.len() as f64;
    let count = n / (n + COUNT_SCALE);
    let small = if active.is_empty() {
        0.0
    } else {
        active.iter().filter(|p| shortest_edge(&p.vertices) < SMALL_BOX_EDGE).count() as f64 / n
    };
    let blur = SHARPNESS_SCALE / (SHARPNESS_SCALE + laplacian_variance(image));
    [count, small, blur]
}

/// Weighted mean of the factors, normalised by the weight sum; in `[0, 1]`.
pub fn rank_difficulty(polygons: &[TextPolygon], image: &ImageTensor, weights: &DifficultyWeights) -> f64 {
    let [c, s, b] = difficulty_factors(polygons, image);
    let total = weights.count + weights.small + weights.blur;
    if total <= 0.0 {
        return 0.0;
    }
    ((weights.count * c + weights.small * s + weights.blur * b) / total).clamp(0.0, 1.0)
}
