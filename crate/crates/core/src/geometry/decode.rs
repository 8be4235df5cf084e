//! Per-pixel geometry back to scored boxes.

use super::encode::cell_center;
use super::polygon::{polygon_area, rbox_corners, DetectionBox, Quad};
use crate::head::{QuadGeometry, RBoxGeometry, ScoreMap};

/// Decoded boxes smaller than this (px²) are dropped.
pub const MIN_BOX_AREA: f64 = 4.0;

fn above_threshold(score: &ScoreMap, threshold: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
    score
        .0
        .data()
        .iter()
        .copied()
        .enumerate()
        .filter(move |&(_, s)| s > threshold)
}

fn keep(polygon: Quad, score: f64) -> Option<DetectionBox> {
    (polygon_area(&polygon) >= MIN_BOX_AREA && polygon.iter().flatten().all(|v| v.is_finite()))
        .then_some(DetectionBox { polygon, score })
}

/// One rotated rectangle per pixel above `threshold`, in row-major order.
pub fn decode_rbox(score: &ScoreMap, geo: &RBoxGeometry, threshold: f64, stride: usize) -> Vec<DetectionBox> {
    let w = score.width();
    let plane = score.height() * w;
    above_threshold(score, threshold)
        .filter_map(|(i, s)| {
            let p = cell_center(i / w, i % w, stride);
            let d = std::array::from_fn(|k| geo.distances.data()[k * plane + i]);
            keep(rbox_corners(p, d, geo.angle.data()[i]), s)
        })
        .collect()
}

/// One quadrilateral per pixel above `threshold`, in row-major order.
pub fn decode_quad(score: &ScoreMap, geo: &QuadGeometry, threshold: f64, stride: usize) -> Vec<DetectionBox> {
    let w = score.width();
    let plane = score.height() * w;
    let o = geo.offsets.data();
    above_threshold(score, threshold)
        .filter_map(|(i, s)| {
            let p = cell_center(i / w, i % w, stride);
            let quad = std::array::from_fn(|k| [p[0] + o[2 * k * plane + i], p[1] + o[(2 * k + 1) * plane + i]]);
            keep(quad, s)
        })
        .collect()
}
