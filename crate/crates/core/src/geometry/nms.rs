//! Locality-aware non-maximum suppression.

use super::polygon::{polygon_iou, DetectionBox, Quad};

/// A box accumulated from consecutive merges.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedBox {
    pub polygon: Quad,
    /// Sum of the merged scores; orders the second pass.
    pub score_sum: f64,
    pub max_score: f64,
}

/// First pass: fold each box into its predecessor when they overlap by more
/// than `merge_iou`, averaging vertices weighted by score.
pub fn merge_consecutive(boxes: &[DetectionBox], merge_iou: f64) -> Vec<MergedBox> {
    let mut out: Vec<MergedBox> = Vec::new();
    let mut current: Option<MergedBox> = None;
    for b in boxes {
        match current.as_mut() {
            Some(m) if polygon_iou(&m.polygon, &b.polygon) > merge_iou => {
                let total = m.score_sum + b.score;
                for k in 0..4 {
                    for c in 0..2 {
                        m.polygon[k][c] = (m.polygon[k][c] * m.score_sum + b.polygon[k][c] * b.score) / total;
                    }
                }
                m.score_sum = total;
                m.max_score = m.max_score.max(b.score);
            }
            _ => {
                out.extend(current.take());
                current = Some(MergedBox {
                    polygon: b.polygon,
                    score_sum: b.score,
                    max_score: b.score,
                });
            }
        }
    }
    out.extend(current);
    out
}

/// Greedy NMS: indices of kept boxes, highest score first. Ties keep input order.
pub fn greedy_nms(polygons: &[Quad], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..polygons.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| polygon_iou(&polygons[k], &polygons[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// `boxes` must be in row-major emission order.
pub fn locality_aware_nms(boxes: &[DetectionBox], merge_iou: f64, final_iou: f64) -> Vec<DetectionBox> {
    let merged = merge_consecutive(boxes, merge_iou);
    let polys: Vec<Quad> = merged.iter().map(|m| m.polygon).collect();
    let sums: Vec<f64> = merged.iter().map(|m| m.score_sum).collect();
    greedy_nms(&polys, &sums, final_iou)
        .into_iter()
        .map(|i| DetectionBox {
            polygon: merged[i].polygon,
            score: merged[i].max_score,
        })
        .collect()
}
