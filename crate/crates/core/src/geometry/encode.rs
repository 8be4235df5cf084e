//! Ground-truth score/RBOX/QUAD maps from annotated polygons.

use log::warn;

use super::polygon::{canonical_order, contains_point, min_area_rect, polygon_area, shortest_edge, shrink_quad, TextPolygon};
use crate::error::{Error, Result};
use crate::head::{QuadGeometry, RBoxGeometry, ScoreMap, Targets};
use crate::tensor::Tensor;

pub const DEFAULT_SHRINK: f64 = 0.3;

/// Input-image coordinate of the centre of map cell `(row, col)`.
pub fn cell_center(row: usize, col: usize, stride: usize) -> [f64; 2] {
    [(col as f64 + 0.5) * stride as f64, (row as f64 + 0.5) * stride as f64]
}

pub fn encode_ground_truth(
    polygons: &[TextPolygon],
    map_height: usize,
    map_width: usize,
    stride: usize,
    shrink_ratio: f64,
) -> Result<Targets> {
    if stride == 0 || !(0.0..0.5).contains(&shrink_ratio) {
        return Err(Error::InvalidParam(format!(
            "stride {stride} and shrink ratio {shrink_ratio} must be positive and below 0.5"
        )));
    }
    let (h, w) = (map_height, map_width);
    let plane = h * w;
    let mut score = Tensor::zeros(&[1, h, w]);
    let mut mask = Tensor::full(&[1, h, w], 1.0);
    let mut distances = Tensor::zeros(&[4, h, w]);
    let mut angle = Tensor::zeros(&[1, h, w]);
    let mut offsets = Tensor::zeros(&[8, h, w]);
    let mut short = Tensor::zeros(&[1, h, w]);
    let (img_w, img_h) = ((w * stride) as f64, (h * stride) as f64);

    for poly in polygons {
        let quad = poly.vertices.map(|[x, y]| [x.clamp(0.0, img_w), y.clamp(0.0, img_h)]);
        if polygon_area(&quad) < 1.0 {
            warn!("skipping degenerate polygon {:?}", poly.vertices);
            continue;
        }
        if poly.ignore {
            for_cells(h, w, stride, &quad, |i| mask.data_mut()[i] = 0.0);
            continue;
        }
        let shrunk = shrink_quad(&quad, shrink_ratio);
        let ordered = canonical_order(&quad);
        let (theta, ext) = min_area_rect(&quad);
        let (s, c) = theta.sin_cos();
        let edge = shortest_edge(&ordered);
        for_cells(h, w, stride, &shrunk, |i| {
            let p = cell_center(i / w, i % w, stride);
            let pu = p[0] * c + p[1] * s;
            let pv = -p[0] * s + p[1] * c;
            let d = [pv - ext[2], ext[1] - pu, ext[3] - pv, pu - ext[0]];
            score.data_mut()[i] = 1.0;
            for (k, v) in d.iter().enumerate() {
                distances.data_mut()[k * plane + i] = v.max(0.0);
            }
            angle.data_mut()[i] = theta;
            for (k, vtx) in ordered.iter().enumerate() {
                offsets.data_mut()[2 * k * plane + i] = vtx[0] - p[0];
                offsets.data_mut()[(2 * k + 1) * plane + i] = vtx[1] - p[1];
            }
            short.data_mut()[i] = edge;
        });
    }
    Ok(Targets {
        score: ScoreMap(score),
        rbox: RBoxGeometry { distances, angle },
        quad: QuadGeometry { offsets },
        training_mask: mask,
        short_edge: short,
    })
}

fn for_cells(h: usize, w: usize, stride: usize, quad: &[[f64; 2]; 4], mut f: impl FnMut(usize)) {
    let s = stride as f64;
    let min = |k: usize| quad.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let max = |k: usize| quad.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let col_lo = ((min(0) / s - 0.5).floor().max(0.0)) as usize;
    let row_lo = ((min(1) / s - 0.5).floor().max(0.0)) as usize;
    let col_hi = ((max(0) / s).ceil().max(0.0) as usize).min(w);
    let row_hi = ((max(1) / s).ceil().max(0.0) as usize).min(h);
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            if contains_point(quad, cell_center(row, col, stride)) {
                f(row * w + col);
            }
        }
    }
}
