//! One-to-one IoU matching and precision / recall / F-score.

use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::io::{read_detections, read_ground_truth};
use crate::geometry::{intersection_area, polygon_area, polygon_iou, DetectionBox, TextPolygon};

/// A detection overlapping an ignored region by more than this fraction of
/// its own area is dropped before matching.
pub const IGNORE_OVERLAP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Matching {
    /// Descending detection score, each takes its best free ground truth.
    Greedy,
    /// Maximum-cardinality bipartite matching.
    Optimal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    /// `(detection index, ground-truth index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub detections_counted: usize,
    pub gts_counted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageResult>,
    pub matched: usize,
    pub detections: usize,
    pub ground_truths: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Match one image.
pub fn match_image(dets: &[DetectionBox], gts: &[TextPolygon], iou_threshold: f64, matching: Matching) -> ImageResult {
    let care: Vec<usize> = (0..gts.len()).filter(|&g| !gts[g].ignore).collect();
    let ignored: Vec<&TextPolygon> = gts.iter().filter(|g| g.ignore).collect();
    let kept: Vec<usize> = (0..dets.len())
        .filter(|&d| {
            let area = polygon_area(&dets[d].polygon);
            !ignored.iter().any(|g| area > 0.0 && intersection_area(&dets[d].polygon, &g.vertices) / area > IGNORE_OVERLAP)
        })
        .collect();
    // Candidate pairs by local index.
    let ok: Vec<Vec<bool>> = kept
        .iter()
        .map(|&d| {
            care.iter()
                .map(|&g| polygon_iou(&dets[d].polygon, &gts[g].vertices) >= iou_threshold)
                .collect()
        })
        .collect();
    let pairs = match matching {
        Matching::Greedy => {
            let ious: Vec<Vec<f64>> = kept
                .iter()
                .map(|&d| care.iter().map(|&g| polygon_iou(&dets[d].polygon, &gts[g].vertices)).collect())
                .collect();
            let mut order: Vec<usize> = (0..kept.len()).collect();
            order.sort_by(|&a, &b| dets[kept[b]].score.total_cmp(&dets[kept[a]].score));
            let mut taken = vec![false; care.len()];
            let mut pairs = Vec::new();
            for i in order {
                let best = (0..care.len())
                    .filter(|&j| !taken[j] && ok[i][j])
                    .max_by(|&a, &b| ious[i][a].total_cmp(&ious[i][b]).then(b.cmp(&a)));
                if let Some(j) = best {
                    taken[j] = true;
                    pairs.push((i, j));
                }
            }
            pairs
        }
        Matching::Optimal => maximum_matching(&ok),
    };
    let mut matches: Vec<(usize, usize)> = pairs.into_iter().map(|(i, j)| (kept[i], care[j])).collect();
    matches.sort_unstable();
    ImageResult {
        matches,
        detections_counted: kept.len(),
        gts_counted: care.len(),
    }
}

/// Kuhn's augmenting-path algorithm on an adjacency matrix.
pub fn maximum_matching(adj: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let right = adj.first().map_or(0, Vec::len);
    let mut owner: Vec<Option<usize>> = vec![None; right];
    fn augment(i: usize, adj: &[Vec<bool>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for j in 0..seen.len() {
            if adj[i][j] && !seen[j] {
                seen[j] = true;
                if owner[j].map_or(true, |k| augment(k, adj, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    for i in 0..adj.len() {
        let mut seen = vec![false; right];
        augment(i, adj, &mut seen, &mut owner);
    }
    owner
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.map(|i| (i, j)))
        .collect()
}

/// Aggregate over images; `detections[i]` pairs with `ground_truths[i]`.
pub fn evaluate(
    detections: &[Vec<DetectionBox>],
    ground_truths: &[Vec<TextPolygon>],
    iou_threshold: f64,
    matching: Matching,
) -> Result<EvalReport> {
    if detections.len() != ground_truths.len() {
        return Err(Error::InvalidParam(format!(
            "{} detection sets for {} ground-truth sets",
            detections.len(),
            ground_truths.len()
        )));
    }
    let per_image: Vec<ImageResult> = detections
        .iter()
        .zip(ground_truths)
        .map(|(d, g)| match_image(d, g, iou_threshold, matching))
        .collect();
    let matched: usize = per_image.iter().map(|r| r.matches.len()).sum();
    let dets: usize = per_image.iter().map(|r| r.detections_counted).sum();
    let gts: usize = per_image.iter().map(|r| r.gts_counted).sum();
    let precision = if dets > 0 { matched as f64 / dets as f64 } else { 0.0 };
    let recall = if gts > 0 { matched as f64 / gts as f64 } else { 0.0 };
    Ok(EvalReport {
        per_image,
        matched,
        detections: dets,
        ground_truths: gts,
        precision,
        recall,
        f_score: f_score(precision, recall),
    })
}

/// Image id of a ground-truth file: `gt_<id>.txt` or `<id>.txt`.
fn gt_id(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    Some(stem.strip_prefix("gt_").unwrap_or(stem).to_string())
}

/// Detection file for an image id: `res_<id>.txt`, else `<id>.txt`.
pub fn detection_path(det_dir: &Path, id: &str) -> PathBuf {
    let res = det_dir.join(format!("res_{id}.txt"));
    if res.exists() {
        res
    } else {
        det_dir.join(format!("{id}.txt"))
    }
}

/// Evaluate every ground-truth file in `gt_dir` against `det_dir`.
/// A missing detection file counts as no detections.
pub fn evaluate_dirs(det_dir: &Path, gt_dir: &Path, iou_threshold: f64, matching: Matching) -> Result<EvalReport> {
    let mut gt_files: Vec<PathBuf> = std::fs::read_dir(gt_dir)
        .map_err(|e| Error::io(gt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    gt_files.sort();
    if !det_dir.is_dir() {
        return Err(Error::data(det_dir, "detection directory does not exist"));
    }
    let mut dets = Vec::with_capacity(gt_files.len());
    let mut gts = Vec::with_capacity(gt_files.len());
    for gt in &gt_files {
        let id = gt_id(gt).ok_or_else(|| Error::data(gt, "unusable file name"))?;
        gts.push(read_ground_truth(gt)?);
        let dp = detection_path(det_dir, &id);
        if dp.exists() {
            dets.push(read_detections(&dp)?);
        } else {
            warn!("no detections for {id}");
            dets.push(Vec::new());
        }
    }
    evaluate(&dets, &gts, iou_threshold, matching)
}
