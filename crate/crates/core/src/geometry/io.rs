//! Ground-truth and detection text files.

use std::fmt::Write as _;
use std::path::Path;

use super::polygon::{DetectionBox, Quad, TextPolygon};
use crate::error::{Error, Result};

pub const IGNORE_TRANSCRIPTION: &str = "###";

fn parse_quad(fields: &[&str]) -> std::result::Result<Quad, String> {
    let mut v = [0.0; 8];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("bad coordinate {f:?}"))?;
        if !slot.is_finite() {
            return Err(format!("non-finite coordinate {f:?}"));
        }
    }
    Ok(std::array::from_fn(|k| [v[2 * k], v[2 * k + 1]]))
}

/// `x1,y1,...,x4,y4,transcription` per line; `###` marks an ignored region.
pub fn parse_ground_truth(text: &str) -> std::result::Result<Vec<TextPolygon>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_start_matches('\u{feff}').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(9, ',').collect();
        if fields.len() < 8 {
            return Err(format!("line {}: expected 8 coordinates", n + 1));
        }
        let vertices = parse_quad(&fields[..8]).map_err(|e| format!("line {}: {e}", n + 1))?;
        let transcription = fields.get(8).map(|s| s.trim().to_string()).unwrap_or_default();
        out.push(TextPolygon {
            vertices,
            ignore: transcription == IGNORE_TRANSCRIPTION,
            transcription,
        });
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<TextPolygon>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text).map_err(|m| Error::data(path, m))
}

pub fn format_ground_truth(polys: &[TextPolygon]) -> String {
    let mut s = String::new();
    for p in polys {
        for [x, y] in p.vertices {
            let _ = write!(s, "{x},{y},");
        }
        s.push_str(&p.transcription);
        s.push('\n');
    }
    s
}

pub fn write_ground_truth(path: &Path, polys: &[TextPolygon]) -> Result<()> {
    std::fs::write(path, format_ground_truth(polys)).map_err(|e| Error::io(path, e))
}

/// `x1,y1,...,x4,y4,score` per line.
pub fn parse_detections(text: &str) -> std::result::Result<Vec<DetectionBox>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("line {}: expected 9 fields", n + 1));
        }
        let polygon = parse_quad(&fields[..8]).map_err(|e| format!("line {}: {e}", n + 1))?;
        let score = fields[8]
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("line {}: bad score {:?}", n + 1, fields[8]))?;
        out.push(DetectionBox { polygon, score });
    }
    Ok(out)
}

pub fn format_detections(boxes: &[DetectionBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        for [x, y] in b.polygon {
            let _ = write!(s, "{x:.2},{y:.2},");
        }
        let _ = writeln!(s, "{:.6}", b.score);
    }
    s
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text).map_err(|m| Error::data(path, m))
}

pub fn write_detections(path: &Path, boxes: &[DetectionBox]) -> Result<()> {
    std::fs::write(path, format_detections(boxes)).map_err(|e| Error::io(path, e))
}
