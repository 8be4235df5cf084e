//! Single-file checkpoints: a text header followed by little-endian f64 blobs.
//!
//! ```text
//! frbdet-ckpt-v1
//! iteration 120
//! model orientations=4
//! ...
//! tensor param encoder.stem.weight 16,3,3,3
//! tensor velocity encoder.stem.weight 16,3,3,3
//! end
//! <blobs in header order>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Detector;
use crate::tensor::Tensor;

use super::config::{model_config_from_text, model_config_to_text};

pub const CHECKPOINT_VERSION: &str = "frbdet-ckpt-v1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Detector,
    pub iteration: usize,
    /// Momentum buffers in parameter order; empty when absent.
    pub velocity: Vec<Tensor>,
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_checkpoint<W: Write>(out: &mut W, model: &Detector, iteration: usize, velocity: &[Tensor]) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    if !velocity.is_empty() && velocity.len() != model.store.len() {
        return Err(Error::Checkpoint("velocity count differs from parameter count".into()));
    }
    let mut header = format!("{CHECKPOINT_VERSION}\niteration {iteration}\n");
    for line in model_config_to_text(&model.config).lines() {
        header.push_str(&format!("model {line}\n"));
    }
    for (name, t) in model.store.iter() {
        header.push_str(&format!("tensor param {name} {}\n", shape_text(t.shape())));
    }
    for ((name, _), v) in model.store.iter().zip(velocity) {
        header.push_str(&format!("tensor velocity {name} {}\n", shape_text(v.shape())));
    }
    header.push_str("end\n");
    out.write_all(header.as_bytes()).map_err(io)?;
    let tensors = model.store.iter().map(|(_, t)| t).chain(velocity.iter());
    for t in tensors {
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let version = next_line(&mut reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version:?}")));
    }
    let it_line = next_line(&mut reader)?;
    let iteration = it_line
        .strip_prefix("iteration ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad iteration line {it_line:?}")))?;
    let mut model_text = String::new();
    let mut entries: Vec<(String, String, Vec<usize>)> = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        if l == "end" {
            break;
        }
        if let Some(rest) = l.strip_prefix("model ") {
            model_text.push_str(rest);
            model_text.push('\n');
        } else if let Some(rest) = l.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad tensor line {l:?}")));
            }
            let shape = parts[2]
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in {l:?}")))?;
            entries.push((parts[0].to_string(), parts[1].to_string(), shape));
        } else {
            return Err(bad(format!("unexpected header line {l:?}")));
        }
    }
    let config = model_config_from_text(&model_text)?;
    let mut model = Detector::new(&config, 0)?;
    let mut velocity = Vec::new();
    let mut params_seen = 0;
    for (kind, name, shape) in entries {
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| bad(format!("truncated data for {name}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        if model.store.get(id).shape() != t.shape() {
            return Err(bad(format!("shape mismatch for {name}")));
        }
        match kind.as_str() {
            "param" => {
                *model.store.get_mut(id) = t;
                params_seen += 1;
            }
            "velocity" => {
                if id.0 != velocity.len() {
                    return Err(bad(format!("velocity for {name} out of order")));
                }
                velocity.push(t);
            }
            _ => return Err(bad(format!("unknown tensor kind {kind}"))),
        }
    }
    if params_seen != model.store.len() {
        return Err(bad(format!("{params_seen} of {} parameters present", model.store.len())));
    }
    if !velocity.is_empty() && velocity.len() != model.store.len() {
        return Err(bad("incomplete velocity buffers".into()));
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(|e| bad(format!("read failed: {e}")))? != 0 {
        return Err(bad("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint {
        model,
        iteration,
        velocity,
    })
}

pub fn save_checkpoint(path: &Path, model: &Detector, iteration: usize, velocity: &[Tensor]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, model, iteration, velocity)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
