//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod criteria;

use std::f64::consts::PI;

use frbdet_core::autograd::sigmoid;
use frbdet_core::geometry::{rbox_corners, Point, Quad};
use frbdet_core::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Direct six-loop Gabor-orientation convolution.
/// `input [N][U][H][W]`, `canonical [O][N][k][k]`, `gabor [U][k][k]`.
pub fn naive_gof(
    input: &Tensor,
    canonical: &Tensor,
    gabor: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, u_count, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (o, k) = (canonical.shape()[0], canonical.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[o, u_count, oh, ow]);
    for oc in 0..o {
        for u in 0..u_count {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for ic in 0..n {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (x * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let v = input.at(&[ic, u, iy as usize, ix as usize]);
                                acc += v * canonical.at(&[oc, ic, i, j]) * gabor.at(&[u, i, j]);
                            }
                        }
                    }
                    out.set(&[oc, u, y, x], acc);
                }
            }
        }
    }
    out
}

/// `f[c] · σ(Σ_k w[c][k]·f[k] + b[c])`, pixel by pixel.
pub fn scalar_attention(f: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
    let (c, h, wd) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let mut out = Tensor::zeros(f.shape());
    for y in 0..h {
        for x in 0..wd {
            for ch in 0..c {
                let mut z = b[ch];
                for k in 0..c {
                    z += w.at(&[ch, k, 0, 0]) * f.at(&[k, y, x]);
                }
                out.set(&[ch, y, x], f.at(&[ch, y, x]) * sigmoid(z));
            }
        }
    }
    out
}

fn inside_convex(poly: &Quad, p: Point) -> bool {
    let mut sign = 0.0;
    for k in 0..4 {
        let a = poly[k];
        let b = poly[(k + 1) % 4];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// IoU by sampling pixel centres of an `n × n` raster over the pair's bounding box.
pub fn raster_iou(a: &Quad, b: &Quad, n: usize) -> f64 {
    let xs = a.iter().chain(b).map(|p| p[0]);
    let ys = a.iter().chain(b).map(|p| p[1]);
    let (x0, x1) = (xs.clone().fold(f64::MAX, f64::min), xs.fold(f64::MIN, f64::max));
    let (y0, y1) = (ys.clone().fold(f64::MAX, f64::min), ys.fold(f64::MIN, f64::max));
    let (mut both, mut either) = (0usize, 0usize);
    for r in 0..n {
        let y = y0 + (r as f64 + 0.5) * (y1 - y0) / n as f64;
        for c in 0..n {
            let x = x0 + (c as f64 + 0.5) * (x1 - x0) / n as f64;
            let (ia, ib) = (inside_convex(a, [x, y]), inside_convex(b, [x, y]));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// A random convex quad: four sorted angles on a random ellipse.
pub fn random_convex_quad(rng: &mut impl Rng, center: Point, radius: f64) -> Quad {
    let mut angles: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    // Keep vertices apart so the quad is not nearly a triangle.
    for k in 1..4 {
        if angles[k] - angles[k - 1] < 0.3 {
            angles[k] = angles[k - 1] + 0.3;
        }
    }
    let (rx, ry) = (radius * rng.gen_range(0.6..1.0), radius * rng.gen_range(0.6..1.0));
    let rot = rng.gen_range(0.0..PI);
    std::array::from_fn(|k| {
        let (ex, ey) = (rx * angles[k].cos(), ry * angles[k].sin());
        [center[0] + ex * rot.cos() - ey * rot.sin(), center[1] + ex * rot.sin() + ey * rot.cos()]
    })
}

pub fn random_rect(rng: &mut impl Rng, center: Point, max_half: f64, angle_range: f64) -> Quad {
    let w = rng.gen_range(0.3 * max_half..max_half);
    let h = rng.gen_range(0.3 * max_half..max_half);
    let angle = rng.gen_range(-angle_range..angle_range);
    rbox_corners(center, [h, w, h, w], angle)
}

/// Textbook greedy NMS: repeatedly take the best survivor and drop everything
/// overlapping it by more than `threshold`.
pub fn brute_force_nms(iou: &[Vec<f64>], scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; scores.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if alive[i] && best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        for i in 0..scores.len() {
            if alive[i] && iou[b][i] > threshold {
                alive[i] = false;
            }
        }
        alive[b] = false;
    }
    kept
}

/// Maximum bipartite matching size by exhaustive search over subsets of the right side.
pub fn brute_force_matching(adj: &[Vec<bool>]) -> usize {
    fn go(i: usize, adj: &[Vec<bool>], used: u64) -> usize {
        if i == adj.len() {
            return 0;
        }
        let mut best = go(i + 1, adj, used);
        for (j, &ok) in adj[i].iter().enumerate() {
            if ok && used & (1 << j) == 0 {
                best = best.max(1 + go(i + 1, adj, used | (1 << j)));
            }
        }
        best
    }
    go(0, adj, 0)
}

/// Central-difference relative error of `analytic` against `f`.
pub fn fd_relative_error(inputs: &[Tensor], analytic: &[Tensor], h: f64, f: impl Fn(&[Tensor]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut values = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let mut num = vec![0.0; inputs[i].len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + h;
            let plus = f(&values);
            values[i].data_mut()[j] = orig - h;
            let minus = f(&values);
            values[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        let diff = a.data().iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.data().iter().map(|x| x * x).sum::<f64>().sqrt().max(num.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}
