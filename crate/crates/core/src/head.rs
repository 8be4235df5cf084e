//! Detection head (score, RBOX, QUAD outputs) and the training losses.
//!
//! Loss: `L = L_s + λ_g · (L_rbox + L_quad)`, with
//! * `L_s`: dice loss over masked pixels (balanced cross-entropy optional),
//! * `L_rbox`: mean over positive pixels of `−log IoU + λ_θ (1 − cos Δθ)`,
//!   where IoU is between the axis-aligned boxes implied by the four edge
//!   distances,
//! * `L_quad`: mean over positive pixels of `Σ_k smoothL1(Δ_k / short_edge)`.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::params::ParamStore;
use crate::tensor::{FlatFeatureMap, Tensor};

/// Text confidence `[1][h][w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap(pub Tensor);

/// Per-pixel distances to the top, right, bottom and left edges `[4][h][w]`
/// plus the box angle `[1][h][w]`, in input-image pixels and radians.
#[derive(Clone, Debug, PartialEq)]
pub struct RBoxGeometry {
    pub distances: Tensor,
    pub angle: Tensor,
}

/// `(Δx, Δy)` from each pixel to the four quad vertices, clockwise from the
/// top-left vertex, `[8][h][w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadGeometry {
    pub offsets: Tensor,
}

impl ScoreMap {
    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub geometry: f64,
    pub angle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            geometry: 1.0,
            angle: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.geometry > 0.0) || !(self.angle > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreLossKind {
    Dice,
    BalancedCrossEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub in_channels: usize,
    /// Upper bound of the distance activation, in pixels.
    pub max_distance: f64,
    /// Multiplier of the raw quad offsets, in pixels.
    pub quad_scale: f64,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub config: HeadConfig,
    pub score: Conv,
    pub distances: Conv,
    pub angle: Conv,
    pub quad: Conv,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub score: Var,
    pub distances: Var,
    pub angle: Var,
    pub quad: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub score: ScoreMap,
    pub rbox: RBoxGeometry,
    pub quad: QuadGeometry,
}

impl Head {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &HeadConfig) -> Result<Self> {
        if !(config.max_distance > 0.0) || !(config.quad_scale > 0.0) {
            return Err(Error::Config("head scales must be positive".into()));
        }
        let c = config.in_channels;
        Ok(Self {
            config: config.clone(),
            score: Conv::pointwise(store, rng, "head.score", c, 1),
            distances: Conv::pointwise(store, rng, "head.distances", c, 4),
            angle: Conv::pointwise(store, rng, "head.angle", c, 1),
            quad: Conv::pointwise(store, rng, "head.quad", c, 8),
        })
    }

    /// Channel counts of the four outputs.
    pub const CHANNELS: [usize; 4] = [1, 4, 1, 8];

    pub fn forward(&self, tape: &Tape, store: &ParamStore, f: Var) -> Result<HeadVars> {
        let s = self.score.forward(tape, store, f)?;
        let d = self.distances.forward(tape, store, f)?;
        let a = self.angle.forward(tape, store, f)?;
        let q = self.quad.forward(tape, store, f)?;
        let score = tape.sigmoid(s);
        let d = tape.sigmoid(d);
        let distances = tape.scale(d, self.config.max_distance);
        let a = tape.tanh(a);
        let angle = tape.scale(a, FRAC_PI_4);
        let quad = tape.scale(q, self.config.quad_scale);
        Ok(HeadVars {
            score,
            distances,
            angle,
            quad,
        })
    }

    pub fn head_forward(&self, store: &ParamStore, f: &FlatFeatureMap) -> Result<HeadOutput> {
        let tape = Tape::new();
        let x = tape.leaf(f.tensor().clone());
        let v = self.forward(&tape, store, x)?;
        Ok(collect_output(&tape, &v))
    }
}

pub fn collect_output(tape: &Tape, v: &HeadVars) -> HeadOutput {
    HeadOutput {
        score: ScoreMap((*tape.value(v.score)).clone()),
        rbox: RBoxGeometry {
            distances: (*tape.value(v.distances)).clone(),
            angle: (*tape.value(v.angle)).clone(),
        },
        quad: QuadGeometry {
            offsets: (*tape.value(v.quad)).clone(),
        },
    }
}

fn check_plane(t: &Tensor, channels: usize, h: usize, w: usize, what: &str) -> Result<()> {
    if t.shape() != [channels, h, w] {
        return Err(Error::Shape(format!(
            "{what} is {:?}, expected [{channels}, {h}, {w}]",
            t.shape()
        )));
    }
    Ok(())
}

/// Dice loss and its gradient with respect to `pred`.
pub fn dice_loss_grad(pred: &ScoreMap, gt: &ScoreMap, mask: &Tensor) -> Result<(f64, Tensor)> {
    let (h, w) = (gt.height(), gt.width());
    check_plane(&pred.0, 1, h, w, "score prediction")?;
    check_plane(mask, 1, h, w, "training mask")?;
    let (p, g, m) = (pred.0.data(), gt.0.data(), mask.data());
    let mut inter = 0.0;
    let mut denom = 0.0;
    for i in 0..p.len() {
        inter += p[i] * g[i] * m[i];
        denom += p[i] * m[i] + g[i] * m[i];
    }
    if denom <= 0.0 {
        return Ok((0.0, Tensor::zeros(pred.0.shape())));
    }
    let loss = 1.0 - 2.0 * inter / denom;
    let grad = (0..p.len())
        .map(|i| -2.0 * m[i] * (g[i] * denom - inter) / (denom * denom))
        .collect();
    Ok((loss, Tensor::new(pred.0.shape(), grad)?))
}

/// Class-balanced binary cross-entropy, `β = 1 − mean(gt)` over the mask.
pub fn balanced_bce_grad(pred: &ScoreMap, gt: &ScoreMap, mask: &Tensor) -> Result<(f64, Tensor)> {
    let (h, w) = (gt.height(), gt.width());
    check_plane(&pred.0, 1, h, w, "score prediction")?;
    check_plane(mask, 1, h, w, "training mask")?;
    let (p, g, m) = (pred.0.data(), gt.0.data(), mask.data());
    let count: f64 = m.iter().sum();
    if count <= 0.0 {
        return Ok((0.0, Tensor::zeros(pred.0.shape())));
    }
    let beta = 1.0 - g.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / count;
    const EPS: f64 = 1e-7;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for i in 0..p.len() {
        let pi = p[i].clamp(EPS, 1.0 - EPS);
        loss += -m[i] * (beta * g[i] * pi.ln() + (1.0 - beta) * (1.0 - g[i]) * (1.0 - pi).ln());
        grad[i] = -m[i] * (beta * g[i] / pi - (1.0 - beta) * (1.0 - g[i]) / (1.0 - pi)) / count;
    }
    Ok((loss / count, Tensor::new(pred.0.shape(), grad)?))
}

pub fn score_loss(pred: &ScoreMap, gt: &ScoreMap, mask: &Tensor) -> Result<f64> {
    Ok(dice_loss_grad(pred, gt, mask)?.0)
}

fn positives(mask: &Tensor) -> Vec<usize> {
    mask.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(i, _)| i)
        .collect()
}

const MIN_INTERSECTION: f64 = 1e-9;

/// RBOX loss and gradients `(distances, angle)`.
pub fn rbox_loss_grad(
    pred: &RBoxGeometry,
    gt: &RBoxGeometry,
    positive_mask: &Tensor,
    angle_weight: f64,
) -> Result<(f64, Tensor, Tensor)> {
    let (h, w) = (positive_mask.shape()[1], positive_mask.shape()[2]);
    check_plane(&pred.distances, 4, h, w, "predicted distances")?;
    check_plane(&gt.distances, 4, h, w, "target distances")?;
    check_plane(&pred.angle, 1, h, w, "predicted angle")?;
    check_plane(&gt.angle, 1, h, w, "target angle")?;
    let mut gd = Tensor::zeros(pred.distances.shape());
    let mut ga = Tensor::zeros(pred.angle.shape());
    let pos = positives(positive_mask);
    if pos.is_empty() {
        return Ok((0.0, gd, ga));
    }
    let plane = h * w;
    let inv_n = 1.0 / pos.len() as f64;
    let (pd, td) = (pred.distances.data(), gt.distances.data());
    let mut total = 0.0;
    for &i in &pos {
        let p: [f64; 4] = std::array::from_fn(|c| pd[c * plane + i]);
        let t: [f64; 4] = std::array::from_fn(|c| td[c * plane + i]);
        let (loss, dp) = iou_term(p, t);
        let dtheta = pred.angle.data()[i] - gt.angle.data()[i];
        total += loss + angle_weight * (1.0 - dtheta.cos());
        for c in 0..4 {
            gd.data_mut()[c * plane + i] = dp[c] * inv_n;
        }
        ga.data_mut()[i] = angle_weight * dtheta.sin() * inv_n;
    }
    Ok((total * inv_n, gd, ga))
}

/// `−log(I/U)` for distances `(top, right, bottom, left)` and its gradient
/// with respect to the prediction.
fn iou_term(p: [f64; 4], t: [f64; 4]) -> (f64, [f64; 4]) {
    let [pt, pr, pb, pl] = p;
    let [tt, tr, tb, tl] = t;
    let area_p = (pt + pb) * (pr + pl);
    let area_t = (tt + tb) * (tr + tl);
    let wi = pr.min(tr) + pl.min(tl);
    let hi = pt.min(tt) + pb.min(tb);
    let inter_raw = wi * hi;
    let inter = inter_raw.max(MIN_INTERSECTION);
    let union = area_p + area_t - inter;
    let loss = -(inter / union).ln();
    // dL/dI = -1/I - 1/U ; dL/dA_p = 1/U.
    let di = if inter_raw > MIN_INTERSECTION { -1.0 / inter - 1.0 / union } else { 0.0 };
    let da = 1.0 / union;
    let step = |a: f64, b: f64| if a < b { 1.0 } else { 0.0 };
    let grad = [
        di * wi * step(pt, tt) + da * (pr + pl),
        di * hi * step(pr, tr) + da * (pt + pb),
        di * wi * step(pb, tb) + da * (pr + pl),
        di * hi * step(pl, tl) + da * (pt + pb),
    ];
    (loss, grad)
}

pub fn rbox_loss(pred: &RBoxGeometry, gt: &RBoxGeometry, positive_mask: &Tensor, angle_weight: f64) -> Result<f64> {
    Ok(rbox_loss_grad(pred, gt, positive_mask, angle_weight)?.0)
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// QUAD loss and its gradient with respect to the predicted offsets.
pub fn quad_loss_grad(
    pred: &QuadGeometry,
    gt: &QuadGeometry,
    positive_mask: &Tensor,
    short_edge: &Tensor,
) -> Result<(f64, Tensor)> {
    let (h, w) = (positive_mask.shape()[1], positive_mask.shape()[2]);
    check_plane(&pred.offsets, 8, h, w, "predicted offsets")?;
    check_plane(&gt.offsets, 8, h, w, "target offsets")?;
    check_plane(short_edge, 1, h, w, "short edge map")?;
    let mut grad = Tensor::zeros(pred.offsets.shape());
    let pos = positives(positive_mask);
    if pos.is_empty() {
        return Ok((0.0, grad));
    }
    let plane = h * w;
    let inv_n = 1.0 / pos.len() as f64;
    let mut total = 0.0;
    for &i in &pos {
        let norm = short_edge.data()[i].max(1.0);
        for c in 0..8 {
            let d = (pred.offsets.data()[c * plane + i] - gt.offsets.data()[c * plane + i]) / norm;
            total += smooth_l1(d);
            grad.data_mut()[c * plane + i] = smooth_l1_grad(d) / norm * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

pub fn quad_loss(pred: &QuadGeometry, gt: &QuadGeometry, positive_mask: &Tensor, short_edge: &Tensor) -> Result<f64> {
    Ok(quad_loss_grad(pred, gt, positive_mask, short_edge)?.0)
}

pub fn total_loss(score: f64, rbox: f64, quad: f64, weights: &LossWeights) -> f64 {
    score + weights.geometry * (rbox + quad)
}

/// Training targets for one image, at the head's output resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub score: ScoreMap,
    pub rbox: RBoxGeometry,
    pub quad: QuadGeometry,
    /// 1 where the pixel contributes to the loss, 0 inside ignored regions.
    pub training_mask: Tensor,
    pub short_edge: Tensor,
}

impl Targets {
    /// Pixels that are text and trainable.
    pub fn positive_mask(&self) -> Tensor {
        self.score.0.zip_map(&self.training_mask, |s, m| if s > 0.5 && m > 0.5 { 1.0 } else { 0.0 })
    }
}

/// Per-component loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub score: f64,
    pub rbox: f64,
    pub quad: f64,
    pub total: f64,
}

/// Records the full loss on the tape and returns its root.
pub fn loss_op(
    tape: &Tape,
    out: &HeadVars,
    targets: &Targets,
    weights: &LossWeights,
    score_kind: ScoreLossKind,
) -> Result<(Var, LossBreakdown)> {
    let pred = collect_output(tape, out);
    let (ls, gs) = match score_kind {
        ScoreLossKind::Dice => dice_loss_grad(&pred.score, &targets.score, &targets.training_mask)?,
        ScoreLossKind::BalancedCrossEntropy => {
            balanced_bce_grad(&pred.score, &targets.score, &targets.training_mask)?
        }
    };
    let pos = targets.positive_mask();
    let (lr, gd, ga) = rbox_loss_grad(&pred.rbox, &targets.rbox, &pos, weights.angle)?;
    let (lq, gq) = quad_loss_grad(&pred.quad, &targets.quad, &pos, &targets.short_edge)?;
    let total = total_loss(ls, lr, lq, weights);
    let lg = weights.geometry;
    let root = tape.custom_scalar(
        &[out.score, out.distances, out.angle, out.quad],
        total,
        vec![gs, gd.map(|v| v * lg), ga.map(|v| v * lg), gq.map(|v| v * lg)],
    )?;
    Ok((
        root,
        LossBreakdown {
            score: ls,
            rbox: lr,
            quad: lq,
            total,
        },
    ))
}
