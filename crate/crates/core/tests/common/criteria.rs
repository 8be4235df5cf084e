//! One function per acceptance criterion. Each returns whether it held plus a
//! one-line summary of the measured numbers.

use std::rc::Rc;
use std::time::{Duration, Instant};

use frbdet_core::autograd::{Tape, Var};
use frbdet_core::data::{
    load_corpus, write_synthetic_dataset, CurriculumSchedule, CurriculumStage, DifficultyWeights, MANIFEST_NAME,
};
use frbdet_core::gabor::{build_gabor_bank, gof_conv, GaborParams};
use frbdet_core::geometry::{
    decode_quad, decode_rbox, encode_ground_truth, greedy_nms, locality_aware_nms, polygon_iou, DetectionBox, Quad,
    TextPolygon,
};
use frbdet_core::gradcheck::check_gradients;
use frbdet_core::head::{
    balanced_bce_grad, dice_loss_grad, loss_op, quad_loss, quad_loss_grad, rbox_loss, rbox_loss_grad, HeadVars,
    LossWeights, QuadGeometry, RBoxGeometry, ScoreLossKind, ScoreMap, Targets,
};
use frbdet_core::kernels::Window;
use frbdet_core::layers::ConvWeights;
use frbdet_core::mfrm::{channel_attention, channel_attention_op, crf_op, irnn_op, irnn_sweep, CrfVars, Direction, IrnnVars};
use frbdet_core::model::{Detector, ModelConfig};
use frbdet_core::tensor::{FlatFeatureMap, ImageTensor, Tensor};
use frbdet_core::train::{
    detect_image, evaluate, learning_rate, load_checkpoint, match_image, save_checkpoint, train, Matching, RunConfig,
};
use rand::Rng;

use super::*;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_BUDGET: Duration = Duration::from_secs(300);
const OVERFIT_BUDGET: Duration = Duration::from_secs(30 * 60);
pub const INSTANCES: usize = 100;

/// `Σ r ⊙ v` as a tape scalar, so every output element gets a distinct weight.
fn probe(tape: &Tape, v: Var, r: &Tensor) -> Result<Var, frbdet_core::Error> {
    let value: f64 = tape.value(v).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    tape.custom_scalar(&[v], value, vec![r.clone()])
}

fn pair(v: &[Var], i: usize) -> (Var, Option<Var>) {
    (v[i], Some(v[i + 1]))
}

/// Worst relative error per differentiable piece.
pub fn gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = rng(101);
    let h = 1e-6;
    let mut out = Vec::new();

    let bank = build_gabor_bank(&GaborParams::new(4, 1, 3)).unwrap();
    let gabor = Rc::new(bank.scale(0).unwrap());
    let inputs = [
        random_tensor(&mut rng, &[2, 4, 6, 6], -1.0, 1.0),
        random_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
        random_tensor(&mut rng, &[3], -1.0, 1.0),
    ];
    let r = random_tensor(&mut rng, &[3, 4, 3, 3], -1.0, 1.0);
    let e = check_gradients(&inputs, h, |t, v| {
        let y = gof_conv(t, v[0], v[1], Rc::clone(&gabor), Some(v[2]), Window::new(3, 2, 1))?;
        probe(t, y, &r)
    })
    .unwrap();
    out.push(("gof_conv", e));

    let inputs = [
        random_tensor(&mut rng, &[4, 5, 5], -2.0, 2.0),
        random_tensor(&mut rng, &[4, 4, 1, 1], -1.0, 1.0),
        random_tensor(&mut rng, &[4], -1.0, 1.0),
    ];
    let r = random_tensor(&mut rng, &[4, 5, 5], -1.0, 1.0);
    let e = check_gradients(&inputs, h, |t, v| {
        let y = channel_attention_op(t, v[0], v[1], Some(v[2]))?;
        probe(t, y, &r)
    })
    .unwrap();
    out.push(("channel_attention", e));

    // f, then per direction (w, b, recurrence), then output (w, b).
    let mut inputs = vec![random_tensor(&mut rng, &[8, 4, 5], -1.0, 1.0)];
    for _ in 0..4 {
        inputs.push(random_tensor(&mut rng, &[2, 2, 1, 1], -1.0, 1.0));
        inputs.push(random_tensor(&mut rng, &[2], -0.5, 0.5));
        let mut rec = random_tensor(&mut rng, &[2, 2], -0.2, 0.2);
        rec.set(&[0, 0], 0.9);
        rec.set(&[1, 1], 0.9);
        inputs.push(rec);
    }
    inputs.push(random_tensor(&mut rng, &[8, 8, 1, 1], -1.0, 1.0));
    inputs.push(random_tensor(&mut rng, &[8], -0.5, 0.5));
    let r = random_tensor(&mut rng, &[8, 4, 5], -1.0, 1.0);
    let e = check_gradients(&inputs, h, |t, v| {
        let vars = IrnnVars {
            input: std::array::from_fn(|d| pair(v, 1 + 3 * d)),
            recurrence: std::array::from_fn(|d| v[3 + 3 * d]),
            output: pair(v, 13),
        };
        let y = irnn_op(t, v[0], &vars)?;
        probe(t, y, &r)
    })
    .unwrap();
    out.push(("irnn", e));

    // Three nodes of mixed size, three message convs, compat logits, projection.
    let mut inputs = vec![
        random_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0),
        random_tensor(&mut rng, &[4, 2, 2], -1.0, 1.0),
        random_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0),
    ];
    for _ in 0..3 {
        inputs.push(random_tensor(&mut rng, &[4, 4, 1, 1], -1.0, 1.0));
        inputs.push(random_tensor(&mut rng, &[4], -0.5, 0.5));
    }
    inputs.push(random_tensor(&mut rng, &[3, 3], -1.0, 1.0));
    inputs.push(random_tensor(&mut rng, &[4, 4, 1, 1], -1.0, 1.0));
    inputs.push(random_tensor(&mut rng, &[4], -0.5, 0.5));
    let r = random_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0);
    let e = check_gradients(&inputs, h, |t, v| {
        let vars = CrfVars {
            messages: (0..3).map(|i| pair(v, 3 + 2 * i)).collect(),
            compat: v[9],
            project: pair(v, 10),
        };
        let y = crf_op(t, &v[..3], &vars)?;
        probe(t, y, &r)
    })
    .unwrap();
    out.push(("crf", e));

    let (hh, ww) = (5, 6);
    let targets = loss_targets(&mut rng, hh, ww);
    let score = random_tensor(&mut rng, &[1, hh, ww], 0.05, 0.95);
    let gt = targets.score.clone();
    let mask = targets.training_mask.clone();
    let (_, g) = dice_loss_grad(&ScoreMap(score.clone()), &gt, &mask).unwrap();
    let e = fd_relative_error(&[score.clone()], &[g], h, |v| {
        dice_loss_grad(&ScoreMap(v[0].clone()), &gt, &mask).unwrap().0
    });
    out.push(("score loss (dice)", e));
    let (_, g) = balanced_bce_grad(&ScoreMap(score.clone()), &gt, &mask).unwrap();
    let e = fd_relative_error(&[score.clone()], &[g], h, |v| {
        balanced_bce_grad(&ScoreMap(v[0].clone()), &gt, &mask).unwrap().0
    });
    out.push(("score loss (balanced bce)", e));

    let pos = targets.positive_mask();
    let dist = random_tensor(&mut rng, &[4, hh, ww], 1.0, 12.0);
    let angle = random_tensor(&mut rng, &[1, hh, ww], -0.7, 0.7);
    let pred = RBoxGeometry {
        distances: dist.clone(),
        angle: angle.clone(),
    };
    let (_, gd, ga) = rbox_loss_grad(&pred, &targets.rbox, &pos, 10.0).unwrap();
    let e = fd_relative_error(&[dist.clone(), angle.clone()], &[gd, ga], h, |v| {
        let p = RBoxGeometry {
            distances: v[0].clone(),
            angle: v[1].clone(),
        };
        rbox_loss(&p, &targets.rbox, &pos, 10.0).unwrap()
    });
    out.push(("rbox loss", e));

    let offsets = random_tensor(&mut rng, &[8, hh, ww], -20.0, 20.0);
    let (_, gq) = quad_loss_grad(&QuadGeometry { offsets: offsets.clone() }, &targets.quad, &pos, &targets.short_edge).unwrap();
    let e = fd_relative_error(&[offsets.clone()], &[gq], h, |v| {
        quad_loss(&QuadGeometry { offsets: v[0].clone() }, &targets.quad, &pos, &targets.short_edge).unwrap()
    });
    out.push(("quad loss", e));

    let weights = LossWeights {
        geometry: 0.7,
        angle: 10.0,
    };
    for (name, kind) in [
        ("total loss (dice)", ScoreLossKind::Dice),
        ("total loss (balanced bce)", ScoreLossKind::BalancedCrossEntropy),
    ] {
        let e = check_gradients(&[score.clone(), dist.clone(), angle.clone(), offsets.clone()], h, |t, v| {
            let vars = HeadVars {
                score: v[0],
                distances: v[1],
                angle: v[2],
                quad: v[3],
            };
            Ok(loss_op(t, &vars, &targets, &weights, kind)?.0)
        })
        .unwrap();
        out.push((name, e));
    }
    out
}

/// Random targets with a mix of positives, negatives and masked pixels.
fn loss_targets(rng: &mut impl Rng, h: usize, w: usize) -> Targets {
    let score = Tensor::from_fn(&[1, h, w], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let mask = Tensor::from_fn(&[1, h, w], |_| if rng.gen_bool(0.9) { 1.0 } else { 0.0 });
    Targets {
        score: ScoreMap(score),
        rbox: RBoxGeometry {
            distances: random_tensor(rng, &[4, h, w], 1.0, 12.0),
            angle: random_tensor(rng, &[1, h, w], -0.7, 0.7),
        },
        quad: QuadGeometry {
            offsets: random_tensor(rng, &[8, h, w], -20.0, 20.0),
        },
        training_mask: mask,
        short_edge: random_tensor(rng, &[1, h, w], 0.5, 15.0),
    }
}

pub fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let errors = gradient_errors();
    let elapsed = start.elapsed();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let parts: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::new(
        worst < GRADIENT_TOLERANCE && elapsed < GRADIENT_BUDGET,
        format!("worst {worst:.2e} in {:.1?} [{}]", elapsed, parts.join(", ")),
    )
}

/// Largest deviation of the GOF convolution from the direct loop.
pub fn gof_oracle_error(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = rng.gen_range(1..4);
        let u = [1, 2, 4][rng.gen_range(0..3)];
        let o = rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..3);
        let pad = if rng.gen_bool(0.5) { k / 2 } else { 0 };
        let (h, w) = (rng.gen_range(k..k + 6), rng.gen_range(k..k + 6));
        let x = random_tensor(&mut rng, &[n, u, h, w], -1.0, 1.0);
        let canonical = random_tensor(&mut rng, &[o, n, k, k], -1.0, 1.0);
        // Every fourth instance uses a real Gabor bank instead of random kernels.
        let gabor = if i % 4 == 0 && k >= 3 {
            build_gabor_bank(&GaborParams::new(u, 1, k)).unwrap().scale(0).unwrap()
        } else {
            random_tensor(&mut rng, &[u, k, k], -1.0, 1.0)
        };
        let bias: Vec<f64> = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let (vx, vw) = (tape.leaf(x.clone()), tape.leaf(canonical.clone()));
        let vb = tape.leaf(Tensor::new(&[o], bias.clone()).unwrap());
        let y = gof_conv(&tape, vx, vw, Rc::new(gabor.clone()), Some(vb), Window::new(k, stride, pad)).unwrap();
        let expected = naive_gof(&x, &canonical, &gabor, Some(&bias), stride, pad);
        let got = tape.value(y);
        assert_eq!(got.shape(), expected.shape());
        worst = worst.max(got.max_abs_diff(&expected));
    }
    worst
}

pub fn attention_oracle_error(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let c = rng.gen_range(1..7);
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let f = random_tensor(&mut rng, &[c, h, w], -3.0, 3.0);
        let wt = random_tensor(&mut rng, &[c, c, 1, 1], -1.0, 1.0);
        let b: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = channel_attention(
            &FlatFeatureMap::new(f.clone()).unwrap(),
            &ConvWeights::new(wt.clone(), Some(b.clone())).unwrap(),
        )
        .unwrap();
        worst = worst.max(got.tensor().max_abs_diff(&scalar_attention(&f, &wt, &b)));
    }
    worst
}

/// With identity recurrence and non-negative input every sweep is a running
/// sum. Returns the number of mismatching instances.
pub fn irnn_prefix_mismatches(instances: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let g = rng.gen_range(1..4);
        let (h, w) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let x = Tensor::from_fn(&[g, h, w], |_| rng.gen_range(0..10) as f64);
        let mut eye = Tensor::zeros(&[g, g]);
        for i in 0..g {
            eye.set(&[i, i], 1.0);
        }
        for dir in Direction::ALL {
            let (hidden, _) = irnn_sweep(&x, &eye, dir).unwrap();
            let ok = (0..g).all(|c| {
                (0..h).all(|y| {
                    (0..w).all(|xx| {
                        let expected: f64 = match dir {
                            Direction::FromLeft => (0..=xx).map(|k| x.at(&[c, y, k])).sum(),
                            Direction::FromRight => (xx..w).map(|k| x.at(&[c, y, k])).sum(),
                            Direction::FromTop => (0..=y).map(|k| x.at(&[c, k, xx])).sum(),
                            Direction::FromBottom => (y..h).map(|k| x.at(&[c, k, xx])).sum(),
                        };
                        hidden.at(&[c, y, xx]) == expected
                    })
                })
            });
            if !ok {
                bad += 1;
            }
        }
    }
    bad
}

pub fn iou_oracle_error(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let a = random_convex_quad(&mut rng, [50.0, 50.0], 30.0);
        let c = [50.0 + rng.gen_range(-30.0..30.0), 50.0 + rng.gen_range(-30.0..30.0)];
        let b = if i % 2 == 0 {
            random_convex_quad(&mut rng, c, 30.0)
        } else {
            random_rect(&mut rng, c, 30.0, std::f64::consts::PI)
        };
        worst = worst.max((polygon_iou(&a, &b) - raster_iou(&a, &b, 1000)).abs());
    }
    worst
}

pub fn nms_mismatches(instances: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.gen_range(1..30);
        let polys: Vec<Quad> = (0..n)
            .map(|_| {
                let c = [rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0)];
                random_rect(&mut rng, c, 20.0, 0.8)
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let thr = rng.gen_range(0.1..0.7);
        let iou: Vec<Vec<f64>> = polys
            .iter()
            .map(|a| polys.iter().map(|b| polygon_iou(a, b)).collect())
            .collect();
        if greedy_nms(&polys, &scores, thr) != brute_force_nms(&iou, &scores, thr) {
            bad += 1;
        }
    }
    bad
}

pub fn oracle_suite() -> Outcome {
    let start = Instant::now();
    let gof = gof_oracle_error(INSTANCES, 201);
    let att = attention_oracle_error(INSTANCES, 202);
    let irnn = irnn_prefix_mismatches(INSTANCES, 203);
    let iou = iou_oracle_error(INSTANCES, 204);
    let nms = nms_mismatches(INSTANCES, 205);
    let elapsed = start.elapsed();
    let passed = gof < 1e-10 && att < 1e-12 && irnn == 0 && iou < 5e-3 && nms == 0 && elapsed < ORACLE_BUDGET;
    Outcome::new(
        passed,
        format!(
            "{INSTANCES} instances each in {elapsed:.1?}: gof {gof:.1e}, attention {att:.1e}, irnn prefix mismatches {irnn}, iou vs raster {iou:.1e}, nms mismatches {nms}"
        ),
    )
}

/// Random well-separated rotated rectangles inside a `size × size` image.
pub fn separated_rects(rng: &mut impl Rng, size: f64, count: usize) -> Vec<Quad> {
    let mut rects: Vec<(Quad, [f64; 2], f64)> = Vec::new();
    let mut attempts = 0;
    while rects.len() < count && attempts < 1000 {
        attempts += 1;
        let (hw, hh) = (rng.gen_range(10.0..30.0), rng.gen_range(8.0..16.0));
        let radius = (hw * hw + hh * hh as f64).sqrt();
        let c = [rng.gen_range(radius + 2.0..size - radius - 2.0), rng.gen_range(radius + 2.0..size - radius - 2.0)];
        if rects.iter().any(|(_, o, r)| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() < r + radius + 8.0) {
            continue;
        }
        let angle = rng.gen_range(-0.7..0.7);
        rects.push((frbdet_core::geometry::rbox_corners(c, [hh, hw, hh, hw], angle), c, radius));
    }
    rects.into_iter().map(|r| r.0).collect()
}

/// Decoded boxes matched one-to-one to sources at IoU > 0.9.
fn recovers(sources: &[Quad], found: &[DetectionBox]) -> bool {
    if sources.len() != found.len() {
        return false;
    }
    let adj: Vec<Vec<bool>> = found
        .iter()
        .map(|d| sources.iter().map(|s| polygon_iou(&d.polygon, s) > 0.9).collect())
        .collect();
    brute_force_matching(&adj) == sources.len()
}

/// Images (out of `images`) where encode → decode → NMS failed, per geometry.
pub fn encode_decode_failures(images: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng(seed);
    let (stride, size) = (4, 128);
    let (mut rbox_bad, mut quad_bad) = (0, 0);
    for _ in 0..images {
        let count = rng.gen_range(1..5);
        let rects = separated_rects(&mut rng, size as f64, count);
        let polys: Vec<TextPolygon> = rects.iter().map(|&q| TextPolygon::new(q)).collect();
        let t = encode_ground_truth(&polys, size / stride, size / stride, stride, 0.3).unwrap();
        let score = ScoreMap(t.score.0.clone());
        let rb = locality_aware_nms(&decode_rbox(&score, &t.rbox, 0.5, stride), 0.5, 0.3);
        let qd = locality_aware_nms(&decode_quad(&score, &t.quad, 0.5, stride), 0.5, 0.3);
        rbox_bad += !recovers(&rects, &rb) as usize;
        quad_bad += !recovers(&rects, &qd) as usize;
    }
    (rbox_bad, quad_bad)
}

/// Save, load and compare a forward pass bit for bit.
pub fn checkpoint_forward_identical() -> bool {
    let model = Detector::new(&ModelConfig::default(), 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, 3, &[]).unwrap();
    let back = load_checkpoint(&path).unwrap().model;
    let mut rng = rng(18);
    let img = ImageTensor::new(random_tensor(&mut rng, &[3, 64, 64], 0.0, 1.0)).unwrap();
    let (a, b) = (model.predict(&img).unwrap(), back.predict(&img).unwrap());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    [
        (&a.score.0, &b.score.0),
        (&a.rbox.distances, &b.rbox.distances),
        (&a.rbox.angle, &b.rbox.angle),
        (&a.quad.offsets, &b.quad.offsets),
    ]
    .iter()
    .all(|(x, y)| bits(x) == bits(y))
}

pub fn roundtrip() -> Outcome {
    let images = 50;
    let (rb, qd) = encode_decode_failures(images, 301);
    let ckpt = checkpoint_forward_identical();
    Outcome::new(
        rb == 0 && qd == 0 && ckpt,
        format!("encode/decode failures on {images} images: rbox {rb}, quad {qd}; checkpoint forward bitwise identical: {ckpt}"),
    )
}

/// Configuration of the small overfit run.
pub const OVERFIT_CONFIG: &str = "\
iterations = 500
batch_size = 4
lr = 0.01
grad_clip = 5
lambda_g = 0.25
max_distance = 96
curriculum = on
log_every = 100
";

pub fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let weights = DifficultyWeights::default();
    write_synthetic_dataset(&data, 20, 96, 96, 7, &weights).unwrap();
    let corpus = load_corpus(&data.join(MANIFEST_NAME), &weights).unwrap();
    let cfg = RunConfig::parse(OVERFIT_CONFIG, dir.path()).unwrap();
    assert_eq!((cfg.model.channels, cfg.model.encoder_widths), (32, [16, 32, 64]));
    let mut last = None;
    let trainer = train(&cfg, &corpus, |log| last = Some(log.loss)).unwrap();
    let dets: Vec<Vec<DetectionBox>> = corpus
        .iter()
        .map(|s| detect_image(&trainer.model, &s.image, &cfg.detect).unwrap())
        .collect();
    let gts: Vec<Vec<TextPolygon>> = corpus.iter().map(|s| s.polygons.clone()).collect();
    let r = evaluate(&dets, &gts, 0.5, Matching::Greedy).unwrap();
    let elapsed = start.elapsed();
    Outcome::new(
        r.f_score >= 0.9 && elapsed <= OVERFIT_BUDGET,
        format!(
            "P {:.3} R {:.3} F {:.3} ({} of {} boxes) after {} iterations in {elapsed:.0?}; final loss {:.4}",
            r.precision,
            r.recall,
            r.f_score,
            r.matched,
            r.ground_truths,
            trainer.iteration,
            last.map_or(f64::NAN, |l| l.total)
        ),
    )
}

/// `base · 10^(−k)` written as a decimal literal and parsed, so the expected
/// value is the correctly rounded one.
fn decimal_lr(base: &str, k: usize) -> f64 {
    format!("{base}e-{k}").parse().unwrap()
}

pub fn schedule() -> Outcome {
    let mut lr_ok = true;
    for base in ["0.01", "0.002"] {
        let b: f64 = base.parse().unwrap();
        for t in [0, 1, 7_500, 14_999, 15_000, 15_001, 29_999, 30_000, 44_999, 45_000, 60_000] {
            lr_ok &= learning_rate(b, t, 15_000, 10.0) == decimal_lr(base, t / 15_000);
        }
    }
    let cfg = RunConfig::parse("iterations = 900", std::path::Path::new(".")).unwrap();
    let stages = cfg.curriculum.stages();
    let monotone = stages
        .windows(2)
        .all(|w| w[0].start < w[1].start && w[0].blur <= w[1].blur && w[0].mask <= w[1].mask && w[0].cutoff <= w[1].cutoff);
    let mut prev = cfg.curriculum.stage_at(0).clone();
    let mut over_time = true;
    for t in 0..900 {
        let s = cfg.curriculum.stage_at(t).clone();
        over_time &= s.blur >= prev.blur && s.mask >= prev.mask;
        prev = s;
    }
    let stage = |start, blur| CurriculumStage {
        start,
        blur,
        mask: 0.0,
        cutoff: 1.0,
    };
    let rejects = CurriculumSchedule::new(vec![stage(0, 0.2), stage(10, 0.1)]).is_err();
    Outcome::new(
        lr_ok && monotone && over_time && rejects,
        format!(
            "lr exact at stage boundaries: {lr_ok}; default stages non-decreasing: {monotone}; per-iteration fractions non-decreasing: {over_time}; decreasing schedule rejected: {rejects}"
        ),
    )
}

fn square(x: f64, y: f64, s: f64) -> Quad {
    [[x, y], [x + s, y], [x + s, y + s], [x, y + s]]
}

fn det(x: f64, y: f64, s: f64, score: f64) -> DetectionBox {
    DetectionBox {
        polygon: square(x, y, s),
        score,
    }
}

/// Five images covering exact hits, a duplicate, an ignored region, a
/// near miss and an empty image. Matched 3 of 6 counted detections and
/// 5 counted ground truths, so P = 1/2, R = 3/5, F = 6/11.
pub fn hand_built_case() -> (Vec<Vec<DetectionBox>>, Vec<Vec<TextPolygon>>) {
    let gts = vec![
        vec![TextPolygon::new(square(0.0, 0.0, 10.0)), TextPolygon::new(square(50.0, 0.0, 10.0))],
        vec![TextPolygon::new(square(0.0, 0.0, 10.0))],
        vec![TextPolygon::new(square(0.0, 0.0, 10.0)), TextPolygon::ignored(square(50.0, 50.0, 10.0))],
        vec![TextPolygon::new(square(0.0, 0.0, 10.0))],
        vec![],
    ];
    let dets = vec![
        // Both found.
        vec![det(0.0, 0.0, 10.0, 0.9), det(50.0, 0.0, 10.0, 0.8)],
        // IoU 90/110 matches; the duplicate (IoU 80/120) finds its gt taken.
        vec![det(1.0, 0.0, 10.0, 0.9), det(2.0, 0.0, 10.0, 0.7)],
        // Inside the ignored region: dropped. The far box is a false positive.
        vec![det(51.0, 51.0, 8.0, 0.9), det(100.0, 100.0, 10.0, 0.6)],
        // IoU 60/140 < 0.5.
        vec![det(4.0, 0.0, 10.0, 0.9)],
        vec![],
    ];
    (dets, gts)
}

/// Greedy matches, optimal matches, per random instance.
pub fn greedy_vs_optimal(instances: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = rng(seed);
    (0..instances)
        .map(|_| {
            let n_gt = rng.gen_range(1..7);
            let gts: Vec<Quad> = (0..n_gt)
                .map(|_| {
                    let c = [rng.gen_range(20.0..60.0), rng.gen_range(20.0..60.0)];
                    random_rect(&mut rng, c, 15.0, 0.5)
                })
                .collect();
            let mut dets = Vec::new();
            for g in &gts {
                if rng.gen_bool(0.8) {
                    dets.push(DetectionBox {
                        polygon: g.map(|[x, y]| [x + rng.gen_range(-4.0..4.0), y + rng.gen_range(-4.0..4.0)]),
                        score: rng.gen_range(0.0..1.0),
                    });
                }
            }
            for _ in 0..rng.gen_range(0..3) {
                let c = [rng.gen_range(20.0..60.0), rng.gen_range(20.0..60.0)];
                dets.push(DetectionBox {
                    polygon: random_rect(&mut rng, c, 15.0, 0.5),
                    score: rng.gen_range(0.0..1.0),
                });
            }
            let polys: Vec<TextPolygon> = gts.iter().map(|&q| TextPolygon::new(q)).collect();
            let greedy = match_image(&dets, &polys, 0.5, Matching::Greedy).matches.len();
            let kuhn = match_image(&dets, &polys, 0.5, Matching::Optimal).matches.len();
            let adj: Vec<Vec<bool>> = dets
                .iter()
                .map(|d| gts.iter().map(|g| polygon_iou(&d.polygon, g) >= 0.5).collect())
                .collect();
            (greedy, kuhn, brute_force_matching(&adj))
        })
        .collect()
}

pub fn eval_harness() -> Outcome {
    let (dets, gts) = hand_built_case();
    let r = evaluate(&dets, &gts, 0.5, Matching::Greedy).unwrap();
    let exact = r.matched == 3
        && r.detections == 6
        && r.ground_truths == 5
        && r.precision == 0.5
        && r.recall == 0.6
        && (r.f_score - 6.0 / 11.0).abs() < 1e-15;
    let runs = greedy_vs_optimal(INSTANCES, 401);
    let within = runs.iter().all(|&(g, _, best)| g + 1 >= best && g <= best);
    let kuhn = runs.iter().all(|&(_, k, best)| k == best);
    let gap = runs.iter().filter(|&&(g, _, best)| g < best).count();
    Outcome::new(
        exact && within && kuhn,
        format!(
            "hand-built P {} R {} F {:.6} (expect 0.5, 0.6, {:.6}); greedy within 1 of optimal on {}/{INSTANCES} ({gap} below optimal); Kuhn optimal: {kuhn}",
            r.precision,
            r.recall,
            r.f_score,
            6.0 / 11.0,
            runs.iter().filter(|&&(g, _, best)| g + 1 >= best).count()
        ),
    )
}
