mod common;

use std::f64::consts::FRAC_PI_4;

use frbdet_core::data::{
    curriculum_iter, load_corpus, mask_extent, write_synthetic_dataset, BatchOptions, CurriculumSchedule,
    CurriculumStage, DifficultyWeights, MANIFEST_NAME,
};
use frbdet_core::gabor::{build_gabor_bank, modulate_weights, GaborParams};
use frbdet_core::geometry::{
    canonical_order, contains_point, encode_ground_truth, locality_aware_nms, min_area_rect, polygon_area,
    polygon_iou, rbox_corners, shrink_quad, DetectionBox, Quad, TextPolygon,
};
use frbdet_core::head::{
    dice_loss_grad, quad_loss, rbox_loss, QuadGeometry, RBoxGeometry, ScoreMap,
};
use frbdet_core::layers::ConvWeights;
use frbdet_core::mfrm::{channel_attention, compatibility_weights, irnn_sweep, Direction};
use frbdet_core::model::{Detector, ModelConfig};
use frbdet_core::tensor::{FlatFeatureMap, ImageTensor, Tensor};
use frbdet_core::train::{evaluate, learning_rate, Matching};
use proptest::prelude::*;

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn rect() -> impl Strategy<Value = Quad> {
    (10.0..90.0f64, 10.0..90.0f64, 2.0..30.0f64, 2.0..30.0f64, -1.5..1.5f64)
        .prop_map(|(x, y, hw, hh, a)| rbox_corners([x, y], [hh, hw, hh, hw], a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modulation_is_linear(
        w1 in tensor(&[2, 3, 3, 3], -1.0, 1.0),
        w2 in tensor(&[2, 3, 3, 3], -1.0, 1.0),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let bank = build_gabor_bank(&GaborParams::new(4, 2, 3)).unwrap();
        let mixed = w1.zip_map(&w2, |x, y| a * x + b * y);
        for v in 0..2 {
            let lhs = modulate_weights(&mixed, &bank, v).unwrap();
            let m1 = modulate_weights(&w1, &bank, v).unwrap();
            let m2 = modulate_weights(&w2, &bank, v).unwrap();
            let rhs = m1.zip_map(&m2, |x, y| a * x + b * y);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn attention_never_amplifies(
        f in tensor(&[3, 4, 4], -5.0, 5.0),
        w in tensor(&[3, 3, 1, 1], -2.0, 2.0),
    ) {
        let out = channel_attention(
            &FlatFeatureMap::new(f.clone()).unwrap(),
            &ConvWeights::new(w, Some(vec![0.0; 3])).unwrap(),
        )
        .unwrap();
        for (y, x) in out.tensor().data().iter().zip(f.data()) {
            prop_assert!(y.abs() <= x.abs());
            if *x != 0.0 {
                prop_assert!(y.abs() < x.abs());
            }
        }
    }

    #[test]
    fn rightward_sweep_ignores_later_columns(
        x in tensor(&[2, 3, 6], -1.0, 1.0),
        rec in tensor(&[2, 2], -0.8, 0.8),
        col in 0usize..5,
        delta in -3.0..3.0f64,
    ) {
        let (before, _) = irnn_sweep(&x, &rec, Direction::FromLeft).unwrap();
        let mut y = x.clone();
        for c in 0..2 {
            for r in 0..3 {
                for k in col + 1..6 {
                    y.set(&[c, r, k], y.at(&[c, r, k]) + delta);
                }
            }
        }
        let (after, _) = irnn_sweep(&y, &rec, Direction::FromLeft).unwrap();
        for c in 0..2 {
            for r in 0..3 {
                for k in 0..=col {
                    prop_assert_eq!(before.at(&[c, r, k]), after.at(&[c, r, k]));
                }
            }
        }
    }

    #[test]
    fn compatibilities_sum_to_one(logits in tensor(&[5, 5], -20.0, 20.0)) {
        let w = compatibility_weights(&logits);
        for (i, row) in w.iter().enumerate() {
            prop_assert_eq!(row[i], 0.0);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn iou_symmetric_bounded_reflexive(a in rect(), b in rect()) {
        let (ab, ba) = (polygon_iou(&a, &b), polygon_iou(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((polygon_iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_output_is_mutually_separated(
        boxes in prop::collection::vec((rect(), 0.01..1.0f64), 1..25),
        merge in 0.3..0.9f64,
        keep in 0.1..0.6f64,
    ) {
        let dets: Vec<DetectionBox> = boxes.into_iter().map(|(polygon, score)| DetectionBox { polygon, score }).collect();
        let out = locality_aware_nms(&dets, merge, keep);
        prop_assert!(!out.is_empty());
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                prop_assert!(polygon_iou(&out[i].polygon, &out[j].polygon) <= keep);
            }
        }
    }

    #[test]
    fn canonical_order_is_idempotent_and_clockwise(q in rect(), shift in 0usize..4) {
        let rotated: Quad = std::array::from_fn(|k| q[(k + shift) % 4]);
        let c = canonical_order(&rotated);
        prop_assert_eq!(canonical_order(&c), c);
        prop_assert_eq!(c, canonical_order(&q));
        let first = c[0][0] + c[0][1];
        prop_assert!(c.iter().all(|p| p[0] + p[1] >= first));
    }

    #[test]
    fn min_rect_angle_in_half_open_range(q in rect()) {
        let (theta, [u0, u1, v0, v1]) = min_area_rect(&q);
        prop_assert!(theta > -FRAC_PI_4 - 1e-12 && theta <= FRAC_PI_4 + 1e-12);
        prop_assert!(((u1 - u0) * (v1 - v0) - polygon_area(&q)).abs() < 1e-6 * polygon_area(&q).max(1.0));
    }

    #[test]
    fn shrunk_quad_lies_inside(q in rect(), r in 0.0..0.45f64) {
        let s = shrink_quad(&q, r);
        prop_assert!(polygon_area(&s) <= polygon_area(&q) + 1e-9);
        let centre = [(s[0][0] + s[2][0]) / 2.0, (s[0][1] + s[2][1]) / 2.0];
        for p in s {
            // Nudge toward the centre so boundary points count as inside.
            let p = [p[0] + 1e-7 * (centre[0] - p[0]), p[1] + 1e-7 * (centre[1] - p[1])];
            prop_assert!(contains_point(&q, p));
        }
    }

    #[test]
    fn encoded_distances_nonnegative_on_text(q in rect()) {
        let t = encode_ground_truth(&[TextPolygon::new(q)], 25, 25, 4, 0.3).unwrap();
        let plane = 25 * 25;
        for i in 0..plane {
            if t.score.0.data()[i] > 0.5 {
                for c in 0..4 {
                    prop_assert!(t.rbox.distances.data()[c * plane + i] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn losses_nonnegative_zero_when_perfect_and_pixel_order_free(
        score in tensor(&[1, 4, 4], 0.01, 0.99),
        dist in tensor(&[4, 4, 4], 0.5, 10.0),
        gt_dist in tensor(&[4, 4, 4], 0.5, 10.0),
        angle in tensor(&[1, 4, 4], -0.7, 0.7),
        offsets in tensor(&[8, 4, 4], -10.0, 10.0),
        gt_offsets in tensor(&[8, 4, 4], -10.0, 10.0),
        gt_bits in prop::collection::vec(any::<bool>(), 16),
        seed in any::<u64>(),
    ) {
        let gt = ScoreMap(Tensor::new(&[1, 4, 4], gt_bits.iter().map(|&b| b as u8 as f64).collect()).unwrap());
        let mask = Tensor::full(&[1, 4, 4], 1.0);
        let short = Tensor::full(&[1, 4, 4], 6.0);
        let pred_r = RBoxGeometry { distances: dist.clone(), angle: angle.clone() };
        let gt_r = RBoxGeometry { distances: gt_dist.clone(), angle: Tensor::zeros(&[1, 4, 4]) };
        let ls = dice_loss_grad(&ScoreMap(score.clone()), &gt, &mask).unwrap().0;
        let lr = rbox_loss(&pred_r, &gt_r, &gt.0, 10.0).unwrap();
        let lq = quad_loss(&QuadGeometry { offsets: offsets.clone() }, &QuadGeometry { offsets: gt_offsets.clone() }, &gt.0, &short).unwrap();
        prop_assert!(ls >= 0.0 && lr >= 0.0 && lq >= 0.0);

        prop_assert!(rbox_loss(&gt_r, &gt_r, &gt.0, 10.0).unwrap().abs() < 1e-12);
        prop_assert_eq!(quad_loss(&QuadGeometry { offsets: gt_offsets.clone() }, &QuadGeometry { offsets: gt_offsets.clone() }, &gt.0, &short).unwrap(), 0.0);
        if gt_bits.iter().any(|&b| b) {
            prop_assert!(dice_loss_grad(&gt, &gt, &mask).unwrap().0.abs() < 1e-12);
        }

        // Shuffle pixels consistently across every map.
        let mut perm: Vec<usize> = (0..16).collect();
        let mut r = common::rng(seed);
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let shuffle = |t: &Tensor| {
            let ch = t.shape()[0];
            Tensor::from_fn(t.shape(), |i| t.data()[(i / 16) * 16 + perm[i % 16]]).reshape(&[ch, 4, 4]).unwrap()
        };
        let gt_p = ScoreMap(shuffle(&gt.0));
        let ls_p = dice_loss_grad(&ScoreMap(shuffle(&score)), &gt_p, &mask).unwrap().0;
        let lr_p = rbox_loss(
            &RBoxGeometry { distances: shuffle(&dist), angle: shuffle(&angle) },
            &RBoxGeometry { distances: shuffle(&gt_dist), angle: Tensor::zeros(&[1, 4, 4]) },
            &gt_p.0,
            10.0,
        )
        .unwrap();
        let lq_p = quad_loss(&QuadGeometry { offsets: shuffle(&offsets) }, &QuadGeometry { offsets: shuffle(&gt_offsets) }, &gt_p.0, &short).unwrap();
        prop_assert!((ls - ls_p).abs() < 1e-12 && (lr - lr_p).abs() < 1e-12 && (lq - lq_p).abs() < 1e-12);
    }

    #[test]
    fn schedule_accepted_iff_monotone(
        blur in prop::collection::vec(0.0..1.0f64, 3),
        mask in prop::collection::vec(0.0..1.0f64, 3),
        cutoff in prop::collection::vec(0.0..1.0f64, 3),
    ) {
        let stages: Vec<CurriculumStage> = (0..3)
            .map(|i| CurriculumStage { start: 10 * i, blur: blur[i], mask: mask[i], cutoff: cutoff[i] })
            .collect();
        let monotone = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        let expected = monotone(&blur) && monotone(&mask) && monotone(&cutoff);
        prop_assert_eq!(CurriculumSchedule::new(stages).is_ok(), expected);
    }

    #[test]
    fn lr_divides_by_ten_per_block(t in 0usize..200_000) {
        let lr = learning_rate(0.01, t, 15_000, 10.0);
        prop_assert_eq!(lr, 0.01 / 10f64.powi((t / 15_000) as i32));
        prop_assert!(lr <= learning_rate(0.01, t.saturating_sub(1), 15_000, 10.0));
    }

    #[test]
    fn mask_extent_matches_area_fraction(w in 4usize..200, h in 4usize..200, f in 0.01..0.5f64) {
        let (mw, mh) = mask_extent(w, h, f);
        prop_assert!(mw <= w && mh <= h);
        let target = f * (w * h) as f64;
        // Rounding each side moves the area by at most about one row or column.
        prop_assert!(((mw * mh) as f64 - target).abs() <= (w + h) as f64);
    }
}

#[test]
fn head_angles_stay_in_range() {
    let cfg = ModelConfig {
        orientations: 2,
        encoder_widths: [4, 4, 8],
        channels: 4,
        decoder_channels: vec![8, 6, 4, 2],
        ..Default::default()
    };
    let mut rng = common::rng(5);
    for seed in 0..4 {
        let model = Detector::new(&cfg, seed).unwrap();
        let img = ImageTensor::new(common::random_tensor(&mut rng, &[3, 32, 64], 0.0, 1.0)).unwrap();
        let out = model.predict(&img).unwrap();
        assert!(out.rbox.angle.data().iter().all(|a| a.abs() <= FRAC_PI_4));
        assert!(out.score.0.data().iter().all(|s| *s > 0.0 && *s < 1.0));
        assert!(out.rbox.distances.data().iter().all(|d| *d >= 0.0));
    }
}

#[test]
fn augmentation_keeps_geometry_and_batches_are_pure() {
    let dir = tempfile::tempdir().unwrap();
    let weights = DifficultyWeights::default();
    write_synthetic_dataset(dir.path(), 6, 64, 64, 3, &weights).unwrap();
    let corpus = load_corpus(&dir.path().join(MANIFEST_NAME), &weights).unwrap();
    let schedule = CurriculumSchedule::three_stage(30, [0.0, 0.1, 0.2], [0.6, 0.8, 1.0]).unwrap();
    let opts = BatchOptions {
        batch_size: 3,
        seed: 9,
        stride: 4,
        shrink: 0.3,
    };
    for it in [0, 12, 25] {
        let batch = curriculum_iter(&schedule, &corpus, it, &opts).unwrap();
        assert_eq!(batch, curriculum_iter(&schedule, &corpus, it, &opts).unwrap());
        for s in &batch {
            assert_eq!(s.polygons, corpus[s.index].polygons);
            let clean = encode_ground_truth(&corpus[s.index].polygons, 16, 16, 4, 0.3).unwrap();
            assert_eq!(s.targets, clean);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_bounded_and_independent_of_gt_order(
        gts in prop::collection::vec(rect(), 0..6),
        dets in prop::collection::vec((rect(), 0.01..1.0f64), 0..6),
        rotate in 0usize..6,
    ) {
        let polys: Vec<TextPolygon> = gts.iter().map(|&q| TextPolygon::new(q)).collect();
        let boxes: Vec<DetectionBox> = dets.into_iter().map(|(polygon, score)| DetectionBox { polygon, score }).collect();
        let mut reordered = polys.clone();
        if !reordered.is_empty() {
            let k = rotate % reordered.len();
            reordered.rotate_left(k);
            reordered.reverse();
        }
        let a = evaluate(&[boxes.clone()], &[polys], 0.5, Matching::Greedy).unwrap();
        let b = evaluate(&[boxes], &[reordered], 0.5, Matching::Greedy).unwrap();
        prop_assert_eq!((a.matched, a.precision, a.recall, a.f_score), (b.matched, b.precision, b.recall, b.f_score));
        for v in [a.precision, a.recall, a.f_score] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn stronger_shrink_never_adds_positives(q in rect(), r1 in 0.0..0.45f64, r2 in 0.0..0.45f64) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let count = |r| {
            let t = encode_ground_truth(&[TextPolygon::new(q)], 25, 25, 4, r).unwrap();
            t.score.0.data().iter().filter(|v| **v > 0.5).count()
        };
        prop_assert!(count(hi) <= count(lo));
    }
}
