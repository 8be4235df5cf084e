//! Inference on single images and box overlays.

use image::{Rgb, RgbImage};

use super::config::{DetectOptions, GeometryKind};
use crate::data::{mean_color, to_rgb8};
use crate::error::Result;
use crate::geometry::{decode_quad, decode_rbox, locality_aware_nms, DetectionBox, Quad};
use crate::model::Detector;
use crate::tensor::{ImageTensor, Tensor};

/// Pad on the bottom/right with the mean colour up to multiples of 32.
pub fn pad_to_multiple(image: &ImageTensor, multiple: usize) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    let ph = h.div_ceil(multiple).max(1) * multiple;
    let pw = w.div_ceil(multiple).max(1) * multiple;
    if (ph, pw) == (h, w) {
        return image.clone();
    }
    let fill = mean_color(image);
    let t = Tensor::from_fn(&[3, ph, pw], |i| {
        let (c, y, x) = (i / (ph * pw), (i / pw) % ph, i % pw);
        if y < h && x < w {
            image.pixel(c, y, x)
        } else {
            fill[c]
        }
    });
    ImageTensor::new(t).expect("finite")
}

/// Network → geometry decode → locality-aware NMS.
pub fn detect_image(model: &Detector, image: &ImageTensor, opts: &DetectOptions) -> Result<Vec<DetectionBox>> {
    let padded = pad_to_multiple(image, 32);
    let out = model.predict(&padded)?;
    let stride = model.config.output_stride();
    let raw = match opts.geometry {
        GeometryKind::Rbox => decode_rbox(&out.score, &out.rbox, opts.score_threshold, stride),
        GeometryKind::Quad => decode_quad(&out.score, &out.quad, opts.score_threshold, stride),
    };
    Ok(locality_aware_nms(&raw, opts.merge_iou, opts.nms_iou))
}

fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: Rgb<u8>) {
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// The image with each box outlined in red.
pub fn annotate(image: &ImageTensor, boxes: &[DetectionBox]) -> RgbImage {
    let mut img = to_rgb8(image);
    let red = Rgb([255, 0, 0]);
    for b in boxes {
        let q: &Quad = &b.polygon;
        for k in 0..4 {
            draw_line(&mut img, q[k], q[(k + 1) % 4], red);
        }
    }
    img
}
