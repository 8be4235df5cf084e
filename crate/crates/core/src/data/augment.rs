//! Pixel-wise blurring and mask-and-predict occlusion.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::TextPolygon;
use crate::tensor::ImageTensor;

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// 3×3 Gaussian (σ = 1) weights, row-major.
fn gaussian_3x3() -> [f64; 9] {
    std::array::from_fn(|i| {
        let (dy, dx) = ((i / 3) as f64 - 1.0, (i % 3) as f64 - 1.0);
        (-(dx * dx + dy * dy) / 2.0).exp()
    })
}

/// Number of sites [`apply_pixel_blur`] replaces.
pub fn blur_site_count(height: usize, width: usize, fraction: f64) -> usize {
    ((fraction * (height * width) as f64).floor() as usize).min(height * width)
}

/// Replace `⌊fraction·H·W⌋` seeded pixel sites by the Gaussian-weighted mean of
/// their 3×3 neighbourhood in the input (weights renormalised at borders).
pub fn apply_pixel_blur(image: &ImageTensor, fraction: f64, seed: u64) -> Result<ImageTensor> {
    check_fraction(fraction)?;
    let (h, w) = (image.height(), image.width());
    let count = blur_site_count(h, w, fraction);
    let mut out = image.clone();
    if count == 0 {
        return Ok(out);
    }
    let kernel = gaussian_3x3();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = sample(&mut rng, h * w, count);
    let plane = h * w;
    let src = image.tensor().data();
    let dst = out.tensor_mut().data_mut();
    for site in sites.iter() {
        let (y, x) = (site / w, site % w);
        for c in 0..3 {
            let center = src[c * plane + site];
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let (yy, xx) = (y as isize + (k / 3) as isize - 1, x as isize + (k % 3) as isize - 1);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                acc += wt * (src[c * plane + yy as usize * w + xx as usize] - center);
                norm += wt;
            }
            // Written relative to the centre so a flat patch stays bitwise flat.
            dst[c * plane + site] = center + acc / norm;
        }
    }
    Ok(out)
}

/// Per-channel mean of the image.
pub fn mean_color(image: &ImageTensor) -> [f64; 3] {
    let plane = image.height() * image.width();
    std::array::from_fn(|c| image.tensor().data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
}

/// Size of the occluding rectangle for a `box_w × box_h` bounding box.
pub fn mask_extent(box_w: usize, box_h: usize, fraction: f64) -> (usize, usize) {
    if fraction <= 0.0 || box_w == 0 || box_h == 0 {
        return (0, 0);
    }
    let mw = ((fraction.sqrt() * box_w as f64).round() as usize).clamp(1, box_w);
    let mh = ((fraction * (box_w * box_h) as f64 / mw as f64).round() as usize).min(box_h);
    (mw, mh)
}

/// Fill a seeded sub-rectangle covering `fraction` of each non-ignored
/// polygon's bounding box with the image's mean colour. Ground truth is untouched.
pub fn apply_mask(image: &ImageTensor, polygons: &[TextPolygon], fraction: f64, seed: u64) -> Result<ImageTensor> {
    check_fraction(fraction)?;
    let mut out = image.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let (h, w) = (image.height(), image.width());
    let plane = h * w;
    let fill = mean_color(image);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for poly in polygons.iter().filter(|p| !p.ignore) {
        let xs = poly.vertices.map(|p| p[0]);
        let ys = poly.vertices.map(|p| p[1]);
        let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        let x0 = clampi(xs.iter().copied().fold(f64::INFINITY, f64::min).floor(), w);
        let x1 = clampi(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil(), w);
        let y0 = clampi(ys.iter().copied().fold(f64::INFINITY, f64::min).floor(), h);
        let y1 = clampi(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil(), h);
        let (bw, bh) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
        let (mw, mh) = mask_extent(bw, bh, fraction);
        if mw == 0 || mh == 0 {
            continue;
        }
        let ox = x0 + rng.gen_range(0..=bw - mw);
        let oy = y0 + rng.gen_range(0..=bh - mh);
        let data = out.tensor_mut().data_mut();
        for y in oy..oy + mh {
            for x in ox..ox + mw {
                for (c, v) in fill.iter().enumerate() {
                    data[c * plane + y * w + x] = *v;
                }
            }
        }
    }
    Ok(out)
}
