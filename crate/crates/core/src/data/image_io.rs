use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> ImageTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let t = Tensor::from_fn(&[3, h, w], |i| {
        let (c, yx) = (i / plane, i % plane);
        img.get_pixel((yx % w) as u32, (yx / w) as u32)[c] as f64 / 255.0
    });
    ImageTensor::new(t).expect("three channels")
}

pub fn to_rgb8(image: &ImageTensor) -> RgbImage {
    let (h, w) = (image.height(), image.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| {
            (image.pixel(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

pub fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    to_rgb8(image).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Round every value to the nearest multiple of 1/255 so an 8-bit PNG
/// roundtrip is lossless.
pub fn quantize(image: &mut ImageTensor) {
    for v in image.tensor_mut().data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}
