//! PNG/JPEG reading and writing between disk and the in-memory map types.

use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::viewgen::Image;

/// Mask pixels at or above this 8-bit value are foreground.
pub const MASK_THRESHOLD: u8 = 128;

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::UnreadableImage { path: path.to_path_buf(), reason: e.to_string() })
}

/// RGB image scaled to `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// 8-bit grayscale values.
pub fn read_gray_u8(path: &Path) -> Result<Array2<u8>> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0]))
}

/// Grayscale map scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    Ok(read_gray_u8(path)?.mapv(|v| v as f64 / 255.0))
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    Ok(binarize(&read_gray_u8(path)?))
}

pub fn binarize(gray: &Array2<u8>) -> Array2<bool> {
    gray.mapv(|v| v >= MASK_THRESHOLD)
}

/// Writes `round(255 p)` as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(map[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| Error::UnreadableImage { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    let (h, w, _) = img.dim();
    let out = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (img[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    out.save(path).map_err(|e| Error::UnreadableImage { path: path.to_path_buf(), reason: e.to_string() })
}
