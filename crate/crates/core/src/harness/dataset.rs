//! `Images/` + `GT/` dataset directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio;
use crate::viewgen::{resize_image, Image};

#[derive(Debug, Clone)]
pub struct Sample {
    pub stem: String,
    pub image_path: PathBuf,
    /// Resized to the training resolution.
    pub image: Image,
    pub mask: Array2<bool>,
    /// `(height, width)` of the source image.
    pub source_size: (usize, usize),
}

fn list(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if let (Some(ext), Some(stem)) = (ext, path.file_stem().and_then(|s| s.to_str())) {
            if exts.contains(&ext.as_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Image files under `root/Images`, sorted by stem.
pub fn list_images(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let images = list(&root.join("Images"), &["jpg", "jpeg", "png"])?;
    if images.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(images.into_iter().collect())
}

/// Nearest-neighbour mask resize.
pub fn resize_mask(mask: &Array2<bool>, out_h: usize, out_w: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| mask[[(y * h / out_h).min(h - 1), (x * w / out_w).min(w - 1)]])
}

/// Loads every image with its mask, resized to `size x size`, in stem order.
pub fn load_dataset(root: &Path, size: usize) -> Result<Vec<Sample>> {
    let masks = list(&root.join("GT"), &["png"])?;
    list_images(root)?
        .into_iter()
        .map(|(stem, image_path)| {
            let mask_path = masks.get(&stem).ok_or_else(|| Error::MissingMask(image_path.clone()))?;
            let rgb = imageio::read_rgb(&image_path)?;
            let (h, w, _) = rgb.dim();
            let mask = imageio::read_mask(mask_path)?;
            Ok(Sample {
                stem,
                image: resize_image(&rgb, size, size),
                mask: resize_mask(&mask, size, size),
                source_size: (h, w),
                image_path,
            })
        })
        .collect()
}

/// Seeded split holding out `fraction` of the pool (at least one sample when the pool
/// has two or more and the fraction is positive).
pub fn split_train_val<T: Clone>(pool: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = pool.len();
    let mut val_n = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        val_n = val_n.clamp(1, n - 1);
    } else {
        val_n = 0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx = idx[..val_n].to_vec();
    let mut train_idx = idx[val_n..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    (train_idx.iter().map(|&i| pool[i].clone()).collect(), val_idx.iter().map(|&i| pool[i].clone()).collect())
}
