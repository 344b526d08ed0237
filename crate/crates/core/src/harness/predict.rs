//! Inference: probability maps at the source resolution, written as 8-bit PNGs.

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imageio::{read_rgb, write_gray};
use crate::layers::Mode;
use crate::model::Model;
use crate::ops::{resize_bilinear, sigmoid};
use crate::viewgen::resize_image;

use super::train::DTYPE;

/// Sigmoid of the logits, bilinearly resized to the source image size.
pub fn predict_image(model: &Model, image_path: &Path) -> Result<Array2<f64>> {
    let rgb = read_rgb(image_path)?;
    let (h, w, _) = rgb.dim();
    let size = model.config().image_size;
    let logits = model.forward(&[&resize_image(&rgb, size, size)], DTYPE, Mode::Eval)?;
    let p = resize_bilinear(&sigmoid(&logits)?, h, w)?.clamp(0.0, 1.0)?;
    to_map(&p)
}

fn to_map(p: &Tensor) -> Result<Array2<f64>> {
    let (_, _, h, w) = p.dims4()?;
    let data = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Array2::from_shape_vec((h, w), data).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Predicts `image_path` and writes `out_path`.
pub fn predict(model: &Model, image_path: &Path, out_path: &Path) -> Result<Array2<f64>> {
    let map = predict_image(model, image_path)?;
    write_gray(out_path, &map)?;
    Ok(map)
}

/// Predicts every image in `input` (a dataset root with `Images/`, or a plain directory of
/// images) into `out_dir/<stem>.png`.
pub fn predict_dir(model: &Model, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = if input.join("Images").is_dir() { input.join("Images") } else { input.to_path_buf() };
    let mut images: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        })
        .collect();
    if images.is_empty() {
        return Err(Error::EmptyDataset(dir));
    }
    images.sort();
    images
        .iter()
        .map(|img| {
            let stem = img.file_stem().and_then(|s| s.to_str()).unwrap_or("pred");
            let out = out_dir.join(format!("{stem}.png"));
            predict(model, img, &out)?;
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{read_gray_u8, write_rgb};
    use crate::model::ModelConfig;
    use crate::params::ParamStore;
    use crate::viewgen::Image;

    #[test]
    fn output_matches_source_size() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("Images/x.png");
        write_rgb(&src, &Image::from_shape_fn((45, 70, 3), |(y, x, c)| ((x + y + c) % 9) as f32 / 8.0)).unwrap();
        let mut ps = ParamStore::new(DTYPE, 1);
        let model = Model::new(&mut ps, &ModelConfig::tiny()).unwrap();
        let outs = predict_dir(&model, dir.path(), &dir.path().join("pred")).unwrap();
        assert_eq!(outs.len(), 1);
        let png = read_gray_u8(&outs[0]).unwrap();
        assert_eq!(png.dim(), (45, 70));
        assert!(matches!(predict(&model, &dir.path().join("none.png"), &dir.path().join("o.png")), Err(Error::UnreadableImage { .. })));
    }
}
