//! Seeded synthetic camouflage scenes: a textured background with an elliptical object
//! drawn from a similar texture at a slightly shifted colour.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imageio::{write_gray, write_rgb};
use crate::viewgen::Image;

struct Texture {
    base: [f32; 3],
    waves: Vec<(f32, f32, f32, f32)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, base: [f32; 3]) -> Self {
        let waves = (0..4)
            .map(|_| (rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4), rng.gen_range(0.0..6.3), rng.gen_range(0.03..0.08)))
            .collect();
        Self { base, waves }
    }

    fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        let v: f32 = self.waves.iter().map(|&(fy, fx, ph, amp)| amp * (fy * y as f32 + fx * x as f32 + ph + c as f32).sin()).sum();
        (self.base[c] + v).clamp(0.0, 1.0)
    }
}

/// One scene and its mask.
pub fn synth_scene(rng: &mut ChaCha8Rng, height: usize, width: usize) -> (Image, Array2<bool>) {
    let bg_base: [f32; 3] = [rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.6), rng.gen_range(0.2..0.5)];
    let mut fg_base = bg_base;
    let ch = rng.gen_range(0..3);
    fg_base[ch] = (fg_base[ch] + if rng.gen_bool(0.5) { 0.25 } else { -0.25 }).clamp(0.0, 1.0);
    let bg = Texture::random(rng, bg_base);
    let fg = Texture::random(rng, fg_base);
    let (h, w) = (height as f32, width as f32);
    let cy = rng.gen_range(0.3..0.7) * h;
    let cx = rng.gen_range(0.3..0.7) * w;
    let ry = rng.gen_range(0.15..0.3) * h;
    let rx = rng.gen_range(0.15..0.3) * w;
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let (s, c) = theta.sin_cos();
    let mask = Array2::from_shape_fn((height, width), |(y, x)| {
        let dy = y as f32 + 0.5 - cy;
        let dx = x as f32 + 0.5 - cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    });
    let noise: Vec<f32> = (0..height * width * 3).map(|_| rng.gen_range(-0.02..0.02)).collect();
    let img = Image::from_shape_fn((height, width, 3), |(y, x, ch)| {
        let t = if mask[[y, x]] { &fg } else { &bg };
        (t.at(y, x, ch) + noise[(y * width + x) * 3 + ch]).clamp(0.0, 1.0)
    });
    (img, mask)
}

/// Writes `count` scenes as `root/Images/NNNN.png` and `root/GT/NNNN.png`.
pub fn generate(root: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (img, mask) = synth_scene(&mut rng, height, width);
        let name = format!("{i:04}.png");
        write_rgb(&root.join("Images").join(&name), &img)?;
        write_gray(&root.join("GT").join(&name), &mask.mapv(|m| m as u8 as f64))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_seeded_and_nondegenerate() {
        let a = synth_scene(&mut ChaCha8Rng::seed_from_u64(1), 40, 48);
        let b = synth_scene(&mut ChaCha8Rng::seed_from_u64(1), 40, 48);
        assert_eq!(a.0, b.0);
        let fg = a.1.iter().filter(|m| **m).count();
        assert!(fg > 0 && fg < 40 * 48);
        assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
