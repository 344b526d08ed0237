//! Multi-view input generation and the inverse alignment of per-view feature maps.
//!
//! Each view is a geometric transform of the input image behind the [`ViewTransform`]
//! trait. Transforms are registered by tag in a [`ViewRegistry`] so configurations can name
//! them as strings (`original`, `diagonal`, `vertical`, `close:1.5`, `far:0.5`,
//! `perspective:x1,y1,x2,y2,x3,y3,u1,v1,u2,v2,u3,v3`).
//!
//! "Diagonal" is reflection across the main diagonal (a transpose), which needs square
//! inputs and inverts exactly on feature maps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ops;

/// `height x width x channels` image with values in `[0, 1]`.
pub type Image = Array3<f32>;

/// Minimum spacing between resize ratios of distance views.
pub const MIN_RATIO_GAP: f64 = 0.5;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub enum ViewKind {
    Original,
    DiagonalFlip,
    VerticalFlip,
    Close(f64),
    Far(f64),
    /// Affine view given by three source points and their targets, in pixel coordinates of
    /// the base image.
    Perspective { src: [Point; 3], dst: [Point; 3] },
}

/// Which attention branch a view feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewFamily {
    Original,
    Angle,
    Distance,
}

impl ViewKind {
    pub fn family(&self) -> ViewFamily {
        match self {
            ViewKind::Original => ViewFamily::Original,
            ViewKind::DiagonalFlip | ViewKind::VerticalFlip | ViewKind::Perspective { .. } => {
                ViewFamily::Angle
            }
            ViewKind::Close(_) | ViewKind::Far(_) => ViewFamily::Distance,
        }
    }

    /// Spatial scale of this view relative to the base image.
    pub fn scale(&self) -> f64 {
        match self {
            ViewKind::Close(r) | ViewKind::Far(r) => *r,
            _ => 1.0,
        }
    }

    /// Output size of this view for a `height x width` base image.
    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let r = self.scale();
        ((r * height as f64).round() as usize, (r * width as f64).round() as usize)
    }

    pub fn transform(&self) -> Result<Box<dyn ViewTransform>> {
        ViewRegistry::standard().build(&self.to_string())
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewKind::Original => write!(f, "original"),
            ViewKind::DiagonalFlip => write!(f, "diagonal"),
            ViewKind::VerticalFlip => write!(f, "vertical"),
            ViewKind::Close(r) => write!(f, "close:{r}"),
            ViewKind::Far(r) => write!(f, "far:{r}"),
            ViewKind::Perspective { src, dst } => {
                let nums: Vec<String> =
                    src.iter().chain(dst.iter()).flat_map(|p| [p.0, p.1]).map(|v| v.to_string()).collect();
                write!(f, "perspective:{}", nums.join(","))
            }
        }
    }
}

impl FromStr for ViewKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(ViewRegistry::standard().build(s)?.kind())
    }
}

impl Serialize for ViewKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ViewKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where an aligned feature map must land: the original view's level grid and the base
/// image it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignTarget {
    pub height: usize,
    pub width: usize,
    pub base_height: usize,
    pub base_width: usize,
}

pub trait ViewTransform: Send + Sync {
    fn kind(&self) -> ViewKind;

    /// Produces the view image from the base image.
    fn apply(&self, img: &Image) -> Result<Image>;

    /// Maps a feature map of this view onto the original view's feature grid.
    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor>;
}

struct OriginalView;

impl ViewTransform for OriginalView {
    fn kind(&self) -> ViewKind {
        ViewKind::Original
    }

    fn apply(&self, img: &Image) -> Result<Image> {
        Ok(img.clone())
    }

    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor> {
        check_level(feat, target)?;
        Ok(feat.clone())
    }
}

struct DiagonalFlipView;

impl ViewTransform for DiagonalFlipView {
    fn kind(&self) -> ViewKind {
        ViewKind::DiagonalFlip
    }

    fn apply(&self, img: &Image) -> Result<Image> {
        flip_diagonal(img)
    }

    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor> {
        check_level(feat, target)?;
        ops::transpose_spatial(feat)
    }
}

struct VerticalFlipView;

impl ViewTransform for VerticalFlipView {
    fn kind(&self) -> ViewKind {
        ViewKind::VerticalFlip
    }

    fn apply(&self, img: &Image) -> Result<Image> {
        Ok(flip_vertical(img))
    }

    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor> {
        check_level(feat, target)?;
        ops::flip_rows(feat)
    }
}

struct ResizeView {
    kind: ViewKind,
}

impl ViewTransform for ResizeView {
    fn kind(&self) -> ViewKind {
        self.kind.clone()
    }

    fn apply(&self, img: &Image) -> Result<Image> {
        resize_view(img, self.kind.scale())
    }

    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor> {
        ops::resize_bilinear(feat, target.height, target.width)
    }
}

struct PerspectiveView {
    src: [Point; 3],
    dst: [Point; 3],
    forward: Affine,
}

impl ViewTransform for PerspectiveView {
    fn kind(&self) -> ViewKind {
        ViewKind::Perspective { src: self.src, dst: self.dst }
    }

    fn apply(&self, img: &Image) -> Result<Image> {
        perspective_view(img, self.src, self.dst)
    }

    fn align(&self, feat: &Tensor, target: AlignTarget) -> Result<Tensor> {
        check_level(feat, target)?;
        let sy = target.base_height as f64 / target.height as f64;
        let sx = target.base_width as f64 / target.width as f64;
        // level pixel -> base pixel -> forward map -> level pixel of the warped view
        let coords: Vec<Point> = (0..target.height)
            .flat_map(|v| (0..target.width).map(move |u| (u, v)))
            .map(|(u, v)| {
                let base = ((u as f64 + 0.5) * sx - 0.5, (v as f64 + 0.5) * sy - 0.5);
                let (bx, by) = self.forward.apply(base);
                ((bx + 0.5) / sx - 0.5, (by + 0.5) / sy - 0.5)
            })
            .collect();
        ops::sample_bilinear(feat, &coords, target.height, target.width)
    }
}

fn check_level(feat: &Tensor, target: AlignTarget) -> Result<()> {
    let (_, _, h, w) = feat.dims4()?;
    if (h, w) != (target.height, target.width) {
        return Err(Error::DimMismatch(format!(
            "feature map {h}x{w} does not match level {}x{}",
            target.height, target.width
        )));
    }
    Ok(())
}

type ViewBuilder = fn(Option<&str>) -> Result<Box<dyn ViewTransform>>;

/// Tag -> constructor table for view transforms.
pub struct ViewRegistry {
    builders: BTreeMap<&'static str, ViewBuilder>,
}

impl ViewRegistry {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("original", |arg| no_arg("original", arg).map(|_| Box::new(OriginalView) as _));
        r.register("diagonal", |arg| no_arg("diagonal", arg).map(|_| Box::new(DiagonalFlipView) as _));
        r.register("vertical", |arg| no_arg("vertical", arg).map(|_| Box::new(VerticalFlipView) as _));
        r.register("close", |arg| {
            let ratio = parse_ratio("close", arg)?;
            if ratio <= 1.0 {
                return Err(Error::InvalidRatio(format!("close ratio must exceed 1, got {ratio}")));
            }
            Ok(Box::new(ResizeView { kind: ViewKind::Close(ratio) }))
        });
        r.register("far", |arg| {
            let ratio = parse_ratio("far", arg)?;
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::InvalidRatio(format!("far ratio must lie in (0, 1), got {ratio}")));
            }
            Ok(Box::new(ResizeView { kind: ViewKind::Far(ratio) }))
        });
        r.register("perspective", |arg| {
            let nums = arg
                .ok_or_else(|| Error::UnknownView("perspective needs 12 coordinates".into()))?
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::UnknownView(format!("perspective: {e}")))?;
            if nums.len() != 12 {
                return Err(Error::UnknownView(format!(
                    "perspective needs 12 coordinates, got {}",
                    nums.len()
                )));
            }
            let pt = |i: usize| (nums[2 * i], nums[2 * i + 1]);
            let src = [pt(0), pt(1), pt(2)];
            let dst = [pt(3), pt(4), pt(5)];
            let forward = Affine::from_points(src, dst)?;
            Ok(Box::new(PerspectiveView { src, dst, forward }))
        });
        r
    }

    pub fn register(&mut self, tag: &'static str, builder: ViewBuilder) {
        self.builders.insert(tag, builder);
    }

    pub fn tags(&self) -> impl Iterator<Item = &&'static str> {
        self.builders.keys()
    }

    pub fn build(&self, spec: &str) -> Result<Box<dyn ViewTransform>> {
        let spec = spec.trim();
        let (tag, arg) = match spec.split_once(':') {
            Some((t, a)) => (t.trim(), Some(a.trim())),
            None => (spec, None),
        };
        let builder =
            self.builders.get(tag.to_ascii_lowercase().as_str()).ok_or_else(|| Error::UnknownView(spec.into()))?;
        builder(arg)
    }
}

fn no_arg(tag: &str, arg: Option<&str>) -> Result<()> {
    match arg {
        None => Ok(()),
        Some(a) => Err(Error::UnknownView(format!("{tag} takes no argument, got `{a}`"))),
    }
}

fn parse_ratio(tag: &str, arg: Option<&str>) -> Result<f64> {
    let a = arg.ok_or_else(|| Error::InvalidRatio(format!("{tag} needs a ratio, e.g. {tag}:1.5")))?;
    let r: f64 = a.parse().map_err(|_| Error::InvalidRatio(format!("{tag}:{a}")))?;
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::InvalidRatio(format!("{tag}:{a}")));
    }
    Ok(r)
}

/// `x' = a x + b y + c`, `y' = d x + e y + f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [f64; 6],
}

impl Affine {
    pub fn identity() -> Self {
        Self { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] }
    }

    /// The unique affine map sending each `src[k]` to `dst[k]`.
    pub fn from_points(src: [Point; 3], dst: [Point; 3]) -> Result<Self> {
        let det3 = |p: [Point; 3]| {
            p[0].0 * (p[1].1 - p[2].1) - p[0].1 * (p[1].0 - p[2].0) + (p[1].0 * p[2].1 - p[2].0 * p[1].1)
        };
        let scale = |p: [Point; 3]| p.iter().map(|q| q.0.abs().max(q.1.abs())).fold(1.0, f64::max);
        let ds = det3(src);
        if ds.abs() <= 1e-9 * scale(src).powi(2) || det3(dst).abs() <= 1e-9 * scale(dst).powi(2) {
            return Err(Error::CollinearPoints);
        }
        // Cramer's rule on [x y 1] * [a b c]^T = x'
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let base = [[src[0].0, src[0].1, 1.0], [src[1].0, src[1].1, 1.0], [src[2].0, src[2].1, 1.0]];
        let d = det(base);
        let solve = |rhs: [f64; 3]| {
            let mut out = [0.0; 3];
            for (k, o) in out.iter_mut().enumerate() {
                let mut m = base;
                for i in 0..3 {
                    m[i][k] = rhs[i];
                }
                *o = det(m) / d;
            }
            out
        };
        let [a, b, c] = solve([dst[0].0, dst[1].0, dst[2].0]);
        let [d, e, f] = solve([dst[0].1, dst[1].1, dst[2].1]);
        Ok(Self { m: [a, b, c, d, e, f] })
    }

    pub fn apply(&self, p: Point) -> Point {
        let [a, b, c, d, e, f] = self.m;
        (a * p.0 + b * p.1 + c, d * p.0 + e * p.1 + f)
    }

    pub fn inverse(&self) -> Result<Self> {
        let [a, b, c, d, e, f] = self.m;
        let det = a * e - b * d;
        if det.abs() < 1e-12 {
            return Err(Error::CollinearPoints);
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Self { m: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)] })
    }
}

pub fn flip_vertical(img: &Image) -> Image {
    let mut out = img.clone();
    out.invert_axis(Axis(0));
    out.as_standard_layout().to_owned()
}

pub fn flip_diagonal(img: &Image) -> Result<Image> {
    let (h, w, _) = img.dim();
    if h != w {
        return Err(Error::NonSquareInput { height: h, width: w });
    }
    Ok(img.clone().permuted_axes([1, 0, 2]).as_standard_layout().to_owned())
}

/// Bilinear resize to `round(ratio * size)` per axis.
pub fn resize_view(img: &Image, ratio: f64) -> Result<Image> {
    let (h, w, _) = img.dim();
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidRatio(ratio.to_string()));
    }
    let oh = (ratio * h as f64).round() as usize;
    let ow = (ratio * w as f64).round() as usize;
    if oh < 1 || ow < 1 {
        return Err(Error::DegenerateSize { height: h, width: w, ratio });
    }
    Ok(resize_image(img, oh, ow))
}

/// Bilinear resize with half-pixel centers.
pub fn resize_image(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w, c) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let ty = ops::interp_taps(h, out_h);
    let tx = ops::interp_taps(w, out_w);
    Image::from_shape_fn((out_h, out_w, c), |(y, x, ch)| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let top = img[[y0, x0, ch]] as f64 * (1.0 - fx) + img[[y0, x1, ch]] as f64 * fx;
        let bot = img[[y1, x0, ch]] as f64 * (1.0 - fx) + img[[y1, x1, ch]] as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// Applies the affine map taking `src_pts` to `dst_pts`; pixels mapped from outside the
/// frame are zero.
pub fn perspective_view(img: &Image, src_pts: [Point; 3], dst_pts: [Point; 3]) -> Result<Image> {
    let inv = Affine::from_points(src_pts, dst_pts)?.inverse()?;
    Ok(warp_image(img, &inv))
}

/// `out[y, x] = img(inverse(x, y))` with bilinear sampling and zero fill.
pub fn warp_image(img: &Image, inverse: &Affine) -> Image {
    let (h, w, c) = img.dim();
    let sample = |sx: f64, sy: f64, ch: usize| -> f64 {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let mut acc = 0.0;
        for (dx, dy, wt) in [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)] {
            let (px, py) = (x0 + dx, y0 + dy);
            if wt != 0.0 && px >= 0.0 && py >= 0.0 && (px as usize) < w && (py as usize) < h {
                acc += wt * img[[py as usize, px as usize, ch]] as f64;
            }
        }
        acc
    };
    Image::from_shape_fn((h, w, c), |(y, x, ch)| {
        let (sx, sy) = inverse.apply((x as f64, y as f64));
        sample(sx, sy, ch) as f32
    })
}

pub fn default_views() -> Vec<ViewKind> {
    vec![ViewKind::Original, ViewKind::DiagonalFlip, ViewKind::VerticalFlip, ViewKind::Close(1.5), ViewKind::Close(2.0)]
}

/// Checks a view configuration: one original view, no duplicates, valid distance ratios.
pub fn validate_views(config: &[ViewKind]) -> Result<()> {
    if config.iter().filter(|k| **k == ViewKind::Original).count() != 1 {
        return Err(Error::MissingOriginal);
    }
    for (i, a) in config.iter().enumerate() {
        if config[..i].contains(a) {
            return Err(Error::DuplicateView(a.to_string()));
        }
        a.transform()?;
    }
    let ratios: Vec<f64> = config.iter().filter(|k| k.family() == ViewFamily::Distance).map(ViewKind::scale).collect();
    for (i, a) in ratios.iter().enumerate() {
        for b in &ratios[i + 1..] {
            if (a - b).abs() < MIN_RATIO_GAP - 1e-12 {
                return Err(Error::InvalidRatio(format!(
                    "distance ratios {a} and {b} are closer than {MIN_RATIO_GAP}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ViewSet {
    pub views: Vec<(ViewKind, Image)>,
    pub base_size: (usize, usize),
}

impl ViewSet {
    pub fn get(&self, kind: &ViewKind) -> Option<&Image> {
        self.views.iter().find(|(k, _)| k == kind).map(|(_, img)| img)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

pub fn generate_views(img: &Image, config: &[ViewKind]) -> Result<ViewSet> {
    validate_views(config)?;
    let (h, w, _) = img.dim();
    let views = config
        .iter()
        .map(|kind| Ok((kind.clone(), kind.transform()?.apply(img)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet { views, base_size: (h, w) })
}

/// Maps a feature map of view `kind` onto the original view's grid.
pub fn align_feature(feat: &Tensor, kind: &ViewKind, target: AlignTarget) -> Result<Tensor> {
    kind.transform()?.align(feat, target)
}

/// Stacks equally sized images into a `(batch, channels, height, width)` tensor.
pub fn stack_images(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let (h, w, c) = images.first().map(|i| i.dim()).ok_or_else(|| Error::DimMismatch("no images".into()))?;
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dim() != (h, w, c) {
            return Err(Error::DimMismatch(format!("image {:?} differs from {:?}", img.dim(), (h, w, c))));
        }
        data.extend(img.view().permuted_axes([2, 0, 1]).iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img2x2() -> Image {
        Image::from_shape_vec((2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0)
    }

    #[test]
    fn vertical_flip_reverses_rows() {
        let out = flip_vertical(&img2x2());
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0, 1.0, 2.0]);
        let r = ramp(5, 3);
        assert_eq!(flip_vertical(&flip_vertical(&r)), r);
        let uniform = Image::from_elem((4, 4, 3), 0.3);
        assert_eq!(flip_vertical(&uniform), uniform);
    }

    #[test]
    fn diagonal_flip_transposes() {
        let out = flip_diagonal(&img2x2()).unwrap();
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 2.0, 4.0]);
        let r = ramp(6, 6);
        assert_eq!(flip_diagonal(&flip_diagonal(&r).unwrap()).unwrap(), r);
        let sym = Image::from_shape_fn((4, 4, 1), |(y, x, _)| (y + x) as f32);
        assert_eq!(flip_diagonal(&sym).unwrap(), sym);
        assert!(matches!(flip_diagonal(&ramp(3, 4)), Err(Error::NonSquareInput { .. })));
    }

    #[test]
    fn resize_sizes_and_identity() {
        let base = ramp(384, 384);
        assert_eq!(resize_view(&base, 1.5).unwrap().dim(), (576, 576, 3));
        assert_eq!(resize_view(&base, 2.0).unwrap().dim(), (768, 768, 3));
        let small = ramp(9, 7);
        let same = resize_view(&small, 1.0).unwrap();
        let dev = same.iter().zip(small.iter()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(dev <= 1e-6);
        assert!(matches!(resize_view(&small, 0.01), Err(Error::DegenerateSize { .. })));
        let up = resize_view(&small, 1.5).unwrap();
        assert!(up.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn perspective_identity_and_translation() {
        let img = ramp(20, 30);
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        assert_eq!(perspective_view(&img, pts, pts).unwrap(), img);
        let shifted = pts.map(|(x, y)| (x + 10.0, y));
        let out = perspective_view(&img, pts, shifted).unwrap();
        for y in 0..20 {
            for x in 0..30 {
                for c in 0..3 {
                    let expect = if x < 10 { 0.0 } else { img[[y, x - 10, c]] };
                    assert_eq!(out[[y, x, c]], expect);
                }
            }
        }
        let line = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert!(matches!(perspective_view(&img, line, pts), Err(Error::CollinearPoints)));
        assert!(matches!(perspective_view(&img, pts, line), Err(Error::CollinearPoints)));
    }

    #[test]
    fn perspective_round_trip_restores_interior() {
        let img = Image::from_shape_fn((48, 48, 3), |(y, x, c)| {
            (0.5 + 0.4 * ((x as f32 * 0.21 + c as f32).sin() * (y as f32 * 0.17).cos())) as f32
        });
        let src = [(10.0, 10.0), (38.0, 12.0), (12.0, 36.0)];
        let dst = [(12.0, 9.0), (37.0, 14.0), (10.0, 37.0)];
        let fwd = perspective_view(&img, src, dst).unwrap();
        let back = perspective_view(&fwd, dst, src).unwrap();
        let mut worst = 0f32;
        for y in 12..36 {
            for x in 12..36 {
                for c in 0..3 {
                    worst = worst.max((back[[y, x, c]] - img[[y, x, c]]).abs());
                }
            }
        }
        assert!(worst < 0.05, "round trip deviation {worst}");
    }

    #[test]
    fn default_views_have_expected_shapes() {
        let set = generate_views(&ramp(384, 384), &default_views()).unwrap();
        let sizes: Vec<usize> = set.views.iter().map(|(_, i)| i.dim().0).collect();
        assert_eq!(sizes, vec![384, 384, 384, 576, 768]);
        let single = generate_views(&ramp(8, 8), &[ViewKind::Original]).unwrap();
        assert_eq!(single.len(), 1);
        let angle = generate_views(&ramp(8, 8), &[ViewKind::Original, ViewKind::DiagonalFlip, ViewKind::VerticalFlip]).unwrap();
        assert_eq!(angle.len(), 3);
    }

    #[test]
    fn view_config_errors() {
        let img = ramp(8, 8);
        assert!(matches!(generate_views(&img, &[ViewKind::VerticalFlip]), Err(Error::MissingOriginal)));
        assert!(matches!(
            generate_views(&img, &[ViewKind::Original, ViewKind::VerticalFlip, ViewKind::VerticalFlip]),
            Err(Error::DuplicateView(_))
        ));
        assert!(matches!(
            generate_views(&ramp(8, 6), &[ViewKind::Original, ViewKind::DiagonalFlip]),
            Err(Error::NonSquareInput { .. })
        ));
        assert!(matches!(
            validate_views(&[ViewKind::Original, ViewKind::Close(1.5), ViewKind::Close(1.8)]),
            Err(Error::InvalidRatio(_))
        ));
        assert!(validate_views(&default_views()).is_ok());
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["original", "diagonal", "vertical", "close:1.5", "far:0.5", "perspective:0,0,10,0,0,10,1,0,11,1,0,10"] {
            let kind: ViewKind = tag.parse().unwrap();
            assert_eq!(kind.to_string().parse::<ViewKind>().unwrap(), kind);
        }
        assert!("close:0.8".parse::<ViewKind>().is_err());
        assert!("far:1.2".parse::<ViewKind>().is_err());
        assert!("sideways".parse::<ViewKind>().is_err());
    }

    fn feat(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::randn(0f64, 1.0, (1, c, h, w), &Device::Cpu).unwrap()
    }

    fn target(h: usize, base: usize) -> AlignTarget {
        AlignTarget { height: h, width: h, base_height: base, base_width: base }
    }

    #[test]
    fn align_inverts_flips_exactly() {
        let f = feat(3, 6, 6);
        let t = target(6, 12);
        let v = align_feature(&ops::flip_rows(&f).unwrap(), &ViewKind::VerticalFlip, t).unwrap();
        assert_eq!(v.flatten_all().unwrap().to_vec1::<f64>().unwrap(), f.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        let d = align_feature(&ops::transpose_spatial(&f).unwrap(), &ViewKind::DiagonalFlip, t).unwrap();
        assert_eq!(d.flatten_all().unwrap().to_vec1::<f64>().unwrap(), f.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        let o = align_feature(&f, &ViewKind::Original, t).unwrap();
        assert_eq!(o.flatten_all().unwrap().to_vec1::<f64>().unwrap(), f.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        assert!(matches!(
            align_feature(&feat(2, 4, 6), &ViewKind::DiagonalFlip, AlignTarget { height: 4, width: 6, base_height: 8, base_width: 12 }),
            Err(Error::NonSquareInput { .. })
        ));
    }

    #[test]
    fn align_close_view_downsamples() {
        let f = feat(4, 24, 24);
        let out = align_feature(&f, &ViewKind::Close(2.0), target(12, 384)).unwrap();
        assert_eq!(out.dims(), &[1, 4, 12, 12]);
    }

    #[test]
    fn align_perspective_translation_matches_shift() {
        // base 32, level stride 4: a shift of 8 base pixels is 2 level pixels
        let src = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)];
        let dst = src.map(|(x, y)| (x + 8.0, y));
        let kind = ViewKind::Perspective { src, dst };
        let f = feat(2, 8, 8);
        let out = align_feature(&f, &kind, target(8, 32)).unwrap();
        let fv = f.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        let ov = out.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        for c in 0..2 {
            for y in 0..8 {
                for x in 0..8 {
                    let expect = if x + 2 < 8 { fv[c][y][x + 2] } else { 0.0 };
                    assert!((ov[c][y][x] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
