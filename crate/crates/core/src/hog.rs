//! Scale-normalized eye patches, their HoG descriptors, and the binary
//! HoG-difference features used as split tests in the cascade.
//!
//! A patch is a `W x W` grid sampled from the image rescaled by
//! `s = e_hog / |E_inter|`, so every face is seen at the same interocular
//! distance. The grid is aligned with the interocular axis, which makes the
//! descriptor independent of in-plane head roll.

use rand::seq::index;
use rand::Rng;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{EyeAnchor, Point2};
use crate::imgproc::{rescale, ImageF32, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Eye {
    Right,
    Left,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::Right, Eye::Left];

    pub fn index(self) -> usize {
        match self {
            Eye::Right => 0,
            Eye::Left => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Right => "right",
            Eye::Left => "left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogConfig {
    /// Interocular distance, in pixels, that every face is rescaled to.
    pub e_hog: f64,
    /// Patch side as a fraction of `e_hog`.
    pub patch_fraction: f64,
    pub cells_per_side: usize,
    pub orientation_bins: usize,
    /// Split each gradient's vote between the two nearest orientation bins.
    pub soft_binning: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            e_hog: 100.0,
            patch_fraction: 0.4,
            cells_per_side: 4,
            orientation_bins: 6,
            soft_binning: false,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_hog.is_finite() && self.e_hog > 0.0) {
            return Err(Error::InvalidInput("e_hog must be positive".into()));
        }
        if !(self.patch_fraction > 0.0 && self.patch_fraction <= 1.0) {
            return Err(Error::InvalidInput("patch_fraction must lie in (0, 1]".into()));
        }
        if self.cells_per_side == 0 || self.orientation_bins == 0 {
            return Err(Error::InvalidInput("HoG cell and bin counts must be positive".into()));
        }
        if self.patch_size() < self.cells_per_side {
            return Err(Error::InvalidInput("patch smaller than one pixel per cell".into()));
        }
        Ok(())
    }

    /// Patch side `W` in pixels.
    pub fn patch_size(&self) -> usize {
        (self.patch_fraction * self.e_hog).round().max(1.0) as usize
    }

    /// Descriptor length of one eye.
    pub fn descriptor_len(&self) -> usize {
        self.cells_per_side * self.cells_per_side * self.orientation_bins
    }

    /// Scale factor `s` that maps the face to the reference interocular distance.
    pub fn scale_for(&self, anchor: &EyeAnchor) -> Result<f64> {
        let d = anchor.inter_ocular_distance();
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidLandmarks(
                "non-positive interocular distance".into(),
            ));
        }
        Ok(self.e_hog / d)
    }
}

/// A square grid of intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.size + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f32>,
}

impl HogDescriptor {
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &HogDescriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

enum Source<'a> {
    /// Upsampling: read the original image at sub-pixel steps of `1/s`.
    Original(&'a GrayImage),
    /// Downsampling: an anti-aliased rescaled copy of a region of interest.
    Rescaled { image: ImageF32, origin: Point2 },
}

/// An image prepared for repeated patch extraction at one face's scale.
pub struct ScaledView<'a> {
    source: Source<'a>,
    scale: f64,
    axis: Point2,
    cfg: HogConfig,
}

impl<'a> ScaledView<'a> {
    pub fn new(image: &'a GrayImage, anchor: &EyeAnchor, cfg: &HogConfig) -> Result<Self> {
        cfg.validate()?;
        if image.width == 0 || image.height == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        let scale = cfg.scale_for(anchor)?;
        let source = if scale >= 1.0 {
            Source::Original(image)
        } else {
            // Only the face region is rescaled; the margin covers any
            // plausible shape estimate plus half a patch.
            let d = anchor.inter_ocular_distance();
            let lo_x = anchor.c_right.x.min(anchor.c_left.x) - d;
            let lo_y = anchor.c_right.y.min(anchor.c_left.y) - d;
            let hi_x = anchor.c_right.x.max(anchor.c_left.x) + d;
            let hi_y = anchor.c_right.y.max(anchor.c_left.y) + d;
            let x0 = (lo_x.floor() as i64).clamp(0, image.width as i64 - 1);
            let y0 = (lo_y.floor() as i64).clamp(0, image.height as i64 - 1);
            let x1 = (hi_x.ceil() as i64).clamp(x0, image.width as i64 - 1);
            let y1 = (hi_y.ceil() as i64).clamp(y0, image.height as i64 - 1);
            let roi = ImageF32::crop(image, x0, y0, (x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
            Source::Rescaled {
                image: rescale(&roi, scale),
                origin: Point2::new(x0 as f64, y0 as f64),
            }
        };
        Ok(ScaledView {
            source,
            scale,
            axis: anchor.axis(),
            cfg: *cfg,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn config(&self) -> &HogConfig {
        &self.cfg
    }

    /// Samples the `W x W` patch centered at `center` (image pixels) into `out`.
    pub fn patch_into(&self, center: Point2, out: &mut Vec<f32>) {
        let w = self.cfg.patch_size();
        let half = 0.5 * (w as f64 - 1.0);
        let u = self.axis;
        let v = u.perp();
        out.clear();
        out.reserve(w * w);
        match &self.source {
            Source::Original(img) => {
                let step = 1.0 / self.scale;
                for j in 0..w {
                    let oy = (j as f64 - half) * step;
                    for i in 0..w {
                        let ox = (i as f64 - half) * step;
                        let p = center + u * ox + v * oy;
                        out.push(img.bilinear(p.x, p.y));
                    }
                }
            }
            Source::Rescaled { image, origin } => {
                let c = (center - *origin) * self.scale;
                for j in 0..w {
                    let oy = j as f64 - half;
                    for i in 0..w {
                        let ox = i as f64 - half;
                        let p = c + u * ox + v * oy;
                        out.push(image.bilinear(p.x, p.y));
                    }
                }
            }
        }
    }

    pub fn patch(&self, center: Point2) -> Patch {
        let mut data = Vec::new();
        self.patch_into(center, &mut data);
        Patch {
            size: self.cfg.patch_size(),
            data,
        }
    }

    /// Writes the descriptor of the patch at `center` into `out`, reusing
    /// `scratch` for the pixels.
    pub fn descriptor_into(&self, center: Point2, scratch: &mut Vec<f32>, out: &mut [f32]) {
        self.patch_into(center, scratch);
        hog_into(scratch, self.cfg.patch_size(), &self.cfg, out);
    }

    pub fn descriptor(&self, center: Point2) -> HogDescriptor {
        let mut values = vec![0.0; self.cfg.descriptor_len()];
        self.descriptor_into(center, &mut Vec::new(), &mut values);
        HogDescriptor { values }
    }
}

/// Extracts the scale-normalized patch centered at `center` (image pixels).
pub fn extract_patch(
    image: &GrayImage,
    center: Point2,
    anchor: &EyeAnchor,
    cfg: &HogConfig,
) -> Result<Patch> {
    if !center.is_finite() {
        return Err(Error::NonFinite("patch center"));
    }
    Ok(ScaledView::new(image, anchor, cfg)?.patch(center))
}

pub fn compute_hog(patch: &Patch, cfg: &HogConfig) -> HogDescriptor {
    let mut values = vec![0.0; cfg.descriptor_len()];
    hog_into(&patch.data, patch.size, cfg, &mut values);
    HogDescriptor { values }
}

/// Unit directions of the interior bin boundaries, for hard binning without
/// trigonometry.
fn bin_boundaries(bins: usize) -> Vec<(f32, f32)> {
    (1..bins)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / bins as f64;
            (a.cos() as f32, a.sin() as f32)
        })
        .collect()
}

fn hog_into(pixels: &[f32], size: usize, cfg: &HogConfig, out: &mut [f32]) {
    let cells = cfg.cells_per_side;
    let bins = cfg.orientation_bins;
    debug_assert_eq!(pixels.len(), size * size);
    debug_assert_eq!(out.len(), cells * cells * bins);
    out.iter_mut().for_each(|v| *v = 0.0);
    let boundaries = bin_boundaries(bins);
    let bin_width = std::f32::consts::PI / bins as f32;
    let last = size - 1;
    for y in 0..size {
        let cy = y * cells / size;
        let up = &pixels[y.saturating_sub(1) * size..][..size];
        let down = &pixels[(y + 1).min(last) * size..][..size];
        let row = &pixels[y * size..][..size];
        for x in 0..size {
            let gx = 0.5 * (row[(x + 1).min(last)] - row[x.saturating_sub(1)]);
            let gy = 0.5 * (down[x] - up[x]);
            let mag = (gx * gx + gy * gy).sqrt();
            // Interpolation round-off on flat regions, not structure.
            if mag < 1e-3 {
                continue;
            }
            let cell = (cy * cells + x * cells / size) * bins;
            // Unsigned orientation: fold into the half plane gy >= 0.
            let (fx, fy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) {
                (-gx, -gy)
            } else {
                (gx, gy)
            };
            if cfg.soft_binning {
                let theta = fy.atan2(fx).clamp(0.0, std::f32::consts::PI);
                let pos = theta / bin_width - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let b0 = (lo as i64).rem_euclid(bins as i64) as usize;
                let b1 = (b0 + 1) % bins;
                out[cell + b0] += mag * (1.0 - frac);
                out[cell + b1] += mag * frac;
            } else {
                let bin = boundaries
                    .iter()
                    .filter(|(cx, cy)| cx * fy - cy * fx >= 0.0)
                    .count();
                out[cell + bin] += mag;
            }
        }
    }
    let norm = out.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    if norm >= 1e-12 {
        let inv = (1.0 / norm) as f32;
        out.iter_mut().for_each(|v| *v = (*v * inv).min(1.0));
    }
}

/// Binary split test `h[dim_a] - h[dim_b] > threshold` on one eye's descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffFeature {
    pub eye: Eye,
    pub dim_a: u16,
    pub dim_b: u16,
    pub threshold: f32,
}

impl DiffFeature {
    pub fn eval(&self, right: &HogDescriptor, left: &HogDescriptor) -> bool {
        let h = match self.eye {
            Eye::Right => &right.values,
            Eye::Left => &left.values,
        };
        h[self.dim_a as usize] - h[self.dim_b as usize] > self.threshold
    }

    /// Evaluates against the concatenation `[right | left]` of both descriptors,
    /// each `len` long.
    #[inline]
    pub fn eval_packed(&self, packed: &[f32], len: usize) -> bool {
        let base = self.eye.index() * len;
        packed[base + self.dim_a as usize] - packed[base + self.dim_b as usize] > self.threshold
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.dim_a == self.dim_b {
            return Err(Error::Invariant("split feature compares a dimension with itself".into()));
        }
        if self.dim_a as usize >= len || self.dim_b as usize >= len {
            return Err(Error::Invariant(format!(
                "split feature dimension out of range for descriptor length {len}"
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Invariant("non-finite split threshold".into()));
        }
        Ok(())
    }
}

/// Draws `k` random split features over descriptors of length `len`.
pub fn sample_pool(rng: &mut impl Rng, k: usize, threshold_range: (f32, f32), len: usize) -> Vec<DiffFeature> {
    assert!(len >= 2, "descriptor too short for a difference feature");
    (0..k)
        .map(|_| {
            let eye = if rng.random_bool(0.5) { Eye::Left } else { Eye::Right };
            let dims = index::sample(rng, len, 2);
            let threshold = if threshold_range.0 < threshold_range.1 {
                rng.random_range(threshold_range.0..threshold_range.1)
            } else {
                threshold_range.0
            };
            DiffFeature {
                eye,
                dim_a: dims.index(0) as u16,
                dim_b: dims.index(1) as u16,
                threshold,
            }
        })
        .collect()
}
