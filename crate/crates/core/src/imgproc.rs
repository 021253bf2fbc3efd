//! Small float-image toolkit: clamped bilinear sampling, separable Gaussian
//! blur, anti-aliased rescaling and gradient fields over a region of interest.

use crate::data::GrayImage;
use crate::geometry::Point2;

/// Read access to a single-channel raster with edge clamping.
pub trait Raster {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    /// Pixel value at integer coordinates, which must be in bounds.
    fn value(&self, x: usize, y: usize) -> f32;

    fn clamped(&self, x: i64, y: i64) -> f32 {
        let xi = x.clamp(0, self.width() as i64 - 1) as usize;
        let yi = y.clamp(0, self.height() as i64 - 1) as usize;
        self.value(xi, yi)
    }

    /// Bilinear interpolation with pixel centers at integer coordinates.
    /// Samples outside the raster take the nearest edge value.
    fn bilinear(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width() - 1) as f64);
        let y = y.clamp(0.0, (self.height() - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let p00 = self.clamped(xi, yi);
        let p10 = self.clamped(xi + 1, yi);
        let p01 = self.clamped(xi, yi + 1);
        let p11 = self.clamped(xi + 1, yi + 1);
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }
}

impl Raster for GrayImage {
    fn width(&self) -> usize {
        self.width as usize
    }
    fn height(&self) -> usize {
        self.height as usize
    }
    #[inline]
    fn value(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width as usize + x] as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster for ImageF32 {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline]
    fn value(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

impl ImageF32 {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF32 {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        ImageF32 {
            width: img.width as usize,
            height: img.height as usize,
            data: img.pixels.iter().map(|&p| p as f32).collect(),
        }
    }

    /// Copies the window `[x0, x0+w) x [y0, y0+h)` of `src`, clamping at its edges.
    pub fn crop(src: &impl Raster, x0: i64, y0: i64, w: usize, h: usize) -> Self {
        let mut out = ImageF32::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = src.clamped(x0 + x as i64, y0 + y as i64);
            }
        }
        out
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with edge clamping. `sigma <= 0` returns a copy.
pub fn gaussian_blur(src: &ImageF32, sigma: f64) -> ImageF32 {
    if sigma <= 0.0 || src.data.is_empty() {
        return src.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (src.width, src.height);
    let mut tmp = ImageF32::new(w, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x as i64 + j as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * row[xx];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = ImageF32::new(w, h);
    for y in 0..h {
        for (j, kv) in k.iter().enumerate() {
            let yy = (y as i64 + j as i64 - r).clamp(0, h as i64 - 1) as usize;
            let src_row = &tmp.data[yy * w..(yy + 1) * w];
            let dst_row = &mut out.data[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Rescales by `factor` with a triangle filter whose support widens when
/// shrinking, so downscaled images are anti-aliased.
///
/// Output pixel `i` samples source position `i / factor`, keeping the
/// pixel-center convention of [`Raster::bilinear`]: a point `p` maps to
/// `p * factor` exactly.
pub fn rescale(src: &impl Raster, factor: f64) -> ImageF32 {
    let out_w = ((src.width() as f64 * factor).floor() as usize).max(1);
    let out_h = ((src.height() as f64 * factor).floor() as usize).max(1);
    let support = if factor < 1.0 { 1.0 / factor } else { 1.0 };

    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, Vec<f32>)> {
        (0..n_out)
            .map(|i| {
                let center = i as f64 / factor;
                let lo = (center - support).ceil().max(0.0) as usize;
                let hi = ((center + support).floor() as usize).min(n_in - 1);
                let mut w: Vec<f64> = (lo..=hi)
                    .map(|j| (1.0 - (j as f64 - center).abs() / support).max(0.0))
                    .collect();
                let sum: f64 = w.iter().sum();
                if sum > 0.0 {
                    w.iter_mut().for_each(|v| *v /= sum);
                } else {
                    // Center lies beyond the last source pixel.
                    return (n_in - 1, vec![1.0]);
                }
                (lo, w.into_iter().map(|v| v as f32).collect())
            })
            .collect()
    };
    let tx = taps(out_w, src.width());
    let ty = taps(out_h, src.height());

    let mut tmp = ImageF32::new(out_w, src.height());
    for y in 0..src.height() {
        for (x, (lo, w)) in tx.iter().enumerate() {
            let acc: f32 = w
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src.value(lo + j, y))
                .sum();
            tmp.set(x, y, acc);
        }
    }
    let mut out = ImageF32::new(out_w, out_h);
    for (y, (lo, w)) in ty.iter().enumerate() {
        for x in 0..out_w {
            let acc: f32 = w
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp.value(x, lo + j))
                .sum();
            out.set(x, y, acc);
        }
    }
    out
}

/// Image gradients over a rectangular region of interest, computed by central
/// differences on a (optionally Gaussian-smoothed) copy of that region.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub origin: (i64, i64),
    pub smoothed: ImageF32,
    pub gx: ImageF32,
    pub gy: ImageF32,
}

impl GradientField {
    /// Builds the field over the pixel box `[lo, hi]` (inclusive, in image
    /// coordinates, clipped to the image).
    pub fn new(image: &GrayImage, lo: Point2, hi: Point2, sigma: f64) -> Self {
        let margin = (3.0 * sigma).ceil() as i64 + 2;
        let x0 = (lo.x.floor() as i64).clamp(0, image.width as i64 - 1);
        let y0 = (lo.y.floor() as i64).clamp(0, image.height as i64 - 1);
        let x1 = (hi.x.ceil() as i64).clamp(x0, image.width as i64 - 1);
        let y1 = (hi.y.ceil() as i64).clamp(y0, image.height as i64 - 1);
        // Blur a padded window so the kept region is free of crop artifacts.
        let px0 = (x0 - margin).max(0);
        let py0 = (y0 - margin).max(0);
        let px1 = (x1 + margin).min(image.width as i64 - 1);
        let py1 = (y1 + margin).min(image.height as i64 - 1);
        let padded = ImageF32::crop(
            image,
            px0,
            py0,
            (px1 - px0 + 1) as usize,
            (py1 - py0 + 1) as usize,
        );
        let blurred = gaussian_blur(&padded, sigma);
        let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
        let (ox, oy) = (x0 - px0, y0 - py0);
        let smoothed = ImageF32::crop(&blurred, ox, oy, w, h);
        let mut gx = ImageF32::new(w, h);
        let mut gy = ImageF32::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let (bx, by) = (ox + x as i64, oy + y as i64);
                gx.set(
                    x,
                    y,
                    0.5 * (blurred.clamped(bx + 1, by) - blurred.clamped(bx - 1, by)),
                );
                gy.set(
                    x,
                    y,
                    0.5 * (blurred.clamped(bx, by + 1) - blurred.clamped(bx, by - 1)),
                );
            }
        }
        GradientField {
            origin: (x0, y0),
            smoothed,
            gx,
            gy,
        }
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        let (lx, ly) = (x - self.origin.0, y - self.origin.1);
        lx >= 0 && ly >= 0 && (lx as usize) < self.gx.width && (ly as usize) < self.gx.height
    }

    /// Gradient at an image position, bilinearly interpolated.
    pub fn gradient_at(&self, p: Point2) -> Point2 {
        let x = p.x - self.origin.0 as f64;
        let y = p.y - self.origin.1 as f64;
        Point2::new(self.gx.bilinear(x, y) as f64, self.gy.bilinear(x, y) as f64)
    }

    pub fn smoothed_at_pixel(&self, x: i64, y: i64) -> f32 {
        self.smoothed
            .clamped(x - self.origin.0, y - self.origin.1)
    }

    pub fn gradient_at_pixel(&self, x: i64, y: i64) -> (f32, f32) {
        let (lx, ly) = (x - self.origin.0, y - self.origin.1);
        (self.gx.clamped(lx, ly), self.gy.clamped(lx, ly))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageF32 {
        let mut img = ImageF32::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, (2 * x + 3 * y) as f32);
            }
        }
        img
    }

    #[test]
    fn bilinear_is_exact_on_linear_ramps() {
        let img = ramp(10, 8);
        assert_eq!(img.bilinear(3.0, 2.0), 12.0);
        assert!((img.bilinear(3.25, 2.5) - 14.0).abs() < 1e-5);
        // Clamped outside.
        assert_eq!(img.bilinear(-4.0, -1.0), 0.0);
        assert_eq!(img.bilinear(100.0, 100.0), img.value(9, 7));
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let mut img = ImageF32::new(20, 15);
        img.data.iter_mut().for_each(|v| *v = 42.0);
        let b = gaussian_blur(&img, 1.7);
        assert!(b.data.iter().all(|v| (v - 42.0).abs() < 1e-3));
    }

    #[test]
    fn rescale_maps_points_by_factor() {
        let img = ramp(64, 48);
        let half = rescale(&img, 0.5);
        assert_eq!((half.width, half.height), (32, 24));
        // Interior samples of a linear ramp are preserved at p * factor.
        let v = half.bilinear(10.0, 8.0);
        assert!((v - img.bilinear(20.0, 16.0)).abs() < 1e-3, "{v}");
        let up = rescale(&img, 2.0);
        assert!((up.bilinear(21.0, 13.0) - img.bilinear(10.5, 6.5)).abs() < 1e-3);
    }
}
