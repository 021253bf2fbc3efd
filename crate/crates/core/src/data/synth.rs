//! Procedural face-region renderer with exact ground truth.
//!
//! Each scene has two eyes on a skin background: a bright sclera ellipse whose
//! height follows the eye closure, a dark anti-aliased iris disk with a darker
//! concentric pupil, both clipped by the eyelids, and a dark lash band along
//! the upper lid. Optional Gaussian blur, additive Gaussian noise and a linear
//! illumination gradient are applied on top.
//!
//! Geometry is tied to the interocular distance `D`: each eye is `0.5 D` wide
//! (corner to corner), so the iris radius `iris_radius_frac * E` with the
//! default `0.2` equals `0.1 D`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::annotation::{AnnotationSource, EyeAnnotation};
use crate::data::image::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{EyeContour, EyeCorners, Point2};
use crate::imgproc::{gaussian_blur, ImageF32};

/// Eye width as a fraction of the interocular distance.
pub const EYE_WIDTH_FRAC: f64 = 0.5;
/// Contour height-to-width ratio of a fully open eye.
pub const OPEN_EYE_RATIO: f64 = 0.5;
const CONTOUR_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub image_size: (u32, u32),
    pub interocular_px: (f64, f64),
    /// Iris radius as a fraction of the eye width `E`.
    pub iris_radius_frac: f64,
    /// Maximum |gaze offset| of the irises, `(horizontal, vertical)`, as
    /// fractions of `E`.
    pub gaze_offset_range: (f64, f64),
    /// Eye openness in `[0, 1]`; the contour ratio is `0.5 * closure`.
    pub closure_range: (f64, f64),
    pub roll_deg: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
    /// Maximum illumination change across one interocular distance, in gray levels.
    pub illumination_gradient: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            image_size: (384, 286),
            interocular_px: (80.0, 120.0),
            iris_radius_frac: 0.2,
            gaze_offset_range: (0.15, 0.05),
            closure_range: (0.7, 1.0),
            roll_deg: (0.0, 0.0),
            noise_sigma: (0.0, 4.0),
            blur_sigma: (0.5, 1.0),
            illumination_gradient: 20.0,
            seed: 0,
        }
    }
}

fn ordered(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synthetic params: {m}")));
        for (name, r) in [
            ("interocular_px", self.interocular_px),
            ("closure_range", self.closure_range),
            ("roll_deg", self.roll_deg),
            ("noise_sigma", self.noise_sigma),
            ("blur_sigma", self.blur_sigma),
        ] {
            if !ordered(r) {
                return bad(&format!("{name} is not a well-ordered range"));
            }
        }
        if self.interocular_px.0 <= 0.0 {
            return bad("interocular distance must be positive");
        }
        if !(self.iris_radius_frac > 0.05 && self.iris_radius_frac < 0.6) {
            return bad("iris_radius_frac must lie in (0.05, 0.6)");
        }
        if self.closure_range.0 < 0.0 || self.closure_range.1 > 1.0 {
            return bad("closure must lie in [0, 1]");
        }
        if self.noise_sigma.0 < 0.0 || self.blur_sigma.0 < 0.0 || self.illumination_gradient < 0.0 {
            return bad("noise, blur and illumination must be non-negative");
        }
        if self.gaze_offset_range.0 < 0.0 || self.gaze_offset_range.1 < 0.0 {
            return bad("gaze offsets must be non-negative");
        }
        let (w, h) = self.image_size;
        let d = self.interocular_px.1;
        if 1.6 * d > 0.9 * w as f64 || 0.8 * d > 0.8 * h as f64 {
            return bad("image too small for the requested interocular distance");
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

/// A fully specified scene; rendering it is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image_size: (u32, u32),
    /// Sclera ellipse centers `[right, left]` (corner midpoints).
    pub eye_centers: [Point2; 2],
    /// Half the corner-to-corner eye width.
    pub eye_half_width: f64,
    pub closure: [f64; 2],
    pub roll: f64,
    pub iris_centers: [Point2; 2],
    pub iris_radius: f64,
    pub pupil_radius: f64,
    pub skin: f32,
    pub sclera: f32,
    pub iris: f32,
    pub pupil: f32,
    pub lash: f32,
    /// Illumination change per pixel along x and y.
    pub illumination: Point2,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub noise_seed: u64,
}

/// Rendered image with its annotation and per-eye iris occlusion fraction.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: GrayImage,
    pub annotation: EyeAnnotation,
    pub scene: SyntheticScene,
    pub occlusion: [f64; 2],
}

impl SyntheticScene {
    pub fn sample(params: &SynthParams, rng: &mut impl Rng) -> Result<Self> {
        params.validate()?;
        let (w, h) = params.image_size;
        let iod = uniform(rng, params.interocular_px);
        let roll = uniform(rng, params.roll_deg).to_radians();
        let mid = Point2::new(
            w as f64 * (0.5 + rng.random_range(-0.04..0.04)),
            h as f64 * (0.45 + rng.random_range(-0.04..0.04)),
        );
        let u = Point2::new(roll.cos(), roll.sin());
        let v = u.perp();
        let eye_centers = [mid - u * (0.5 * iod), mid + u * (0.5 * iod)];
        let e = EYE_WIDTH_FRAC * iod;
        let closure = uniform(rng, params.closure_range);
        let gx = uniform(rng, (-params.gaze_offset_range.0, params.gaze_offset_range.0));
        let gy = uniform(rng, (-params.gaze_offset_range.1, params.gaze_offset_range.1));
        let iris_centers = eye_centers.map(|c| {
            let jx = rng.random_range(-0.015..0.015);
            let jy = rng.random_range(-0.01..0.01);
            c + u * ((gx + jx) * e) + v * ((gy + jy) * e)
        });
        let iris_radius = params.iris_radius_frac * e;
        let skin = rng.random_range(120.0..180.0f32);
        let sclera = (skin + rng.random_range(40.0..70.0f32)).min(245.0);
        let iris = rng.random_range(50.0..110.0f32);
        let pupil = iris * rng.random_range(0.25..0.4f32);
        let lash = rng.random_range(45.0..70.0f32);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let mag = rng.random_range(0.0..=params.illumination_gradient) / iod;
        Ok(SyntheticScene {
            image_size: params.image_size,
            eye_centers,
            eye_half_width: 0.5 * e,
            closure: [closure; 2],
            roll,
            iris_centers,
            iris_radius,
            pupil_radius: iris_radius * rng.random_range(0.35..0.5),
            skin,
            sclera,
            iris,
            pupil,
            lash,
            illumination: Point2::new(ang.cos(), ang.sin()) * mag,
            noise_sigma: uniform(rng, params.noise_sigma),
            blur_sigma: uniform(rng, params.blur_sigma),
            noise_seed: rng.next_u64(),
        })
    }

    fn axes(&self) -> (Point2, Point2) {
        let u = Point2::new(self.roll.cos(), self.roll.sin());
        (u, u.perp())
    }

    /// Sclera semi-axes `(a, b)` of one eye.
    pub fn semi_axes(&self, eye: usize) -> (f64, f64) {
        let a = self.eye_half_width;
        let b = (OPEN_EYE_RATIO * self.closure[eye]).max(1e-3) * a;
        (a, b)
    }

    /// Same scene seen through the similarity `p -> k * R(theta) * (p - pivot) + pivot + shift`.
    pub fn transformed(&self, k: f64, theta: f64, pivot: Point2, shift: Point2, image_size: (u32, u32)) -> Self {
        let (s, c) = theta.sin_cos();
        let rot = |p: Point2| Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
        let map = |p: Point2| rot(p - pivot) * k + pivot + shift;
        let mut out = self.clone();
        out.image_size = image_size;
        out.eye_centers = self.eye_centers.map(map);
        out.iris_centers = self.iris_centers.map(map);
        out.eye_half_width *= k;
        out.iris_radius *= k;
        out.pupil_radius *= k;
        out.roll += theta;
        out.illumination = rot(self.illumination) * (1.0 / k);
        out.blur_sigma *= k;
        out
    }

    fn intensity(&self, p: Point2) -> f32 {
        let (w, h) = self.image_size;
        let center = Point2::new(0.5 * w as f64, 0.5 * h as f64);
        let mut value = self.skin + self.illumination.dot(p - center) as f32;
        let (u, v) = self.axes();
        let thick = 0.12 * self.eye_half_width;
        for eye in 0..2 {
            let d = p - self.eye_centers[eye];
            let reach = self.eye_half_width + thick + 2.0;
            if d.x.abs() > reach || d.y.abs() > reach {
                continue;
            }
            let (lx, ly) = (d.dot(u), d.dot(v));
            let (a, b) = self.semi_axes(eye);
            let f = (lx / a).powi(2) + (ly / b).powi(2) - 1.0;
            let g = Point2::new(2.0 * lx / (a * a), 2.0 * ly / (b * b)).norm();
            let sd = if g > 1e-12 { f / g } else { -b };
            let cov_sclera = (0.5 - sd).clamp(0.0, 1.0) as f32;
            if ly < 0.0 && sd > -1.0 {
                let along = (1.0 - (lx / a).powi(2)).max(0.0) as f32;
                let cov_lash = ((0.5 - (sd - thick)).clamp(0.0, 1.0) as f32) * along;
                value += (self.lash - value) * cov_lash * (1.0 - cov_sclera);
            }
            if cov_sclera <= 0.0 {
                continue;
            }
            value += (self.sclera - value) * cov_sclera;
            let di = p.distance(self.iris_centers[eye]);
            let cov_iris = (0.5 - (di - self.iris_radius)).clamp(0.0, 1.0) as f32;
            let cov_pupil = (0.5 - (di - self.pupil_radius)).clamp(0.0, 1.0) as f32;
            value += (self.iris - value) * cov_iris * cov_sclera;
            value += (self.pupil - value) * cov_pupil * cov_sclera;
        }
        value
    }

    pub fn rasterize(&self) -> GrayImage {
        let (w, h) = self.image_size;
        let mut img = ImageF32::new(w as usize, h as usize);
        for y in 0..h as usize {
            for x in 0..w as usize {
                img.set(x, y, self.intensity(Point2::new(x as f64, y as f64)));
            }
        }
        let mut img = gaussian_blur(&img, self.blur_sigma);
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            let normal = Normal::new(0.0f32, self.noise_sigma as f32).expect("sigma is finite");
            for v in img.data.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels: img.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    pub fn corners(&self) -> EyeCorners {
        let (u, _) = self.axes();
        let a = self.eye_half_width;
        let [r, l] = self.eye_centers;
        EyeCorners {
            right_outer: r - u * a,
            right_inner: r + u * a,
            left_inner: l - u * a,
            left_outer: l + u * a,
        }
    }

    pub fn contours(&self) -> [EyeContour; 2] {
        let (u, v) = self.axes();
        [0, 1].map(|eye| {
            let (a, b) = self.semi_axes(eye);
            let c = self.eye_centers[eye];
            EyeContour {
                points: (0..CONTOUR_SAMPLES)
                    .map(|k| {
                        let t = std::f64::consts::TAU * k as f64 / CONTOUR_SAMPLES as f64;
                        c + u * (a * t.cos()) + v * (b * t.sin())
                    })
                    .collect(),
            }
        })
    }

    /// Fraction of each iris disk hidden by the eyelids.
    pub fn occlusion(&self) -> [f64; 2] {
        let (u, v) = self.axes();
        [0, 1].map(|eye| {
            let (a, b) = self.semi_axes(eye);
            let n = 32;
            let (mut inside, mut hidden) = (0usize, 0usize);
            for i in 0..n {
                for j in 0..n {
                    let ox = ((i as f64 + 0.5) / n as f64 * 2.0 - 1.0) * self.iris_radius;
                    let oy = ((j as f64 + 0.5) / n as f64 * 2.0 - 1.0) * self.iris_radius;
                    if ox * ox + oy * oy > self.iris_radius * self.iris_radius {
                        continue;
                    }
                    inside += 1;
                    let d = self.iris_centers[eye] + Point2::new(ox, oy) - self.eye_centers[eye];
                    let (lx, ly) = (d.dot(u), d.dot(v));
                    if (lx / a).powi(2) + (ly / b).powi(2) > 1.0 {
                        hidden += 1;
                    }
                }
            }
            hidden as f64 / inside.max(1) as f64
        })
    }

    pub fn annotation(&self, image_id: impl Into<String>) -> EyeAnnotation {
        EyeAnnotation {
            image_id: image_id.into(),
            image_size: Some(self.image_size),
            corners: self.corners(),
            contours: Some(self.contours()),
            centers: (self.iris_centers[0], self.iris_centers[1]),
            source: AnnotationSource::Synthetic,
        }
    }

    pub fn render(&self, image_id: impl Into<String>) -> SyntheticSample {
        SyntheticSample {
            image: self.rasterize(),
            annotation: self.annotation(image_id),
            scene: self.clone(),
            occlusion: self.occlusion(),
        }
    }
}

/// Samples and renders one synthetic face region.
pub fn render_synthetic_eye(params: &SynthParams, rng: &mut impl Rng) -> Result<(GrayImage, EyeAnnotation)> {
    let scene = SyntheticScene::sample(params, rng)?;
    let s = scene.render("synthetic");
    Ok((s.image, s.annotation))
}
