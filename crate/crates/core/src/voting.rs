//! Hand-crafted eye center detector based on gradient voting.
//!
//! A center `c` collects, over an annulus of pixels around it, the agreement
//! `max(d . g, 0)` between the unit direction `d` from `c` to the pixel and
//! the pixel's unit image gradient `g`, weighted by the darkness of `c` in a
//! smoothed image. Local maxima inside the eroded eye mask become candidates,
//! which are improved by an 8-neighborhood hill climb that searches for the
//! single best ring radius, and the best one is refined by circle fitting.

use std::collections::HashMap;

use crate::circlefit::{refine_eye, CircleEstimate, RobustFitConfig};
use crate::data::{GrayImage, Landmarks};
use crate::error::{Error, Result};
use crate::geometry::{build_transform, point_in_eye_mask, EyeContour, EyeCorners, Point2};
use crate::hog::Eye;
use crate::imgproc::GradientField;

#[derive(Debug, Clone, PartialEq)]
pub struct VoteConfig {
    /// Annulus of voting pixels, as fractions of the eye size `E`.
    pub radius_band: (f64, f64),
    pub default_iris_radius_frac: f64,
    /// Candidates must reach this fraction of the masked global maximum.
    pub candidate_threshold_frac: f64,
    /// Smoothing of the darkness image, as a fraction of `E` (clamped to 1..5 px).
    pub smoothing_sigma_frac: f64,
    pub erosion_frac: f64,
    /// Half-thickness of the single-radius rings used by the hill climb, px.
    pub ring_half_width: f64,
    /// Seed the circle fit with the hill climb's radius instead of the
    /// default iris radius.
    pub refine_from_ring_radius: bool,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            radius_band: (0.3, 0.5),
            default_iris_radius_frac: 0.2,
            candidate_threshold_frac: 0.8,
            smoothing_sigma_frac: 0.05,
            erosion_frac: 0.05,
            ring_half_width: 0.5,
            refine_from_ring_radius: false,
        }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_band;
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput("voting radius band must be positive and ordered".into()));
        }
        if !(frac(self.default_iris_radius_frac)
            && frac(self.candidate_threshold_frac)
            && frac(self.smoothing_sigma_frac)
            && frac(self.erosion_frac))
        {
            return Err(Error::InvalidInput("voting fractions must lie in (0, 1)".into()));
        }
        if !(self.ring_half_width > 0.0) {
            return Err(Error::InvalidInput("ring half-width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub position: Point2,
    pub radius: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
struct Offset {
    dx: i64,
    dy: i64,
    /// Unit direction from the center to the pixel.
    ux: f32,
    uy: f32,
    dist: f64,
}

/// Precomputed darkness and unit gradients around one eye.
pub struct VoteField {
    field: GradientField,
    unit: Vec<(f32, f32)>,
    width: i64,
    height: i64,
    image_w: i64,
    image_h: i64,
    eye_size: f64,
    annulus: Vec<Offset>,
    /// Integer ring radii (px) with their offsets.
    rings: Vec<(f64, Vec<Offset>)>,
}

impl VoteField {
    /// Prepares scoring for centers inside the box `[lo, hi]`.
    pub fn new(image: &GrayImage, lo: Point2, hi: Point2, eye_size: f64, cfg: &VoteConfig) -> Result<Self> {
        cfg.validate()?;
        if !(eye_size > 0.0 && eye_size.is_finite()) {
            return Err(Error::InvalidLandmarks("eye size must be positive".into()));
        }
        let sigma = (cfg.smoothing_sigma_frac * eye_size).clamp(1.0, 5.0);
        let outer = cfg.radius_band.1 * eye_size;
        let reach = outer + cfg.ring_half_width + 1.0;
        let margin = Point2::new(reach, reach);
        let field = GradientField::new(image, lo - margin, hi + margin, sigma);
        let unit = field
            .gx
            .data
            .iter()
            .zip(&field.gy.data)
            .map(|(&gx, &gy)| {
                let m = (gx * gx + gy * gy).sqrt();
                if m < 1e-6 {
                    (0.0, 0.0)
                } else {
                    (gx / m, gy / m)
                }
            })
            .collect();
        let inner = cfg.radius_band.0 * eye_size;
        let r = reach.ceil() as i64;
        let mut all = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let dist = ((dx * dx + dy * dy) as f64).sqrt();
                if dist == 0.0 {
                    continue;
                }
                all.push(Offset {
                    dx,
                    dy,
                    ux: (dx as f64 / dist) as f32,
                    uy: (dy as f64 / dist) as f32,
                    dist,
                });
            }
        }
        let annulus = all.iter().copied().filter(|o| o.dist >= inner && o.dist <= outer).collect();
        let r_lo = inner.ceil() as i64;
        let r_hi = outer.floor() as i64;
        let rings = (r_lo..=r_hi.max(r_lo))
            .map(|ri| {
                let rf = ri as f64;
                let ring = all
                    .iter()
                    .copied()
                    .filter(|o| (o.dist - rf).abs() <= cfg.ring_half_width)
                    .collect();
                (rf, ring)
            })
            .collect();
        Ok(VoteField {
            width: field.gx.width as i64,
            height: field.gx.height as i64,
            unit,
            field,
            image_w: image.width as i64,
            image_h: image.height as i64,
            eye_size,
            annulus,
            rings,
        })
    }

    /// Darkness weight `255 - I*(c)`.
    pub fn darkness(&self, x: i64, y: i64) -> f64 {
        255.0 - self.field.smoothed_at_pixel(x, y) as f64
    }

    fn vote_sum(&self, x: i64, y: i64, offsets: &[Offset]) -> Option<f64> {
        let (ox, oy) = self.field.origin;
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for o in offsets {
            let (px, py) = (x + o.dx, y + o.dy);
            if px < 0 || py < 0 || px >= self.image_w || py >= self.image_h {
                continue;
            }
            n += 1;
            let (lx, ly) = (px - ox, py - oy);
            if lx < 0 || ly < 0 || lx >= self.width || ly >= self.height {
                continue;
            }
            let (gx, gy) = self.unit[(ly * self.width + lx) as usize];
            let dot = o.ux * gx + o.uy * gy;
            if dot > 0.0 {
                sum += dot as f64;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Annulus score at pixel `(x, y)`; `None` when the whole annulus lies
    /// outside the image.
    pub fn score_pixel(&self, x: i64, y: i64) -> Option<f64> {
        self.vote_sum(x, y, &self.annulus).map(|m| self.darkness(x, y) * m)
    }

    /// Best single-ring score at `(x, y)` and its radius.
    pub fn ring_score(&self, x: i64, y: i64) -> (f64, f64) {
        let w = self.darkness(x, y);
        let mut best = (f64::NEG_INFINITY, self.rings.first().map_or(0.0, |r| r.0));
        for (radius, ring) in &self.rings {
            let s = self.vote_sum(x, y, ring).map_or(0.0, |m| w * m);
            if s > best.0 {
                best = (s, *radius);
            }
        }
        if best.0 == f64::NEG_INFINITY {
            best.0 = 0.0;
        }
        best
    }

    pub fn ring_radii(&self) -> Vec<f64> {
        self.rings.iter().map(|r| r.0).collect()
    }

    /// Single-ring score at `(x, y)` for the ring of index `k`.
    pub fn ring_score_at(&self, x: i64, y: i64, k: usize) -> f64 {
        self.vote_sum(x, y, &self.rings[k].1).map_or(0.0, |m| self.darkness(x, y) * m)
    }

    pub fn eye_size(&self) -> f64 {
        self.eye_size
    }
}

fn pixel(c: Point2) -> (i64, i64) {
    (c.x.round() as i64, c.y.round() as i64)
}

/// Voting score of the pixel nearest `c`. Returns 0 when the annulus lies
/// entirely outside the image.
pub fn score_at(image: &GrayImage, c: Point2, eye_size: f64, cfg: &VoteConfig) -> Result<f64> {
    let field = VoteField::new(image, c, c, eye_size, cfg)?;
    let (x, y) = pixel(c);
    Ok(field.score_pixel(x, y).unwrap_or(0.0))
}

/// Score map over the eroded eye mask.
pub struct ScoreMap {
    /// Mask pixels in scan order with their scores.
    pub pixels: Vec<((i64, i64), f64)>,
    pub centroid: Point2,
}

impl ScoreMap {
    pub fn global_max(&self) -> Option<((i64, i64), f64)> {
        let mut best: Option<((i64, i64), f64)> = None;
        for &(p, s) in &self.pixels {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((p, s));
            }
        }
        best
    }
}

/// Integer pixels of the eroded mask, in scan order.
pub fn mask_pixels(contour: &EyeContour, erosion: f64, width: u32, height: u32) -> Vec<(i64, i64)> {
    let (lo, hi) = contour.bounds();
    let x0 = (lo.x.ceil() as i64).max(0);
    let y0 = (lo.y.ceil() as i64).max(0);
    let x1 = (hi.x.floor() as i64).min(width as i64 - 1);
    let y1 = (hi.y.floor() as i64).min(height as i64 - 1);
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            if point_in_eye_mask(Point2::new(x as f64, y as f64), contour, erosion) {
                out.push((x, y));
            }
        }
    }
    out
}

pub fn score_map(field: &VoteField, mask: &[(i64, i64)]) -> ScoreMap {
    let n = mask.len().max(1) as f64;
    let centroid = mask
        .iter()
        .fold(Point2::ORIGIN, |acc, &(x, y)| acc + Point2::new(x as f64, y as f64) * (1.0 / n));
    ScoreMap {
        pixels: mask
            .iter()
            .map(|&(x, y)| ((x, y), field.score_pixel(x, y).unwrap_or(0.0)))
            .collect(),
        centroid,
    }
}

/// Local maxima of the score map reaching the threshold fraction of the
/// global maximum, best first.
///
/// A pixel is a local maximum when no in-mask 8-neighbor scores higher and no
/// earlier neighbor (in scan order) ties it, so plateaus yield one candidate.
/// Ranking is by score, then distance to the mask centroid, then scan order.
pub fn extract_candidates(map: &ScoreMap, eye_size: f64, cfg: &VoteConfig) -> Vec<Candidate> {
    let Some((_, global)) = map.global_max() else {
        return Vec::new();
    };
    if global <= 0.0 {
        return Vec::new();
    }
    let lookup: HashMap<(i64, i64), (usize, f64)> = map
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &(p, s))| (p, (i, s)))
        .collect();
    let threshold = cfg.candidate_threshold_frac * global;
    let mut found: Vec<(usize, Candidate)> = Vec::new();
    for (i, &((x, y), s)) in map.pixels.iter().enumerate() {
        if s < threshold {
            continue;
        }
        let is_max = (-1..=1).all(|dy| {
            (-1..=1).all(|dx| {
                if dx == 0 && dy == 0 {
                    return true;
                }
                match lookup.get(&(x + dx, y + dy)) {
                    Some(&(j, t)) => t < s || (t == s && j > i),
                    None => true,
                }
            })
        });
        if is_max {
            found.push((
                i,
                Candidate {
                    position: Point2::new(x as f64, y as f64),
                    radius: cfg.default_iris_radius_frac * eye_size,
                    score: s,
                },
            ));
        }
    }
    found.sort_by(|(ia, a), (ib, b)| {
        b.score
            .total_cmp(&a.score)
            .then(a.position.distance(map.centroid).total_cmp(&b.position.distance(map.centroid)))
            .then(ia.cmp(ib))
    });
    found.into_iter().map(|(_, c)| c).collect()
}

/// Candidates for one eye: scores over the eroded mask, then local maxima.
pub fn find_candidates(
    image: &GrayImage,
    contour: &EyeContour,
    corners: &EyeCorners,
    eye: Eye,
    cfg: &VoteConfig,
) -> Result<Vec<Candidate>> {
    let eye_size = corners.eye_size(eye);
    let (field, mask) = prepare_eye(image, contour, eye_size, cfg)?;
    Ok(extract_candidates(&score_map(&field, &mask), eye_size, cfg))
}

fn prepare_eye(image: &GrayImage, contour: &EyeContour, eye_size: f64, cfg: &VoteConfig) -> Result<(VoteField, Vec<(i64, i64)>)> {
    let mask = mask_pixels(contour, cfg.erosion_frac * eye_size, image.width, image.height);
    if mask.is_empty() {
        return Err(Error::DegenerateEyeRegion("eroded eye mask is empty".into()));
    }
    let (lo, hi) = contour.bounds();
    // The hill climb may walk up to half an eye size beyond the mask.
    let walk = Point2::new(0.5 * eye_size + 1.0, 0.5 * eye_size + 1.0);
    let field = VoteField::new(image, lo - walk, hi + walk, eye_size, cfg)?;
    Ok((field, mask))
}

/// Result of a hill climb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimbResult {
    pub candidate: Candidate,
    /// Neighborhood evaluation rounds, including the final one.
    pub rounds: usize,
}

/// Moves to the best of the 8 neighbors while one beats the current pixel's
/// best single-ring score; ties keep the current pixel. At most
/// `ceil(0.5 E)` moves are made.
pub fn hill_climb(field: &VoteField, start: &Candidate) -> ClimbResult {
    let mut cache: HashMap<(i64, i64), (f64, f64)> = HashMap::new();
    let mut eval = |p: (i64, i64)| *cache.entry(p).or_insert_with(|| field.ring_score(p.0, p.1));
    let mut pos = pixel(start.position);
    let mut here = eval(pos);
    let max_moves = (0.5 * field.eye_size()).ceil() as usize;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut best: Option<((i64, i64), (f64, f64))> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let q = (pos.0 + dx, pos.1 + dy);
                let s = eval(q);
                if s.0 > here.0 && best.is_none_or(|(_, b)| s.0 > b.0) {
                    best = Some((q, s));
                }
            }
        }
        match best {
            Some((q, s)) if rounds <= max_moves => {
                pos = q;
                here = s;
            }
            _ => break,
        }
    }
    ClimbResult {
        candidate: Candidate {
            position: Point2::new(pos.0 as f64, pos.1 as f64),
            radius: here.1,
            score: here.0,
        },
        rounds,
    }
}

/// Hand-crafted detection of one eye.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeDetection {
    pub center: Point2,
    pub radius: f64,
    /// No candidate was found; the center is the corner midpoint.
    pub fallback: bool,
    pub candidates: usize,
    /// Winning candidate after the hill climb.
    pub climbed: Option<Candidate>,
    pub fit: Option<CircleEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandcraftedResult {
    pub right: EyeDetection,
    pub left: EyeDetection,
}

impl HandcraftedResult {
    pub fn centers(&self) -> (Point2, Point2) {
        (self.right.center, self.left.center)
    }

    pub fn any_fallback(&self) -> bool {
        self.right.fallback || self.left.fallback
    }
}

/// Detects one eye: candidates, hill climb on each, best climbed candidate,
/// circle-fit refinement around it.
pub fn detect_eye(
    image: &GrayImage,
    corners: &EyeCorners,
    contour: &EyeContour,
    eye: Eye,
    vote: &VoteConfig,
    fit: &RobustFitConfig,
) -> Result<EyeDetection> {
    let (anchor, _) = build_transform(corners)?;
    let eye_size = corners.eye_size(eye);
    let (outer, inner) = corners.eye(eye);
    let default_r = vote.default_iris_radius_frac * eye_size;
    let fallback = EyeDetection {
        center: outer.midpoint(inner),
        radius: default_r,
        fallback: true,
        candidates: 0,
        climbed: None,
        fit: None,
    };
    let (field, mask) = match prepare_eye(image, contour, eye_size, vote) {
        Ok(v) => v,
        Err(Error::DegenerateEyeRegion(_)) => return Ok(fallback),
        Err(e) => return Err(e),
    };
    let candidates = extract_candidates(&score_map(&field, &mask), eye_size, vote);
    let mut best: Option<Candidate> = None;
    for c in &candidates {
        let climbed = hill_climb(&field, c).candidate;
        if best.is_none_or(|b| climbed.score > b.score) {
            best = Some(climbed);
        }
    }
    let Some(best) = best else {
        return Ok(EyeDetection { candidates: 0, ..fallback });
    };
    let r0 = if vote.refine_from_ring_radius { best.radius } else { default_r };
    let (est, _) = refine_eye(image, best.position, r0, r0, Some(contour), &anchor, fit)?;
    let (center, radius) = if est.is_refined() { (est.center(), est.r) } else { (best.position, r0) };
    Ok(EyeDetection {
        center,
        radius,
        fallback: false,
        candidates: candidates.len(),
        climbed: Some(best),
        fit: Some(est),
    })
}

/// Detects both eyes with the hand-crafted pipeline.
pub fn detect_handcrafted(
    image: &GrayImage,
    landmarks: &Landmarks,
    vote: &VoteConfig,
    fit: &RobustFitConfig,
) -> Result<HandcraftedResult> {
    let contours = landmarks.contours_or_default();
    Ok(HandcraftedResult {
        right: detect_eye(image, &landmarks.corners, &contours[0], Eye::Right, vote, fit)?,
        left: detect_eye(image, &landmarks.corners, &contours[1], Eye::Left, vote, fit)?,
    })
}
