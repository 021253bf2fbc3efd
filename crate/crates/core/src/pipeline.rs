//! End-to-end detection with per-eye closed-eye gating, and training from
//! automatically annotated images.

use log::{debug, warn};
use rayon::prelude::*;

use crate::cascade::{train_cascade, CascadeModel, TrainConfig, TrainReport, TrainingItem};
use crate::circlefit::{default_radius, refine_eye, FitStatus, RobustFitConfig};
use crate::data::{AnnotationSource, EyeAnnotation, GrayImage, Landmarks};
use crate::error::{Error, Result};
use crate::geometry::{build_transform, closure_ratio, EyeContour, Point2};
use crate::hog::Eye;
use crate::voting::{detect_handcrafted, HandcraftedResult, VoteConfig};

/// How an eye's center was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Regressed,
    Refined,
    ContourFallback,
    HandcraftedFallback,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Regressed, Stage::Refined, Stage::ContourFallback, Stage::HandcraftedFallback];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Regressed => "regressed",
            Stage::Refined => "refined",
            Stage::ContourFallback => "contour-fallback",
            Stage::HandcraftedFallback => "handcrafted-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeResult {
    pub center: Point2,
    pub radius: Option<f64>,
    pub stage: Stage,
    pub closure_ratio: f64,
    /// Status of the circle fit, for refined eyes.
    pub fit_status: Option<FitStatus>,
    /// The center was moved back inside the image.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub right: EyeResult,
    pub left: EyeResult,
}

impl DetectionResult {
    pub fn centers(&self) -> (Point2, Point2) {
        (self.right.center, self.left.center)
    }

    pub fn eye(&self, eye: Eye) -> &EyeResult {
        match eye {
            Eye::Right => &self.right,
            Eye::Left => &self.left,
        }
    }

    /// Wraps a hand-crafted detection; fallback eyes are marked as such.
    pub fn from_handcrafted(h: &HandcraftedResult, landmarks: &Landmarks, size: (u32, u32)) -> Result<Self> {
        let contours = landmarks.contours_or_default();
        let eye = |d: &crate::voting::EyeDetection, contour: &EyeContour| -> Result<EyeResult> {
            let (center, clamped) = clamp_to_image(d.center, size);
            Ok(EyeResult {
                center,
                radius: Some(d.radius),
                stage: if d.fallback { Stage::HandcraftedFallback } else { Stage::Refined },
                closure_ratio: closure_ratio(contour)?,
                fit_status: d.fit.map(|f| f.status),
                clamped,
            })
        };
        Ok(DetectionResult {
            right: eye(&h.right, &contours[0])?,
            left: eye(&h.left, &contours[1])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Eyes with a closure ratio above this are regressed and refined.
    pub refine_threshold: f64,
    /// Eyes with a closure ratio above this (and not above the refine
    /// threshold) are regressed only; the rest use the contour.
    pub regress_threshold: f64,
    pub use_refinement: bool,
    pub fit: RobustFitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            refine_threshold: 0.3,
            regress_threshold: 0.15,
            use_refinement: true,
            fit: RobustFitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.regress_threshold && self.regress_threshold < self.refine_threshold && self.refine_threshold < 1.0) {
            return Err(Error::InvalidInput(
                "gating thresholds must satisfy 0 < regress < refine < 1".into(),
            ));
        }
        self.fit.validate()
    }

    /// Stage for an eye with closure ratio `r`.
    pub fn stage_for(&self, r: f64) -> Stage {
        if r > self.refine_threshold && self.use_refinement {
            Stage::Refined
        } else if r > self.regress_threshold {
            Stage::Regressed
        } else {
            Stage::ContourFallback
        }
    }
}

fn clamp_to_image(p: Point2, (w, h): (u32, u32)) -> (Point2, bool) {
    let q = Point2::new(p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64));
    (q, q != p)
}

/// Midpoint of the eyelid gap: the mean of the upper and lower contour points
/// nearest the corner midpoint along the eye axis.
pub fn contour_center(contour: &EyeContour, outer: Point2, inner: Point2) -> Result<Point2> {
    let width = outer.distance(inner);
    if !(width > 0.0) {
        return Err(Error::InvalidLandmarks("eye corners coincide".into()));
    }
    let u = (inner - outer) * (1.0 / width);
    let v = u.perp();
    let mid = outer.midpoint(inner);
    let nearest = |upper: bool| {
        contour
            .points
            .iter()
            .filter(|p| {
                let s = (**p - mid).dot(v);
                if upper { s < 0.0 } else { s > 0.0 }
            })
            .min_by(|a, b| (**a - mid).dot(u).abs().total_cmp(&(**b - mid).dot(u).abs()))
            .copied()
    };
    match (nearest(true), nearest(false)) {
        (Some(a), Some(b)) => Ok(a.midpoint(b)),
        // A contour collapsed onto the corner line has no distinct lids.
        _ => Ok(contour
            .points
            .iter()
            .copied()
            .min_by(|a, b| (*a - mid).dot(u).abs().total_cmp(&(*b - mid).dot(u).abs()))
            .unwrap_or(mid)),
    }
}

/// Detects both eye centers.
///
/// Regression runs jointly when at least one eye is open enough; gating and
/// refinement are per eye.
pub fn detect(model: &CascadeModel, image: &GrayImage, landmarks: &Landmarks, cfg: &PipelineConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    let (anchor, transform) = build_transform(&landmarks.corners)?;
    let contours = landmarks.contours_or_default();
    let ratios = [closure_ratio(&contours[0])?, closure_ratio(&contours[1])?];
    let stages = ratios.map(|r| cfg.stage_for(r));
    let regressed = if stages.iter().any(|s| *s != Stage::ContourFallback) {
        Some(model.predict_image(image, &anchor, &transform)?)
    } else {
        None
    };
    let size = (image.width, image.height);
    let mut out = Vec::with_capacity(2);
    for eye in Eye::BOTH {
        let k = eye.index();
        let (outer, inner) = landmarks.corners.eye(eye);
        let reg = regressed.map(|(r, l)| if k == 0 { r } else { l });
        let (center, radius, fit_status) = match stages[k] {
            Stage::ContourFallback => (contour_center(&contours[k], outer, inner)?, None, None),
            Stage::Regressed => (reg.expect("regression ran"), None, None),
            _ => {
                let r0 = default_radius(&anchor);
                let (est, _) = refine_eye(image, reg.expect("regression ran"), r0, r0, Some(&contours[k]), &anchor, &cfg.fit)?;
                (est.center(), Some(est.r), Some(est.status))
            }
        };
        if !center.is_finite() {
            return Err(Error::NonFinite("detected center"));
        }
        let (center, clamped) = clamp_to_image(center, size);
        out.push(EyeResult {
            center,
            radius,
            stage: stages[k],
            closure_ratio: ratios[k],
            fit_status,
            clamped,
        });
    }
    let left = out.pop().expect("two eyes");
    let right = out.pop().expect("two eyes");
    Ok(DetectionResult { right, left })
}

/// One image with landmarks from an external aligner.
#[derive(Debug, Clone, Copy)]
pub struct LandmarkedImage<'a> {
    pub id: &'a str,
    pub image: &'a GrayImage,
    pub landmarks: &'a Landmarks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoAnnotation {
    /// Index into the input list.
    pub index: usize,
    pub annotation: EyeAnnotation,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AutoAnnotateReport {
    pub annotations: Vec<AutoAnnotation>,
    /// Inputs where the detector fell back on at least one eye.
    pub excluded: Vec<usize>,
    /// Inputs where the detector failed, with the reason.
    pub failed: Vec<(usize, String)>,
}

/// Labels images with the hand-crafted detector's centers.
pub fn auto_annotate(items: &[LandmarkedImage<'_>], vote: &VoteConfig, fit: &RobustFitConfig) -> AutoAnnotateReport {
    let results: Vec<Result<HandcraftedResult>> = items
        .par_iter()
        .map(|it| detect_handcrafted(it.image, it.landmarks, vote, fit))
        .collect();
    let mut report = AutoAnnotateReport::default();
    for (index, (it, res)) in items.iter().zip(results).enumerate() {
        match res {
            Err(e) => {
                warn!("auto-annotation of {} failed: {e}", it.id);
                report.failed.push((index, e.to_string()));
            }
            Ok(h) if h.any_fallback() => {
                debug!("auto-annotation of {} fell back, excluded", it.id);
                report.excluded.push(index);
            }
            Ok(h) => report.annotations.push(AutoAnnotation {
                index,
                annotation: EyeAnnotation {
                    image_id: it.id.to_string(),
                    image_size: Some((it.image.width, it.image.height)),
                    corners: it.landmarks.corners,
                    contours: it.landmarks.contours.clone(),
                    centers: h.centers(),
                    source: AnnotationSource::Auto,
                },
            }),
        }
    }
    report
}

/// Appends a horizontally mirrored copy of every image and annotation.
pub fn with_flipped(pairs: Vec<(GrayImage, EyeAnnotation)>) -> Vec<(GrayImage, EyeAnnotation)> {
    let flipped: Vec<_> = pairs
        .iter()
        .map(|(img, a)| (img.flip_horizontal(), a.flipped(img.width)))
        .collect();
    pairs.into_iter().chain(flipped).collect()
}

/// Auto-annotates the images and trains a cascade on the result.
pub fn train_from_auto(
    items: &[LandmarkedImage<'_>],
    vote: &VoteConfig,
    fit: &RobustFitConfig,
    train: &TrainConfig,
    flips: bool,
) -> Result<(CascadeModel, TrainReport, AutoAnnotateReport)> {
    let report = auto_annotate(items, vote, fit);
    if report.annotations.is_empty() {
        return Err(Error::InvalidInput("no image could be auto-annotated".into()));
    }
    let mut pairs: Vec<(GrayImage, EyeAnnotation)> = report
        .annotations
        .iter()
        .map(|a| (items[a.index].image.clone(), a.annotation.clone()))
        .collect();
    if flips {
        pairs = with_flipped(pairs);
    }
    let training: Vec<TrainingItem<'_>> = pairs
        .iter()
        .map(|(image, annotation)| TrainingItem { image, annotation })
        .collect();
    let (model, train_report) = train_cascade(&training, train)?;
    Ok((model, train_report, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::tests::constant_model;
    use crate::data::synth::{SynthParams, SyntheticScene};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(closure: [f64; 2]) -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = SyntheticScene::sample(&SynthParams::default(), &mut rng).unwrap();
        s.closure = closure;
        s
    }

    fn run(s: &SyntheticScene, cfg: &PipelineConfig) -> DetectionResult {
        let img = s.rasterize();
        let lm = s.annotation("x").landmarks();
        detect(&constant_model(1, 1, 2, [0.0; 4]), &img, &lm, cfg).unwrap()
    }

    #[test]
    fn gating_follows_closure_per_eye() {
        let cfg = PipelineConfig::default();
        let r = run(&scene([1.0, 1.0]), &cfg);
        assert_eq!((r.right.stage, r.left.stage), (Stage::Refined, Stage::Refined));
        // Contour ratio is half the closure.
        let r = run(&scene([1.0, 0.4]), &cfg);
        assert_eq!((r.right.stage, r.left.stage), (Stage::Refined, Stage::Regressed));
        assert!((r.left.closure_ratio - 0.2).abs() < 1e-9);
        let r = run(&scene([0.2, 1.0]), &cfg);
        assert_eq!(r.right.stage, Stage::ContourFallback);
    }

    #[test]
    fn contour_fallback_is_the_lid_midpoint() {
        let s = scene([0.2, 0.2]);
        let r = run(&s, &PipelineConfig::default());
        for k in 0..2 {
            assert!(r.eye(Eye::BOTH[k]).center.distance(s.eye_centers[k]) < 1e-9);
            assert_eq!(r.eye(Eye::BOTH[k]).radius, None);
        }
    }

    #[test]
    fn regression_only_when_refinement_is_off() {
        let cfg = PipelineConfig { use_refinement: false, ..PipelineConfig::default() };
        let s = scene([1.0, 1.0]);
        let r = run(&s, &cfg);
        let (anchor, t) = build_transform(&s.corners()).unwrap();
        let want = constant_model(1, 1, 2, [0.0; 4]).predict_image(&s.rasterize(), &anchor, &t).unwrap();
        assert_eq!(r.centers(), want);
        assert_eq!(r.right.stage, Stage::Regressed);
    }

    #[test]
    fn centers_are_clamped_into_the_image() {
        let s = scene([1.0, 1.0]);
        let cfg = PipelineConfig { use_refinement: false, ..PipelineConfig::default() };
        let m = constant_model(1, 1, 2, [-20.0, 0.0, 20.0, 0.0]);
        let r = detect(&m, &s.rasterize(), &s.annotation("x").landmarks(), &cfg).unwrap();
        assert!(r.right.clamped && r.left.clamped);
        assert_eq!(r.right.center.x, 0.0);
        assert_eq!(r.left.center.x, (s.image_size.0 - 1) as f64);
    }

    #[test]
    fn thresholds_are_validated() {
        let bad = PipelineConfig { regress_threshold: 0.4, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn auto_annotations_pass_detector_output_through() {
        let scenes: Vec<_> = (0..3)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
                SyntheticScene::sample(&SynthParams::default(), &mut rng).unwrap()
            })
            .collect();
        let images: Vec<_> = scenes.iter().map(|s| s.rasterize()).collect();
        let lms: Vec<_> = scenes.iter().map(|s| s.annotation("x").landmarks()).collect();
        let ids = ["a", "b", "c"];
        let items: Vec<_> = (0..3)
            .map(|i| LandmarkedImage { id: ids[i], image: &images[i], landmarks: &lms[i] })
            .collect();
        let vote = VoteConfig::default();
        let fit = RobustFitConfig::default();
        let rep = auto_annotate(&items, &vote, &fit);
        assert_eq!(rep.annotations.len() + rep.excluded.len() + rep.failed.len(), 3);
        for a in &rep.annotations {
            let h = detect_handcrafted(&images[a.index], &lms[a.index], &vote, &fit).unwrap();
            assert_eq!(a.annotation.centers, h.centers());
            assert_eq!(a.annotation.source, AnnotationSource::Auto);
        }
        let pairs: Vec<_> = rep
            .annotations
            .iter()
            .map(|a| (images[a.index].clone(), a.annotation.clone()))
            .collect();
        assert_eq!(with_flipped(pairs).len(), 2 * rep.annotations.len());
    }

    #[test]
    fn training_from_nothing_fails() {
        let r = train_from_auto(&[], &VoteConfig::default(), &RobustFitConfig::default(), &TrainConfig::default(), false);
        assert!(r.is_err());
    }
}
