//! Sub-pixel iris refinement: edge points from short radial scan lines, then a
//! robust circle fit with prior terms, solved by Gauss-Newton with
//! iteratively reweighted least squares and a Tukey biweight.

use nalgebra::{Matrix3, Vector3};

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{point_in_eye_mask, EyeAnchor, EyeContour, Point2};
use crate::imgproc::GradientField;

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFitConfig {
    /// Weight of the robust data term.
    pub w1: f64,
    /// Weight pulling the center toward its prior.
    pub w2: f64,
    /// Weight pulling the radius toward its default.
    pub w3: f64,
    pub max_iterations: usize,
    /// Relative cost change below which a phase has converged.
    pub rel_tolerance: f64,
    /// Tukey parameter of the first phase, as a fraction of `r_init`.
    pub tukey_initial_factor: f64,
    /// Tukey parameter after the first convergence, as a fraction of `r_init`.
    pub tukey_final_factor: f64,
    /// Scan line half-length as a fraction of the radius.
    pub scan_fraction: f64,
    pub angle_cutoff_deg: f64,
    /// Angular sectors, in degrees from the eye axis, that are sampled.
    pub sectors: Vec<(f64, f64)>,
    pub angle_step_deg: f64,
    /// Spacing of samples along a scan line, in pixels.
    pub scan_step: f64,
    pub max_step_halvings: usize,
}

impl Default for RobustFitConfig {
    fn default() -> Self {
        RobustFitConfig {
            w1: 1.0,
            w2: 0.1,
            w3: 0.1,
            max_iterations: 30,
            rel_tolerance: 1e-4,
            tukey_initial_factor: 0.3,
            tukey_final_factor: 0.1,
            scan_fraction: 0.3,
            angle_cutoff_deg: 25.0,
            sectors: vec![(-45.0, 45.0), (135.0, 225.0)],
            angle_step_deg: 5.0,
            scan_step: 0.25,
            max_step_halvings: 8,
        }
    }
}

impl RobustFitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("circle fit config: {m}")));
        if [self.w1, self.w2, self.w3].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        if !(self.tukey_initial_factor > 0.0 && self.tukey_final_factor > 0.0) {
            return bad("Tukey factors must be positive");
        }
        if !(self.angle_cutoff_deg > 0.0 && self.angle_cutoff_deg < 90.0) {
            return bad("angle cutoff must lie in (0, 90) degrees");
        }
        if !(self.scan_fraction > 0.0 && self.scan_step > 0.0 && self.angle_step_deg > 0.0) {
            return bad("scan fraction and steps must be positive");
        }
        if self.sectors.iter().any(|(a, b)| !(a <= b)) {
            return bad("sectors must be well-ordered");
        }
        Ok(())
    }

    /// Sample angles in degrees, each sector walked from its start in steps.
    pub fn sample_angles(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &(lo, hi) in &self.sectors {
            let n = ((hi - lo) / self.angle_step_deg + 1e-9).floor() as usize;
            out.extend((0..=n).map(|k| lo + k as f64 * self.angle_step_deg));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// Too few edge points; the prior is returned.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleEstimate {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub inlier_fraction: f64,
    pub status: FitStatus,
}

impl CircleEstimate {
    pub fn center(&self) -> Point2 {
        Point2::new(self.a, self.b)
    }

    /// An estimate that is only a starting point (no fit performed).
    pub fn initial(center: Point2, r: f64) -> Self {
        CircleEstimate {
            a: center.x,
            b: center.y,
            r,
            final_cost: 0.0,
            iterations: 0,
            inlier_fraction: 0.0,
            status: FitStatus::Fallback,
        }
    }

    pub fn is_refined(&self) -> bool {
        self.status != FitStatus::Fallback
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    pub position: Point2,
    /// Dot product of the image gradient with the outward circle normal.
    pub score: f64,
    /// Angle of the scan line's circle sample relative to the eye axis, degrees.
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgePointSet {
    pub points: Vec<EdgePoint>,
    /// Scan lines whose circle sample fell inside the eye mask.
    pub scan_lines: usize,
}

impl EdgePointSet {
    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// True when the mask excluded every circle sample.
    pub fn no_coverage(&self) -> bool {
        self.scan_lines == 0
    }
}

/// Gaussian smoothing used for edge gradients: `max(1, 0.02 * |E_inter|)`.
pub fn edge_smoothing_sigma(inter_ocular: f64) -> f64 {
    (0.02 * inter_ocular).max(1.0)
}

/// Finds iris boundary points along radial scan lines through the circle
/// `init`. Angles are measured from `axis` (the eye's horizontal direction);
/// circle samples outside `contour`, when given, are skipped.
pub fn extract_edge_points(
    image: &GrayImage,
    init: &CircleEstimate,
    contour: Option<&EyeContour>,
    axis: Point2,
    smoothing_sigma: f64,
    cfg: &RobustFitConfig,
) -> Result<EdgePointSet> {
    if !(init.r > 0.0 && init.r.is_finite()) || !init.center().is_finite() {
        return Err(Error::InvalidInput("initial circle must have a positive radius".into()));
    }
    let u = axis * (1.0 / axis.norm());
    let v = u.perp();
    let c = init.center();
    let reach = init.r * (1.0 + cfg.scan_fraction) + 2.0;
    let field = GradientField::new(
        image,
        c - Point2::new(reach, reach),
        c + Point2::new(reach, reach),
        smoothing_sigma,
    );
    let cos_cutoff = cfg.angle_cutoff_deg.to_radians().cos();
    let half = cfg.scan_fraction * init.r;
    let steps = (half / cfg.scan_step).floor() as i64;
    let mut out = EdgePointSet::default();
    for deg in cfg.sample_angles() {
        let (s, co) = deg.to_radians().sin_cos();
        let n = u * co + v * s;
        let on_circle = c + n * init.r;
        if let Some(contour) = contour {
            if !point_in_eye_mask(on_circle, contour, 0.0) {
                continue;
            }
        }
        out.scan_lines += 1;
        let mut best: Option<(f64, Point2, Point2)> = None;
        for k in -steps..=steps {
            let p = on_circle + n * (k as f64 * cfg.scan_step);
            let g = field.gradient_at(p);
            let score = g.dot(n);
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, p, g));
            }
        }
        if let Some((score, p, g)) = best {
            let mag = g.norm();
            if score > 0.0 && mag > 0.0 && score / mag >= cos_cutoff {
                out.points.push(EdgePoint {
                    position: p,
                    score,
                    angle_deg: deg,
                });
            }
        }
    }
    Ok(out)
}

/// Sum of squared radial residuals of `points` to the circle `(a, b, r)`.
pub fn plain_circle_cost(points: &[Point2], a: f64, b: f64, r: f64) -> f64 {
    let c = Point2::new(a, b);
    points.iter().map(|p| (p.distance(c) - r).powi(2)).sum()
}

/// Tukey biweight `rho(u) = C^2/6 * (1 - (1 - (u/C)^2)^3)`, saturating at `C^2/6`.
pub fn tukey_rho(u: f64, c: f64) -> f64 {
    let sat = c * c / 6.0;
    if u.abs() >= c {
        return sat;
    }
    let t = 1.0 - (u / c).powi(2);
    sat * (1.0 - t * t * t)
}

/// IRLS weight `rho'(u) / u = (1 - (u/C)^2)^2`, zero beyond `C`.
pub fn tukey_weight(u: f64, c: f64) -> f64 {
    if u.abs() >= c {
        return 0.0;
    }
    let t = 1.0 - (u / c).powi(2);
    t * t
}

/// Prior terms of the robust cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePrior {
    pub center: Point2,
    pub r_default: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Tukey parameter in force.
    pub tukey_c: f64,
    pub cost: f64,
    /// Whether a parameter update was accepted at this entry.
    pub accepted: bool,
}

struct Problem<'a> {
    points: &'a [Point2],
    prior: CirclePrior,
    cfg: &'a RobustFitConfig,
}

/// Robust cost of the circle `(center, r)` with Tukey parameter `tukey_c`:
/// the mean Tukey loss of the radial residuals plus the prior terms.
pub fn robust_cost(points: &[Point2], prior: CirclePrior, center: Point2, r: f64, tukey_c: f64, cfg: &RobustFitConfig) -> f64 {
    let n = points.len().max(1) as f64;
    let data: f64 = points.iter().map(|e| tukey_rho(e.distance(center) - r, tukey_c)).sum();
    cfg.w1 * data / n + cfg.w2 * (center - prior.center).norm().powi(2) + cfg.w3 * (r - prior.r_default).powi(2)
}

impl Problem<'_> {
    fn cost(&self, p: &Vector3<f64>, c: f64) -> f64 {
        robust_cost(self.points, self.prior, Point2::new(p[0], p[1]), p[2], c, self.cfg)
    }

    /// Reweighted Gauss-Newton step `-H^-1 g` at `p`.
    fn step(&self, p: &Vector3<f64>, c: f64) -> Option<Vector3<f64>> {
        let center = Point2::new(p[0], p[1]);
        let scale = self.cfg.w1 / self.points.len() as f64;
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for e in self.points {
            let d = *e - center;
            let dist = d.norm();
            if dist < 1e-12 {
                continue;
            }
            let u = dist - p[2];
            let w = tukey_weight(u, c);
            if w == 0.0 {
                continue;
            }
            let j = Vector3::new(-d.x / dist, -d.y / dist, -1.0);
            h += j * j.transpose() * (scale * w);
            g += j * (scale * w * u);
        }
        let (w2, w3) = (self.cfg.w2, self.cfg.w3);
        h[(0, 0)] += 2.0 * w2;
        h[(1, 1)] += 2.0 * w2;
        h[(2, 2)] += 2.0 * w3;
        g[0] += 2.0 * w2 * (p[0] - self.prior.center.x);
        g[1] += 2.0 * w2 * (p[1] - self.prior.center.y);
        g[2] += 2.0 * w3 * (p[2] - self.prior.r_default);
        h.cholesky().map(|ch| -ch.solve(&g)).or_else(|| h.try_inverse().map(|hi| -(hi * g)))
    }
}

/// Minimizes the robust cost with prior terms; see [`robust_fit_traced`].
pub fn robust_fit(points: &[Point2], prior: CirclePrior, r_init: f64, cfg: &RobustFitConfig) -> Result<CircleEstimate> {
    robust_fit_traced(points, prior, r_init, cfg).map(|(e, _)| e)
}

/// Fits a circle starting from the prior. The Tukey parameter starts at
/// `tukey_initial_factor * r_init` and drops to `tukey_final_factor * r_init`
/// the first time the relative cost change falls below the tolerance; the
/// second convergence ends the fit. A step that raises the cost is halved up
/// to `max_step_halvings` times; if it still fails, the current phase counts
/// as converged. Fewer than 3 points return the prior with
/// [`FitStatus::Fallback`].
pub fn robust_fit_traced(
    points: &[Point2],
    prior: CirclePrior,
    r_init: f64,
    cfg: &RobustFitConfig,
) -> Result<(CircleEstimate, Vec<TraceEntry>)> {
    cfg.validate()?;
    if !prior.center.is_finite() || !prior.r_default.is_finite() || !(r_init > 0.0 && r_init.is_finite()) {
        return Err(Error::NonFinite("circle fit prior"));
    }
    if points.len() < 3 {
        let mut e = CircleEstimate::initial(prior.center, prior.r_default);
        e.status = FitStatus::Fallback;
        return Ok((e, Vec::new()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("edge point"));
    }
    let problem = Problem { points, prior, cfg };
    let mut c = cfg.tukey_initial_factor * r_init;
    let mut final_phase = false;
    let mut p = Vector3::new(prior.center.x, prior.center.y, prior.r_default);
    let mut cost = problem.cost(&p, c);
    let mut trace = vec![TraceEntry { iteration: 0, tukey_c: c, cost, accepted: false }];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut accepted = None;
        if let Some(delta) = problem.step(&p, c) {
            let mut t = 1.0;
            for _ in 0..=cfg.max_step_halvings {
                let cand = p + delta * t;
                let cand_cost = problem.cost(&cand, c);
                if !cand_cost.is_finite() {
                    return Err(Error::NonFinite("circle fit cost"));
                }
                if cand_cost <= cost {
                    accepted = Some((cand, cand_cost));
                    break;
                }
                t *= 0.5;
            }
        }
        let converged = match accepted {
            Some((cand, cand_cost)) => {
                let rel = (cost - cand_cost).abs() / cost.abs().max(f64::MIN_POSITIVE);
                p = cand;
                cost = cand_cost;
                trace.push(TraceEntry { iteration: iterations, tukey_c: c, cost, accepted: true });
                rel < cfg.rel_tolerance
            }
            None => true,
        };
        if converged {
            if final_phase {
                status = FitStatus::Converged;
                break;
            }
            final_phase = true;
            c = cfg.tukey_final_factor * r_init;
            cost = problem.cost(&p, c);
            trace.push(TraceEntry { iteration: iterations, tukey_c: c, cost, accepted: false });
        }
    }
    if p[2] <= 0.0 || !p.iter().all(|v| v.is_finite()) {
        let mut e = CircleEstimate::initial(prior.center, prior.r_default);
        e.iterations = iterations;
        return Ok((e, trace));
    }
    let center = Point2::new(p[0], p[1]);
    let inliers = points.iter().filter(|e| (e.distance(center) - p[2]).abs() < c).count();
    Ok((
        CircleEstimate {
            a: p[0],
            b: p[1],
            r: p[2],
            final_cost: cost,
            iterations,
            inlier_fraction: inliers as f64 / points.len() as f64,
            status,
        },
        trace,
    ))
}

/// Refines one eye: edge extraction around `center` followed by the robust fit.
pub fn refine_eye(
    image: &GrayImage,
    center: Point2,
    r_init: f64,
    r_default: f64,
    contour: Option<&EyeContour>,
    anchor: &EyeAnchor,
    cfg: &RobustFitConfig,
) -> Result<(CircleEstimate, EdgePointSet)> {
    let init = CircleEstimate::initial(center, r_init);
    let sigma = edge_smoothing_sigma(anchor.inter_ocular_distance());
    let edges = extract_edge_points(image, &init, contour, anchor.axis(), sigma, cfg)?;
    let est = robust_fit(
        &edges.positions(),
        CirclePrior { center, r_default },
        r_init,
        cfg,
    )?;
    Ok((est, edges))
}

/// Refines both regressed centers with `r_init = r_default = 0.1 |E_inter|`.
pub fn refine(
    image: &GrayImage,
    centers: (Point2, Point2),
    anchor: &EyeAnchor,
    contours: Option<&[EyeContour; 2]>,
    cfg: &RobustFitConfig,
) -> Result<(CircleEstimate, CircleEstimate)> {
    let r = default_radius(anchor);
    let right = refine_eye(image, centers.0, r, r, contours.map(|c| &c[0]), anchor, cfg)?.0;
    let left = refine_eye(image, centers.1, r, r, contours.map(|c| &c[1]), anchor, cfg)?.0;
    Ok((right, left))
}

/// Default iris radius, `0.1 |E_inter|`.
pub fn default_radius(anchor: &EyeAnchor) -> f64 {
    0.1 * anchor.inter_ocular_distance()
}
