//! Eye geometry: points, the face-normalizing similarity transform, and
//! contour-derived quantities.
//!
//! Image coordinates have their origin at the top-left pixel center with `y`
//! pointing down. "Right eye" is the subject's right eye, which appears on
//! the image's left side.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Counter-clockwise (in a y-up frame) perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// The four eye corners reported by a facial landmark aligner, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeCorners {
    pub right_outer: Point2,
    pub right_inner: Point2,
    pub left_inner: Point2,
    pub left_outer: Point2,
}

impl EyeCorners {
    pub fn as_array(&self) -> [Point2; 4] {
        [
            self.right_outer,
            self.right_inner,
            self.left_inner,
            self.left_outer,
        ]
    }

    pub fn from_array(p: [Point2; 4]) -> Self {
        EyeCorners {
            right_outer: p[0],
            right_inner: p[1],
            left_inner: p[2],
            left_outer: p[3],
        }
    }

    /// Corner pair of one eye, ordered (outer, inner).
    pub fn eye(&self, eye: crate::hog::Eye) -> (Point2, Point2) {
        match eye {
            crate::hog::Eye::Right => (self.right_outer, self.right_inner),
            crate::hog::Eye::Left => (self.left_outer, self.left_inner),
        }
    }

    /// Distance between the two corners of one eye (the "eye size").
    pub fn eye_size(&self, eye: crate::hog::Eye) -> f64 {
        let (a, b) = self.eye(eye);
        a.distance(b)
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        EyeCorners::from_array(self.as_array().map(f))
    }
}

/// Corner midpoints of both eyes and the interocular vector between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeAnchor {
    pub c_right: Point2,
    pub c_left: Point2,
    pub inter_ocular: Point2,
}

impl EyeAnchor {
    pub fn inter_ocular_distance(&self) -> f64 {
        self.inter_ocular.norm()
    }

    /// Unit vector along the interocular axis.
    pub fn axis(&self) -> Point2 {
        self.inter_ocular * (1.0 / self.inter_ocular_distance())
    }
}

/// Similarity transform from image pixels to the face-normalized frame.
///
/// `T(p) = scale * R * p + translation`, with `R` a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub rotation: [[f64; 2]; 2],
    pub translation: Point2,
}

impl NormalizationTransform {
    pub fn apply(&self, p: Point2) -> Point2 {
        let r = &self.rotation;
        Point2::new(
            self.scale * (r[0][0] * p.x + r[0][1] * p.y) + self.translation.x,
            self.scale * (r[1][0] * p.x + r[1][1] * p.y) + self.translation.y,
        )
    }

    pub fn apply_inverse(&self, q: Point2) -> Point2 {
        let r = &self.rotation;
        let u = (q - self.translation) * (1.0 / self.scale);
        // R is orthonormal, so its inverse is its transpose.
        Point2::new(
            r[0][0] * u.x + r[1][0] * u.y,
            r[0][1] * u.x + r[1][1] * u.y,
        )
    }

    /// Maps a normalized shape back to image coordinates `(right, left)`.
    pub fn shape_to_image(&self, shape: &Shape) -> (Point2, Point2) {
        (self.apply_inverse(shape.right), self.apply_inverse(shape.left))
    }

    pub fn shape_from_image(&self, right: Point2, left: Point2) -> Shape {
        Shape {
            right: self.apply(right),
            left: self.apply(left),
        }
    }
}

/// The pair of eye centers in the face-normalized frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub right: Point2,
    pub left: Point2,
}

impl Shape {
    /// `((0,0), (1,0))`: both corner midpoints in the normalized frame.
    pub const REFERENCE: Shape = Shape {
        right: Point2::ORIGIN,
        left: Point2::new(1.0, 0.0),
    };

    pub fn to_array(&self) -> [f64; 4] {
        [self.right.x, self.right.y, self.left.x, self.left.y]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Shape {
            right: Point2::new(v[0], v[1]),
            left: Point2::new(v[2], v[3]),
        }
    }

    pub fn centroid(&self) -> Point2 {
        self.right.midpoint(self.left)
    }

    pub fn translated(&self, t: Point2) -> Shape {
        Shape {
            right: self.right + t,
            left: self.left + t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.right.is_finite() && self.left.is_finite()
    }
}

/// Closed eye outline in image pixels, ordered along the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeContour {
    pub points: Vec<Point2>,
}

impl EyeContour {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidLandmarks(format!(
                "eye contour needs at least 4 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidLandmarks("non-finite contour point".into()));
        }
        Ok(EyeContour { points })
    }

    /// An ellipse outline through the two corners with the given height-to-width
    /// ratio. Used when a landmark source provides corners only.
    pub fn ellipse_from_corners(outer: Point2, inner: Point2, ratio: f64, samples: usize) -> Self {
        let center = outer.midpoint(inner);
        let half = (inner - outer) * 0.5;
        let minor = half.perp() * ratio;
        let points = (0..samples.max(4))
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / samples.max(4) as f64;
                center + half * t.cos() + minor * t.sin()
            })
            .collect();
        EyeContour { points }
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len() as f64;
        let sum = self.points.iter().fold(Point2::ORIGIN, |acc, &p| acc + p);
        sum * (1.0 / n)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean distance from `p` to the nearest point of the polygon boundary.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        EyeContour {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Computes the eye anchor and the transform that sends the right corner
/// midpoint to `(0,0)` and the left one to `(1,0)`.
pub fn build_transform(corners: &EyeCorners) -> Result<(EyeAnchor, NormalizationTransform)> {
    if corners.as_array().iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidLandmarks("non-finite eye corner".into()));
    }
    if corners.right_outer == corners.right_inner || corners.left_outer == corners.left_inner {
        return Err(Error::InvalidLandmarks("coincident eye corners".into()));
    }
    let c_right = corners.right_outer.midpoint(corners.right_inner);
    let c_left = corners.left_inner.midpoint(corners.left_outer);
    let inter_ocular = c_left - c_right;
    let dist = inter_ocular.norm();
    if dist <= f64::EPSILON * (1.0 + c_right.norm()) {
        return Err(Error::InvalidLandmarks(
            "zero-length interocular vector".into(),
        ));
    }
    let u = inter_ocular * (1.0 / dist);
    let rotation = [[u.x, u.y], [-u.y, u.x]];
    let scale = 1.0 / dist;
    let rc = Point2::new(
        rotation[0][0] * c_right.x + rotation[0][1] * c_right.y,
        rotation[1][0] * c_right.x + rotation[1][1] * c_right.y,
    );
    let transform = NormalizationTransform {
        scale,
        rotation,
        translation: -rc * scale,
    };
    let anchor = EyeAnchor {
        c_right,
        c_left,
        inter_ocular,
    };
    Ok((anchor, transform))
}

/// The cascade's starting shape: both corner midpoints mapped to the
/// normalized frame, which is `((0,0), (1,0))` by construction.
pub fn initial_shape(anchor: &EyeAnchor, transform: &NormalizationTransform) -> Shape {
    let mut shape = transform.shape_from_image(anchor.c_right, anchor.c_left);
    // Snap away rounding noise; the construction pins these values.
    shape.right = Shape::REFERENCE.right;
    shape.left = Shape::REFERENCE.left;
    shape
}

/// Height-to-width ratio of an eye contour, as the square root of the ratio of
/// the minor to major eigenvalue of the contour points' second-moment matrix.
pub fn closure_ratio(contour: &EyeContour) -> Result<f64> {
    if contour.points.len() < 4 {
        return Err(Error::InvalidLandmarks(format!(
            "closure ratio needs at least 4 contour points, got {}",
            contour.points.len()
        )));
    }
    let c = contour.centroid();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &contour.points {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let half_trace = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy).sqrt();
    let major = half_trace + disc;
    let minor = (half_trace - disc).max(0.0);
    if major <= 0.0 {
        return Ok(0.0);
    }
    Ok((minor / major).sqrt())
}

/// True when `p` lies inside the contour at least `erosion` pixels away from
/// its boundary.
pub fn point_in_eye_mask(p: Point2, contour: &EyeContour, erosion: f64) -> bool {
    let (lo, hi) = contour.bounds();
    if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
        return false;
    }
    if !contour.contains(p) {
        return false;
    }
    erosion <= 0.0 || contour.boundary_distance(p) >= erosion
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners(cr: Point2, cl: Point2, half: f64) -> EyeCorners {
        let (a, t) = (cl - cr, half);
        let u = a * (1.0 / a.norm());
        EyeCorners {
            right_outer: cr - u * t,
            right_inner: cr + u * t,
            left_inner: cl - u * t,
            left_outer: cl + u * t,
        }
    }

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn transform_examples() {
        let (_, t) = build_transform(&corners(
            Point2::new(100.0, 100.0),
            Point2::new(200.0, 100.0),
            20.0,
        ))
        .unwrap();
        assert!(close(t.apply(Point2::new(150.0, 120.0)), Point2::new(0.5, 0.2), 1e-12));

        let (anchor, t) =
            build_transform(&corners(Point2::ORIGIN, Point2::new(0.0, 100.0), 15.0)).unwrap();
        assert!(close(t.apply(Point2::new(10.0, 50.0)), Point2::new(0.5, -0.1), 1e-12));
        assert!(close(t.apply(anchor.c_right), Point2::ORIGIN, 1e-9));
        assert!(close(t.apply(anchor.c_left), Point2::new(1.0, 0.0), 1e-9));
    }

    #[test]
    fn degenerate_corners_rejected() {
        let p = Point2::new(5.0, 5.0);
        let c = EyeCorners {
            right_outer: Point2::new(0.0, 5.0),
            right_inner: Point2::new(10.0, 5.0),
            left_inner: Point2::new(10.0, 5.0),
            left_outer: Point2::new(0.0, 5.0),
        };
        assert!(matches!(build_transform(&c), Err(Error::InvalidLandmarks(_))));
        let c2 = EyeCorners {
            right_outer: p,
            right_inner: p,
            left_inner: Point2::new(9.0, 5.0),
            left_outer: Point2::new(19.0, 5.0),
        };
        assert!(build_transform(&c2).is_err());
    }

    #[test]
    fn initial_shape_round_trips() {
        let c = corners(Point2::new(31.5, 80.25), Point2::new(140.0, 61.0), 18.0);
        let (anchor, t) = build_transform(&c).unwrap();
        let s0 = initial_shape(&anchor, &t);
        assert_eq!(s0, Shape::REFERENCE);
        assert!(close(t.apply_inverse(s0.right), anchor.c_right, 1e-9));
        assert!(close(t.apply_inverse(s0.left), anchor.c_left, 1e-9));
    }

    fn ellipse(a: f64, b: f64, rot_deg: f64, n: usize) -> EyeContour {
        let (s, c) = rot_deg.to_radians().sin_cos();
        EyeContour::new(
            (0..n)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / n as f64;
                    let (x, y) = (a * t.cos(), b * t.sin());
                    Point2::new(50.0 + c * x - s * y, 40.0 + s * x + c * y)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn closure_ratio_examples() {
        assert!((closure_ratio(&ellipse(10.0, 10.0, 0.0, 16)).unwrap() - 1.0).abs() < 0.01);
        assert!((closure_ratio(&ellipse(20.0, 5.0, 0.0, 16)).unwrap() - 0.25).abs() < 0.01);

        // Oracle: eigenvalues of the second-moment matrix via nalgebra.
        let rotated = ellipse(20.0, 5.0, 30.0, 16);
        let c = rotated.centroid();
        let mut m = nalgebra::Matrix2::<f64>::zeros();
        for p in &rotated.points {
            let d = nalgebra::Vector2::new(p.x - c.x, p.y - c.y);
            m += d * d.transpose();
        }
        let ev = m.symmetric_eigen().eigenvalues;
        let oracle = (ev.min() / ev.max()).sqrt();
        let got = closure_ratio(&rotated).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.25).abs() < 0.02);

        let few = EyeContour {
            points: vec![Point2::ORIGIN; 3],
        };
        assert!(closure_ratio(&few).is_err());
    }

    #[test]
    fn eye_mask_examples() {
        let square = EyeContour::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(40.0, 0.0),
            Point2::new(40.0, 20.0),
            Point2::new(0.0, 20.0),
        ])
        .unwrap();
        assert!(point_in_eye_mask(square.centroid(), &square, 0.0));
        assert!(!point_in_eye_mask(Point2::new(-5.0, 10.0), &square, 0.0));
        // Oracle: exact distance to the nearest edge is 2 < 3.
        let p = Point2::new(2.0, 10.0);
        assert!((square.boundary_distance(p) - 2.0).abs() < 1e-12);
        assert!(!point_in_eye_mask(p, &square, 3.0));
        assert!(point_in_eye_mask(p, &square, 2.0));
    }

    use proptest::prelude::*;

    fn arb_corners() -> impl Strategy<Value = EyeCorners> {
        (
            -500.0..500.0f64,
            -500.0..500.0f64,
            0.0..std::f64::consts::TAU,
            20.0..300.0f64,
            3.0..40.0f64,
        )
            .prop_map(|(x, y, ang, d, half)| {
                let cr = Point2::new(x, y);
                let cl = cr + Point2::new(ang.cos(), ang.sin()) * d;
                corners(cr, cl, half)
            })
    }

    proptest! {
        #[test]
        fn transform_inverse_round_trip(c in arb_corners(), px in -1e3..1e3f64, py in -1e3..1e3f64) {
            let (_, t) = build_transform(&c).unwrap();
            let p = Point2::new(px, py);
            prop_assert!(t.apply(t.apply_inverse(p)).distance(p) < 1e-9);
        }

        #[test]
        fn transform_is_similarity_equivariant(
            c in arb_corners(),
            ang in -3.0..3.0f64,
            k in 0.2..5.0f64,
            tx in -300.0..300.0f64,
            px in -200.0..200.0f64,
            py in -200.0..200.0f64,
        ) {
            let (s, co) = ang.sin_cos();
            let g = |p: Point2| Point2::new(k * (co * p.x - s * p.y) + tx, k * (s * p.x + co * p.y) - tx);
            let (_, t) = build_transform(&c).unwrap();
            let (_, t2) = build_transform(&c.map(g)).unwrap();
            let p = Point2::new(px, py);
            prop_assert!(t.apply(p).distance(t2.apply(g(p))) < 1e-7);
        }

        #[test]
        fn closure_ratio_scale_invariant(a in 2.0..50.0f64, b in 0.5..50.0f64, rot in 0.0..180.0f64, k in 0.01..100.0f64) {
            let e = ellipse(a, b, rot, 16);
            let r1 = closure_ratio(&e).unwrap();
            let r2 = closure_ratio(&e.map(|p| p * k)).unwrap();
            prop_assert!(r1 >= 0.0);
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
