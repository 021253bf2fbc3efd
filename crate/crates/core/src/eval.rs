//! Normalized eye-center error, threshold accuracies and method comparison.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{EyeAnnotation, GrayImage, Landmarks};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::pipeline::{DetectionResult, Stage};

/// Thresholds reported in the usual benchmark tables.
pub const TABLE_THRESHOLDS: [f64; 4] = [0.025, 0.05, 0.1, 0.25];

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub image_id: String,
    pub e_right: f64,
    pub e_left: f64,
    /// Distance between the true centers.
    pub d: f64,
    /// `max(e_right, e_left) / d`.
    pub e: f64,
}

/// Worst per-eye error relative to the true interocular distance.
pub fn normalized_error(image_id: &str, est: (Point2, Point2), truth: (Point2, Point2)) -> Result<ErrorRecord> {
    let d = truth.0.distance(truth.1);
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("{image_id}: true eye centers coincide")));
    }
    let e_right = est.0.distance(truth.0);
    let e_left = est.1.distance(truth.1);
    let e = e_right.max(e_left) / d;
    if !e.is_finite() {
        return Err(Error::NonFinite("normalized error"));
    }
    Ok(ErrorRecord { image_id: image_id.to_string(), e_right, e_left, d, e })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of records with `e <= threshold`.
    pub fractions: Vec<f64>,
}

impl AccuracyCurve {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| *t == threshold).map(|i| self.fractions[i])
    }
}

pub fn accuracy_at(records: &[ErrorRecord], thresholds: &[f64]) -> Result<AccuracyCurve> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no error records".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("thresholds must be finite and strictly ascending".into()));
    }
    let mut errors: Vec<f64> = records.iter().map(|r| r.e).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let fractions = thresholds
        .iter()
        .map(|t| errors.partition_point(|e| e <= t) as f64 / n)
        .collect();
    Ok(AccuracyCurve { thresholds: thresholds.to_vec(), fractions })
}

pub fn mean_error(records: &[ErrorRecord]) -> f64 {
    records.iter().map(|r| r.e).sum::<f64>() / records.len().max(1) as f64
}

pub fn median_error(records: &[ErrorRecord]) -> f64 {
    let mut e: Vec<f64> = records.iter().map(|r| r.e).collect();
    if e.is_empty() {
        return f64::NAN;
    }
    e.sort_by(f64::total_cmp);
    let m = e.len() / 2;
    if e.len() % 2 == 1 {
        e[m]
    } else {
        0.5 * (e[m - 1] + e[m])
    }
}

/// Pairs predictions with ground truth by image id, in ground-truth order.
pub fn records_from_predictions(predictions: &[EyeAnnotation], truth: &[EyeAnnotation]) -> Result<Vec<ErrorRecord>> {
    let by_id: HashMap<&str, &EyeAnnotation> = predictions.iter().map(|p| (p.image_id.as_str(), p)).collect();
    truth
        .iter()
        .map(|t| {
            let p = by_id
                .get(t.image_id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("no prediction for {}", t.image_id)))?;
            normalized_error(&t.image_id, p.centers, t.centers)
        })
        .collect()
}

/// One evaluation input: the image, its landmarks and the true centers.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub image: &'a GrayImage,
    pub landmarks: &'a Landmarks,
    pub truth: (Point2, Point2),
}

pub type DetectFn<'a> = dyn Fn(&GrayImage, &Landmarks) -> Result<DetectionResult> + Sync + 'a;

/// A named detector.
pub struct Method<'a> {
    pub name: String,
    pub detect: Box<DetectFn<'a>>,
}

impl<'a> Method<'a> {
    pub fn new(name: impl Into<String>, detect: impl Fn(&GrayImage, &Landmarks) -> Result<DetectionResult> + Sync + 'a) -> Self {
        Method { name: name.into(), detect: Box::new(detect) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub name: String,
    pub records: Vec<ErrorRecord>,
    pub curve: AccuracyCurve,
    pub mean: f64,
    pub median: f64,
    /// Mean detection wall time per image, seconds.
    pub seconds_per_image: f64,
    /// Per-eye stage counts.
    pub stages: BTreeMap<Stage, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub methods: Vec<MethodReport>,
}

/// Runs every method on every item.
///
/// Records are computed in parallel but reported in input order. Timing covers
/// only the detector call.
pub fn compare_methods(items: &[EvalItem<'_>], methods: &[Method<'_>], thresholds: &[f64]) -> Result<ComparisonReport> {
    let mut out = Vec::with_capacity(methods.len());
    for m in methods {
        let results: Vec<Result<(DetectionResult, f64)>> = items
            .par_iter()
            .map(|it| {
                let start = Instant::now();
                let det = (m.detect)(it.image, it.landmarks)?;
                Ok((det, start.elapsed().as_secs_f64()))
            })
            .collect();
        let mut records = Vec::with_capacity(items.len());
        let mut stages: BTreeMap<Stage, usize> = Stage::ALL.iter().map(|s| (*s, 0)).collect();
        let mut seconds = 0.0;
        for (it, r) in items.iter().zip(results) {
            let (det, t) = r?;
            seconds += t;
            *stages.entry(det.right.stage).or_default() += 1;
            *stages.entry(det.left.stage).or_default() += 1;
            records.push(normalized_error(it.id, det.centers(), it.truth)?);
        }
        out.push(MethodReport {
            name: m.name.clone(),
            curve: accuracy_at(&records, thresholds)?,
            mean: mean_error(&records),
            median: median_error(&records),
            seconds_per_image: seconds / items.len().max(1) as f64,
            stages,
            records,
        });
    }
    Ok(ComparisonReport { methods: out })
}

impl ComparisonReport {
    /// Per-image error of each method minus that of the first method.
    pub fn deltas(&self) -> Vec<(String, Vec<f64>)> {
        let Some(base) = self.methods.first() else {
            return Vec::new();
        };
        base.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    r.image_id.clone(),
                    self.methods.iter().map(|m| m.records[i].e - r.e).collect(),
                )
            })
            .collect()
    }

    /// Human-readable summary: one threshold table row per method, then
    /// statistics and stage counts.
    pub fn to_text(&self) -> String {
        let mut s = match self.methods.first() {
            Some(m) => accuracy_table_header(&m.curve.thresholds),
            None => String::new(),
        };
        for m in &self.methods {
            s += &accuracy_table_row(&m.name, &m.curve);
        }
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{}: mean {:.5} median {:.5} time {:.3} ms/image images {}",
                m.name,
                m.mean,
                m.median,
                1e3 * m.seconds_per_image,
                m.records.len()
            );
            let stages: Vec<String> = m.stages.iter().map(|(k, v)| format!("{}={v}", k.as_str())).collect();
            let _ = writeln!(s, "{}: stages {}", m.name, stages.join(" "));
        }
        s
    }

    /// Whitespace-separated columns: threshold, then one accuracy per method.
    pub fn curve_columns(&self) -> String {
        let mut s = String::from("threshold");
        for m in &self.methods {
            s += &format!(" {}", m.name);
        }
        s.push('\n');
        if let Some(first) = self.methods.first() {
            for (i, t) in first.curve.thresholds.iter().enumerate() {
                s += &format!("{t}");
                for m in &self.methods {
                    s += &format!(" {:.6}", m.curve.fractions[i]);
                }
                s.push('\n');
            }
        }
        s
    }

    /// Per-image errors, one row per image, one column per method.
    pub fn record_columns(&self) -> String {
        let mut s = String::from("image");
        for m in &self.methods {
            s += &format!(" {}", m.name);
        }
        s.push('\n');
        if let Some(first) = self.methods.first() {
            for (i, r) in first.records.iter().enumerate() {
                s += &r.image_id;
                for m in &self.methods {
                    s += &format!(" {:.8}", m.records[i].e);
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Header line for [`accuracy_table_row`].
pub fn accuracy_table_header(thresholds: &[f64]) -> String {
    let cols: Vec<String> = thresholds.iter().map(|t| format!("{:>9}", format!("e<={t}"))).collect();
    format!("{:<16} {}\n", "method", cols.join(" "))
}

/// `name  acc1% acc2% ...` with accuracies as percentages.
pub fn accuracy_table_row(name: &str, curve: &AccuracyCurve) -> String {
    let cols: Vec<String> = curve.fractions.iter().map(|f| format!("{:>8.2}%", 100.0 * f)).collect();
    format!("{name:<16} {}\n", cols.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(e: f64) -> ErrorRecord {
        ErrorRecord { image_id: String::new(), e_right: e, e_left: e, d: 1.0, e }
    }

    #[test]
    fn normalized_error_examples() {
        let t = (Point2::new(0.0, 0.0), Point2::new(100.0, 0.0));
        assert_eq!(normalized_error("a", t, t).unwrap().e, 0.0);
        let est = (Point2::new(3.0, 4.0), Point2::new(103.0, 0.0));
        let r = normalized_error("a", est, t).unwrap();
        assert_eq!((r.e_right, r.e_left, r.d), (5.0, 3.0, 100.0));
        assert!((r.e - 0.05).abs() < 1e-15);
        let swapped = (t.1, t.0);
        assert_eq!(normalized_error("a", swapped, t).unwrap().e, 1.0);
        assert!(normalized_error("a", t, (t.0, t.0)).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let zero: Vec<_> = (0..5).map(|_| rec(0.0)).collect();
        assert_eq!(accuracy_at(&zero, &TABLE_THRESHOLDS).unwrap().fractions, vec![1.0; 4]);
        let r = [rec(0.01), rec(0.03), rec(0.2)];
        assert_eq!(accuracy_at(&r, &[0.05]).unwrap().fractions, vec![2.0 / 3.0]);
        // Inclusive comparison.
        assert_eq!(accuracy_at(&[rec(0.05)], &[0.05]).unwrap().fractions, vec![1.0]);
        assert!(accuracy_at(&[], &[0.05]).is_err());
        assert!(accuracy_at(&r, &[0.1, 0.05]).is_err());
    }

    #[test]
    fn median_and_mean() {
        let r = [rec(0.1), rec(0.3), rec(0.2), rec(0.4)];
        assert!((median_error(&r) - 0.25).abs() < 1e-15);
        assert!((mean_error(&r) - 0.25).abs() < 1e-15);
        assert_eq!(median_error(&r[..3]), 0.2);
    }

    #[test]
    fn predictions_are_matched_by_id() {
        use crate::data::AnnotationSource;
        use crate::geometry::EyeCorners;
        let mk = |id: &str, x: f64| EyeAnnotation {
            image_id: id.into(),
            image_size: None,
            corners: EyeCorners::from_array([Point2::ORIGIN; 4]),
            contours: None,
            centers: (Point2::new(x, 0.0), Point2::new(x + 100.0, 0.0)),
            source: AnnotationSource::Manual,
        };
        let truth = [mk("a", 0.0), mk("b", 0.0)];
        let pred = [mk("b", 5.0), mk("a", 0.0)];
        let r = records_from_predictions(&pred, &truth).unwrap();
        assert_eq!(r[0].e, 0.0);
        assert_eq!(r[1].e, 0.05);
        assert!(records_from_predictions(&pred[..1], &truth).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_is_monotone(errors in prop::collection::vec(0.0f64..0.5, 1..40),
                                mut ts in prop::collection::btree_set(0u32..1000, 1..10)) {
            let records: Vec<_> = errors.iter().map(|e| rec(*e)).collect();
            let thresholds: Vec<f64> = std::mem::take(&mut ts).into_iter().map(|t| t as f64 / 2000.0).collect();
            let c = accuracy_at(&records, &thresholds).unwrap();
            for w in c.fractions.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for f in &c.fractions {
                prop_assert!((0.0..=1.0).contains(f));
            }
        }

        #[test]
        fn similarity_invariance(px in prop::array::uniform8(-50.0f64..50.0), k in 0.2f64..5.0,
                                 theta in -3.1f64..3.1, tx in -100.0f64..100.0, ty in -100.0f64..100.0) {
            let truth = (Point2::new(px[0], px[1]), Point2::new(px[2] + 60.0, px[3]));
            let est = (Point2::new(px[4], px[5]), Point2::new(px[6], px[7]));
            let (c, s) = (theta.cos(), theta.sin());
            let f = |p: Point2| Point2::new(k * (c * p.x - s * p.y) + tx, k * (s * p.x + c * p.y) + ty);
            let a = normalized_error("x", est, truth).unwrap().e;
            let b = normalized_error("x", (f(est.0), f(est.1)), (f(truth.0), f(truth.1))).unwrap().e;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
