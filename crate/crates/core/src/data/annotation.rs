//! Eye annotations and the native line-oriented annotation format.
//!
//! ```text
//! eyeann 1
//! record
//! image faces/0001.png
//! size 384 286
//! source manual
//! corners <rox> <roy> <rix> <riy> <lix> <liy> <lox> <loy>
//! contour right <n> <x1> <y1> ... <xn> <yn>
//! contour left <n> <x1> <y1> ... <xn> <yn>
//! centers <rx> <ry> <lx> <ly>
//! end
//! ```
//!
//! `size`, both `contour` lines and `centers` are optional; `image` and
//! `corners` are required. Blank lines and lines starting with `#` are
//! ignored. Numbers are written in shortest round-trip decimal form so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{EyeContour, EyeCorners, Point2};

pub const NATIVE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "eyeann";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationSource {
    Manual,
    Auto,
    Synthetic,
}

impl AnnotationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::Manual => "manual",
            AnnotationSource::Auto => "auto",
            AnnotationSource::Synthetic => "synthetic",
        }
    }
}

impl FromStr for AnnotationSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "manual" => Ok(AnnotationSource::Manual),
            "auto" => Ok(AnnotationSource::Auto),
            "synthetic" => Ok(AnnotationSource::Synthetic),
            other => Err(format!("unknown annotation source '{other}'")),
        }
    }
}

/// Landmarks supplied by an external aligner: four corners and, optionally,
/// per-eye contours `[right, left]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    pub corners: EyeCorners,
    pub contours: Option<[EyeContour; 2]>,
}

impl Landmarks {
    /// Contours, falling back to open-eye ellipses through the corners when
    /// the landmark source provided none.
    pub fn contours_or_default(&self) -> [EyeContour; 2] {
        match &self.contours {
            Some(c) => c.clone(),
            None => [
                EyeContour::ellipse_from_corners(
                    self.corners.right_outer,
                    self.corners.right_inner,
                    0.5,
                    16,
                ),
                EyeContour::ellipse_from_corners(
                    self.corners.left_outer,
                    self.corners.left_inner,
                    0.5,
                    16,
                ),
            ],
        }
    }
}

/// A fully annotated image: corners, optional contours and both iris centers.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeAnnotation {
    pub image_id: String,
    pub image_size: Option<(u32, u32)>,
    pub corners: EyeCorners,
    pub contours: Option<[EyeContour; 2]>,
    /// `(right, left)` iris centers in image pixels.
    pub centers: (Point2, Point2),
    pub source: AnnotationSource,
}

impl EyeAnnotation {
    pub fn landmarks(&self) -> Landmarks {
        Landmarks {
            corners: self.corners,
            contours: self.contours.clone(),
        }
    }

    /// Mirrors the annotation for an image flipped about its vertical axis.
    /// The subject's right eye becomes the left one, so corner roles swap.
    pub fn flipped(&self, width: u32) -> EyeAnnotation {
        let m = |p: Point2| Point2::new((width - 1) as f64 - p.x, p.y);
        let c = &self.corners;
        EyeAnnotation {
            image_id: format!("{}#flip", self.image_id),
            image_size: self.image_size,
            corners: EyeCorners {
                right_outer: m(c.left_outer),
                right_inner: m(c.left_inner),
                left_inner: m(c.right_inner),
                left_outer: m(c.right_outer),
            },
            contours: self
                .contours
                .as_ref()
                .map(|[r, l]| [l.map(m), r.map(m)]),
            centers: (m(self.centers.1), m(self.centers.0)),
            source: self.source,
        }
    }
}

/// One parsed native record; `centers` is absent in landmark-only files.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeRecord {
    pub image_id: String,
    pub image_size: Option<(u32, u32)>,
    pub corners: Option<EyeCorners>,
    pub contours: [Option<EyeContour>; 2],
    pub centers: Option<(Point2, Point2)>,
    pub source: AnnotationSource,
}

impl NativeRecord {
    pub fn from_annotation(a: &EyeAnnotation) -> Self {
        NativeRecord {
            image_id: a.image_id.clone(),
            image_size: a.image_size,
            corners: Some(a.corners),
            contours: match &a.contours {
                Some([r, l]) => [Some(r.clone()), Some(l.clone())],
                None => [None, None],
            },
            centers: Some(a.centers),
            source: a.source,
        }
    }

    pub fn landmarks(&self, index: usize) -> Result<Landmarks> {
        let corners = self.corners.ok_or_else(|| Error::BadItem {
            index,
            reason: format!("record '{}' has no corners", self.image_id),
        })?;
        let contours = match &self.contours {
            [Some(r), Some(l)] => Some([r.clone(), l.clone()]),
            [None, None] => None,
            _ => {
                return Err(Error::BadItem {
                    index,
                    reason: format!("record '{}' has a contour for one eye only", self.image_id),
                })
            }
        };
        Ok(Landmarks { corners, contours })
    }

    pub fn into_annotation(self, index: usize) -> Result<EyeAnnotation> {
        let lm = self.landmarks(index)?;
        let centers = self.centers.ok_or_else(|| Error::BadItem {
            index,
            reason: format!("record '{}' has no centers", self.image_id),
        })?;
        Ok(EyeAnnotation {
            image_id: self.image_id,
            image_size: self.image_size,
            corners: lm.corners,
            contours: lm.contours,
            centers,
            source: self.source,
        })
    }

    fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        let corners = self.corners.iter().flat_map(|c| c.as_array());
        let contours = self
            .contours
            .iter()
            .flatten()
            .flat_map(|c| c.points.iter().copied());
        let centers = self.centers.iter().flat_map(|&(r, l)| [r, l]);
        corners.chain(contours).chain(centers)
    }

    /// Rejects non-finite or out-of-image coordinates.
    pub fn validate(&self, index: usize) -> Result<()> {
        for p in self.points() {
            if !p.is_finite() {
                return Err(Error::BadItem {
                    index,
                    reason: "non-finite coordinate".into(),
                });
            }
            let out = match self.image_size {
                Some((w, h)) => p.x < 0.0 || p.y < 0.0 || p.x > w as f64 || p.y > h as f64,
                None => p.x < 0.0 || p.y < 0.0,
            };
            if out {
                return Err(Error::BadItem {
                    index,
                    reason: format!("coordinate ({}, {}) outside the image", p.x, p.y),
                });
            }
        }
        Ok(())
    }
}

pub fn write_native(records: &[NativeRecord]) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {NATIVE_FORMAT_VERSION}").unwrap();
    for r in records {
        out.push_str("record\n");
        writeln!(out, "image {}", r.image_id).unwrap();
        if let Some((w, h)) = r.image_size {
            writeln!(out, "size {w} {h}").unwrap();
        }
        writeln!(out, "source {}", r.source.as_str()).unwrap();
        if let Some(c) = &r.corners {
            out.push_str("corners");
            for p in c.as_array() {
                write!(out, " {} {}", p.x, p.y).unwrap();
            }
            out.push('\n');
        }
        for (name, contour) in ["right", "left"].iter().zip(&r.contours) {
            if let Some(c) = contour {
                write!(out, "contour {name} {}", c.points.len()).unwrap();
                for p in &c.points {
                    write!(out, " {} {}", p.x, p.y).unwrap();
                }
                out.push('\n');
            }
        }
        if let Some((a, b)) = r.centers {
            writeln!(out, "centers {} {} {} {}", a.x, a.y, b.x, b.y).unwrap();
        }
        out.push_str("end\n");
    }
    out
}

pub fn write_annotations(annotations: &[EyeAnnotation]) -> String {
    let records: Vec<_> = annotations.iter().map(NativeRecord::from_annotation).collect();
    write_native(&records)
}

fn parse_floats(line_no: usize, tokens: &[&str], expected: usize) -> Result<Vec<f64>> {
    if tokens.len() != expected {
        return Err(Error::parse(
            line_no,
            format!("expected {expected} numbers, found {}", tokens.len()),
        ));
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("invalid number '{t}'")))
        })
        .collect()
}

fn pairs(v: &[f64]) -> Vec<Point2> {
    v.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

/// Parses the native format. Structural problems are `Parse` errors with a
/// line number; records that fail validation are `BadItem` errors with the
/// record index.
pub fn parse_native(text: &str) -> Result<Vec<NativeRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| Error::Truncated("empty annotation file".into()))?;
    let mut h = header.split_whitespace();
    if h.next() != Some(MAGIC) {
        return Err(Error::parse(line_no, "missing 'eyeann' header"));
    }
    let version: u32 = h
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(line_no, "missing format version"))?;
    if version != NATIVE_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: NATIVE_FORMAT_VERSION,
        });
    }

    let mut records = Vec::new();
    let mut current: Option<NativeRecord> = None;
    for (line_no, line) in lines {
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        if tag == "record" {
            if current.is_some() {
                return Err(Error::parse(line_no, "'record' before previous 'end'"));
            }
            current = Some(NativeRecord {
                image_id: String::new(),
                image_size: None,
                corners: None,
                contours: [None, None],
                centers: None,
                source: AnnotationSource::Manual,
            });
            continue;
        }
        let rec = current
            .as_mut()
            .ok_or_else(|| Error::parse(line_no, format!("'{tag}' outside a record")))?;
        match tag {
            "image" => rec.image_id = rest.trim().to_string(),
            "size" => {
                let v = parse_floats(line_no, &tokens, 2)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                    return Err(Error::parse(line_no, "invalid image size"));
                }
                rec.image_size = Some((v[0] as u32, v[1] as u32));
            }
            "source" => {
                rec.source = rest.trim().parse().map_err(|e| Error::parse(line_no, e))?;
            }
            "corners" => {
                let p = pairs(&parse_floats(line_no, &tokens, 8)?);
                rec.corners = Some(EyeCorners::from_array([p[0], p[1], p[2], p[3]]));
            }
            "contour" => {
                let which = match tokens.first() {
                    Some(&"right") => 0,
                    Some(&"left") => 1,
                    _ => return Err(Error::parse(line_no, "contour needs 'right' or 'left'")),
                };
                let n: usize = tokens
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(line_no, "contour needs a point count"))?;
                let v = parse_floats(line_no, &tokens[2..], 2 * n)?;
                let contour = EyeContour::new(pairs(&v))
                    .map_err(|e| Error::parse(line_no, e.to_string()))?;
                rec.contours[which] = Some(contour);
            }
            "centers" => {
                let p = pairs(&parse_floats(line_no, &tokens, 4)?);
                rec.centers = Some((p[0], p[1]));
            }
            "end" => {
                let rec = current.take().expect("checked above");
                if rec.image_id.is_empty() {
                    return Err(Error::parse(line_no, "record without 'image'"));
                }
                records.push(rec);
            }
            other => return Err(Error::parse(line_no, format!("unknown field '{other}'"))),
        }
    }
    if current.is_some() {
        return Err(Error::Truncated("last record has no 'end'".into()));
    }
    for (i, r) in records.iter().enumerate() {
        r.validate(i)?;
    }
    Ok(records)
}

pub fn parse_annotations(text: &str) -> Result<Vec<EyeAnnotation>> {
    parse_native(text)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_annotation(i))
        .collect()
}

pub fn read_native(path: impl AsRef<Path>) -> Result<Vec<NativeRecord>> {
    parse_native(&std::fs::read_to_string(path)?)
}
