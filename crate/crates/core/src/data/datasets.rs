//! Adapters for public eye-center datasets.
//!
//! Both adapters convert to the native convention at load time: the subject's
//! right eye (image left) comes first, coordinates are pixels with a top-left
//! origin.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::annotation::{parse_annotations, AnnotationSource, EyeAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{EyeCorners, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Native,
    Bioid,
    Gi4e,
}

impl FromStr for AnnotationFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" | "toolkit-native" => Ok(AnnotationFormat::Native),
            "bioid" | "bioid-like" => Ok(AnnotationFormat::Bioid),
            "gi4e" | "gi4e-like" => Ok(AnnotationFormat::Gi4e),
            other => Err(Error::InvalidInput(format!(
                "unknown annotation format '{other}'"
            ))),
        }
    }
}

/// Reads a BioID `.eye` sidecar: a header line followed by `LX LY RX RY`.
///
/// Returns `(left, right)` exactly as labelled in the file. BioID's "left"
/// eye is the one on the image's left, i.e. the subject's right eye; use
/// [`bioid_to_native`] for native ordering.
pub fn load_bioid_eyes(path: impl AsRef<Path>) -> Result<(Point2, Point2)> {
    parse_bioid_eyes(&std::fs::read_to_string(path)?)
}

pub fn parse_bioid_eyes(text: &str) -> Result<(Point2, Point2)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    lines
        .next()
        .ok_or_else(|| Error::Truncated("empty eye file".into()))?;
    let (idx, line) = lines
        .next()
        .ok_or_else(|| Error::parse(2, "eye file has a header but no coordinates"))?;
    let line_no = idx + 1;
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<i64>()
                .map(|v| v as f64)
                .map_err(|_| Error::parse(line_no, format!("invalid integer '{t}'")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 4 {
        return Err(Error::parse(
            line_no,
            format!("expected 4 integers, found {}", values.len()),
        ));
    }
    if values.iter().any(|v| *v < 0.0) {
        return Err(Error::BadItem {
            index: 0,
            reason: "negative eye coordinate".into(),
        });
    }
    Ok((
        Point2::new(values[0], values[1]),
        Point2::new(values[2], values[3]),
    ))
}

/// Orders a BioID `(left, right)` pair as native `(right, left)`: the eye
/// with the smaller x coordinate is the subject's right eye.
pub fn bioid_to_native(file_pair: (Point2, Point2)) -> (Point2, Point2) {
    let (a, b) = file_pair;
    if a.x <= b.x {
        (a, b)
    } else {
        (b, a)
    }
}

/// Reads a BioID `.pts` markup (20 points). Points 9..=12 are the four eye
/// corners from image left to image right.
pub fn parse_bioid_points(text: &str) -> Result<Vec<Point2>> {
    let mut pts = Vec::new();
    let mut in_block = false;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        match l {
            "{" => in_block = true,
            "}" => in_block = false,
            _ if in_block && !l.is_empty() => {
                let v: Vec<f64> = l
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(i + 1, "invalid point"))?;
                if v.len() != 2 {
                    return Err(Error::parse(i + 1, "expected an x y pair"));
                }
                pts.push(Point2::new(v[0], v[1]));
            }
            _ => {}
        }
    }
    if pts.len() < 13 {
        return Err(Error::Truncated(format!(
            "BioID markup has {} points, need at least 13",
            pts.len()
        )));
    }
    Ok(pts)
}

/// Loads every `*.eye` file in a BioID-style directory. Corners come from the
/// matching `*.pts` markup; a record without one is an error naming its index.
pub fn load_bioid_dir(dir: impl AsRef<Path>) -> Result<Vec<EyeAnnotation>> {
    let dir = dir.as_ref();
    let mut eye_files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "eye"))
        .collect();
    eye_files.sort();
    let mut out = Vec::with_capacity(eye_files.len());
    for (index, eye) in eye_files.iter().enumerate() {
        let centers = bioid_to_native(load_bioid_eyes(eye).map_err(|e| Error::BadItem {
            index,
            reason: format!("{}: {e}", eye.display()),
        })?);
        let pts_path = eye.with_extension("pts");
        let pts = std::fs::read_to_string(&pts_path)
            .map_err(|_| Error::BadItem {
                index,
                reason: format!("missing corners file {}", pts_path.display()),
            })
            .and_then(|t| parse_bioid_points(&t))?;
        let corners = EyeCorners::from_array([pts[9], pts[10], pts[11], pts[12]]);
        let stem = eye.file_stem().unwrap_or_default().to_string_lossy();
        out.push(EyeAnnotation {
            image_id: format!("{stem}.pgm"),
            image_size: Some((384, 286)),
            corners,
            contours: None,
            centers,
            source: AnnotationSource::Manual,
        });
    }
    Ok(out)
}

/// Parses GI4E-style lines: an image name followed by six `x y` pairs, in image
/// order: outer corner, iris center, inner corner of the image-left eye, then
/// inner corner, iris center, outer corner of the image-right eye.
pub fn parse_gi4e(text: &str) -> Result<Vec<EyeAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || tokens[0].starts_with('#') {
            continue;
        }
        if tokens.len() != 13 {
            return Err(Error::parse(
                line_no,
                format!("expected image name and 12 numbers, found {} tokens", tokens.len()),
            ));
        }
        let v: Vec<f64> = tokens[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("invalid number '{t}'")))
            })
            .collect::<Result<_>>()?;
        let p: Vec<Point2> = v.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect();
        if p.iter().any(|q| !q.is_finite() || q.x < 0.0 || q.y < 0.0) {
            return Err(Error::parse(line_no, "coordinate out of range"));
        }
        let ordered = p[0].x < p[2].x && p[2].x <= p[3].x && p[3].x < p[5].x;
        let irises_inside = p[0].x <= p[1].x && p[1].x <= p[2].x && p[3].x <= p[4].x && p[4].x <= p[5].x;
        if !ordered || !irises_inside {
            return Err(Error::parse(
                line_no,
                "points are not in the expected left-to-right order",
            ));
        }
        out.push(EyeAnnotation {
            image_id: tokens[0].to_string(),
            image_size: None,
            corners: EyeCorners::from_array([p[0], p[2], p[3], p[5]]),
            contours: None,
            centers: (p[1], p[4]),
            source: AnnotationSource::Manual,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>, format: AnnotationFormat) -> Result<Vec<EyeAnnotation>> {
    let path = path.as_ref();
    match format {
        AnnotationFormat::Native => parse_annotations(&std::fs::read_to_string(path)?),
        AnnotationFormat::Gi4e => parse_gi4e(&std::fs::read_to_string(path)?),
        AnnotationFormat::Bioid => load_bioid_dir(path),
    }
}
