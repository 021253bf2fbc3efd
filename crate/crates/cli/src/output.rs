//! Atomic file output and overlay rendering.

use std::io::Write;
use std::path::Path;

use eyecenter::{GrayImage, Point2};

use crate::CliError;

/// Writes `bytes` to a temporary file beside `path` and renames it into place,
/// so a failed run never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// A marker drawn on an overlay.
pub struct Mark {
    pub center: Point2,
    pub radius: Option<f64>,
}

const CROSS: image::Rgb<u8> = image::Rgb([255, 40, 40]);
const CIRCLE: image::Rgb<u8> = image::Rgb([40, 220, 40]);

fn put(img: &mut image::RgbImage, x: f64, y: f64, color: image::Rgb<u8>) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && x < img.width() as f64 && y < img.height() as f64 {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Draws a cross at each center and the fitted circle where there is one,
/// and encodes the result as PNG.
pub fn render_overlay(image: &GrayImage, marks: &[Mark]) -> Result<Vec<u8>, CliError> {
    let mut rgb = image::DynamicImage::ImageLuma8(image.to_image()).to_rgb8();
    for m in marks {
        if let Some(r) = m.radius {
            let steps = (2.0 * std::f64::consts::PI * r).ceil().max(16.0) as usize * 2;
            for k in 0..steps {
                let a = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
                put(&mut rgb, m.center.x + r * a.cos(), m.center.y + r * a.sin(), CIRCLE);
            }
        }
        for d in -3..=3 {
            let d = d as f64;
            put(&mut rgb, m.center.x + d, m.center.y, CROSS);
            put(&mut rgb, m.center.x, m.center.y + d, CROSS);
        }
    }
    let mut buf = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| CliError::Internal(format!("PNG encoding failed: {e}")))?;
    Ok(buf.into_inner())
}
