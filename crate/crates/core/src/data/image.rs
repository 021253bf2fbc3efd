use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has zero size".into()));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let w = self.width as usize;
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_mut(w) {
            row.reverse();
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions match by construction")
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self> {
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        GrayImage::new(w, h, luma.into_raw())
    }

    /// Encodes as PNG into a byte buffer.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::InvalidInput(format!("PNG encoding failed: {e}")))?;
        Ok(buf.into_inner())
    }
}

/// Decodes a raster image file and converts it to 8-bit grayscale using the
/// Rec. 709 luma weights.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_image(&bytes).map_err(|message| Error::Decode {
        path: path.to_path_buf(),
        message,
    })
}

pub fn decode_image(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    GrayImage::from_dynamic(&img).map_err(|e| e.to_string())
}
