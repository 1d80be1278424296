//! Grayscale images, loading, and region-of-interest masking.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer holds {} values, expected {}",
                pixels.len(),
                width as usize * height as usize
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Image of the given size with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = value;
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize;
        &self.pixels[y as usize * w..(y as usize + 1) * w]
    }

    /// Mean intensity over the pixels whose centres fall inside `region`.
    pub fn mean_in(&self, region: &BoundingBox) -> Option<f64> {
        let r = region.clamp_to(self.width as f64, self.height as f64);
        let (c0, c1) = pixel_span(r.x0, r.x1);
        let (r0, r1) = pixel_span(r.y0, r.y1);
        if c0 >= c1 || r0 >= r1 {
            return None;
        }
        let mut sum = 0u64;
        for y in r0..r1 {
            sum += self.row(y)[c0 as usize..c1 as usize]
                .iter()
                .map(|&v| v as u64)
                .sum::<u64>();
        }
        Some(sum as f64 / ((c1 - c0) as f64 * (r1 - r0) as f64))
    }

    pub(crate) fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer size checked at construction")
    }

    pub(crate) fn from_image(img: image::GrayImage) -> Self {
        let (width, height) = img.dimensions();
        GrayImage {
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    /// Write the image as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_error(path, e))
    }
}

/// Pixel index range `[start, end)` whose centres lie in `[lo, hi)`.
pub(crate) fn pixel_span(lo: f64, hi: f64) -> (u32, u32) {
    let start = (lo - 0.5).ceil().max(0.0) as u32;
    let end = (hi - 0.5).ceil().max(0.0) as u32;
    (start, end)
}

pub(crate) fn image_error(path: &Path, err: image::ImageError) -> Error {
    match err {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// BT.709 luma with round-half-up, computed in integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let sum = 2126 * r as u32 + 7152 * g as u32 + 722 * b as u32;
    ((sum + 5000) / 10000) as u8
}

/// Load a PNG or JPEG file as grayscale.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| image_error(path, e))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("{format:?} is not supported, expected PNG or JPEG"),
        });
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| image_error(path, e))?;
    let gray = match decoded {
        image::DynamicImage::ImageLuma8(g) => GrayImage::from_image(g),
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let pixels = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
            GrayImage::new(w, h, pixels)?
        }
    };
    if gray.width == 0 || gray.height == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "image has no pixels".into(),
        });
    }
    Ok(gray)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Keep only pixels inside the regions.
    #[default]
    Include,
    /// Blank out pixels inside the regions.
    Exclude,
}

/// Set of rectangles selecting the part of the shelf image still under search.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoiMask {
    pub regions: Vec<BoundingBox>,
    pub polarity: Polarity,
}

impl RoiMask {
    /// Mask selecting the whole image.
    pub fn full() -> Self {
        RoiMask::default()
    }

    pub fn excluding(regions: Vec<BoundingBox>) -> Self {
        RoiMask {
            regions,
            polarity: Polarity::Exclude,
        }
    }

    pub fn including(regions: Vec<BoundingBox>) -> Self {
        RoiMask {
            regions,
            polarity: Polarity::Include,
        }
    }

    pub fn is_full(&self) -> bool {
        self.regions.is_empty()
    }

    /// Whether the point lies in the searchable area.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if self.regions.is_empty() {
            return true;
        }
        let hit = self.regions.iter().any(|r| r.contains(x, y));
        match self.polarity {
            Polarity::Include => hit,
            Polarity::Exclude => !hit,
        }
    }
}

/// Zero every pixel outside the searchable area of `mask`. Dimensions never change.
pub fn apply_roi(img: &GrayImage, mask: &RoiMask) -> GrayImage {
    let mut out = img.clone();
    if mask.is_full() {
        return out;
    }
    for y in 0..img.height {
        for x in 0..img.width {
            if !mask.contains(x as f64 + 0.5, y as f64 + 0.5) {
                out.set(x, y, 0);
            }
        }
    }
    out
}
