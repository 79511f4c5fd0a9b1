//! RGB image buffers with a fixed u8 storage and a unit-interval float view.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("zero-dimension image ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },
    #[error("buffer length {len} does not match {width}x{height}x3")]
    BadLength { width: u32, height: u32, len: usize },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if data.len() != width as usize * height as usize * 3 {
            return Err(ImageError::BadLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Builds from unit-interval floats, rounding half up and clamping.
    pub fn from_unit(width: u32, height: u32, values: &[f32]) -> Result<Self, ImageError> {
        let data = values.iter().map(|&v| unit_to_u8(v)).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Float view: every sample is exactly `u8 / 255`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// SHA-256 over dimensions and pixels, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.data);
        hex::encode(h.finalize())
    }

    pub fn open(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let rgb = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| ImageError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        std::fs::write(path, self.encode_png()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Bilinear resample with half-pixel centers. Same-size resize is the identity.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if (width, height) == self.dimensions() {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let xs: Vec<(usize, usize, f64)> = (0..width)
            .map(|x| source_taps(x, sx, self.width))
            .collect();
        let stride = self.width as usize * 3;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            let (y0, y1, fy) = source_taps(y, sy, self.height);
            let row0 = &self.data[y0 * stride..(y0 + 1) * stride];
            let row1 = &self.data[y1 * stride..(y1 + 1) * stride];
            for &(x0, x1, fx) in &xs {
                for c in 0..3 {
                    let p00 = row0[x0 * 3 + c] as f64;
                    let p01 = row0[x1 * 3 + c] as f64;
                    let p10 = row1[x0 * 3 + c] as f64;
                    let p11 = row1[x1 * 3 + c] as f64;
                    let top = p00 + (p01 - p00) * fx;
                    let bottom = p10 + (p11 - p10) * fx;
                    let v = top + (bottom - top) * fy;
                    data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Self::new(width, height, data)
    }

    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        assert!(x + width <= self.width && y + height <= self.height, "crop out of bounds");
        let stride = self.width as usize * 3;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for row in y..y + height {
            let start = row as usize * stride + x as usize * 3;
            data.extend_from_slice(&self.data[start..start + width as usize * 3]);
        }
        Self::new(width, height, data)
    }

    /// Aspect-preserving resize so the image covers `width x height`, then a
    /// crop at `offset` (fractions of the slack in each axis; 0.5 centers).
    pub fn fit_cover(&self, width: u32, height: u32, offset: (f64, f64)) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if (width, height) == self.dimensions() {
            return Ok(self.clone());
        }
        let scale = f64::max(
            width as f64 / self.width as f64,
            height as f64 / self.height as f64,
        );
        let rw = ((self.width as f64 * scale).round() as u32).max(width);
        let rh = ((self.height as f64 * scale).round() as u32).max(height);
        let resized = self.resize_bilinear(rw, rh)?;
        let ox = ((rw - width) as f64 * offset.0.clamp(0.0, 1.0)).floor() as u32;
        let oy = ((rh - height) as f64 * offset.1.clamp(0.0, 1.0)).floor() as u32;
        resized.crop(ox, oy, width, height)
    }
}

/// Round-half-up conversion from the unit interval.
pub fn unit_to_u8(v: f32) -> u8 {
    ((v as f64 * 255.0) + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn source_taps(dst: u32, scale: f64, len: u32) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len as usize - 1);
    let i1 = (i0 + 1).min(len as usize - 1);
    (i0, i1, src - i0 as f64)
}
