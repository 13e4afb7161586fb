//! Raster encoding: every image, mask and control sketch is stored as PNG.
//!
//! Encoder settings are fixed so identical pixels always produce identical
//! bytes, and therefore identical digests.

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::digest::Digest;
use crate::params::Canvas;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("image could not be decoded: {0}")]
    Decode(String),
    #[error("image could not be encoded: {0}")]
    Encode(String),
    #[error("expected {expected} but raster is {actual}")]
    DimensionMismatch { expected: Canvas, actual: Canvas },
    #[error("pixel buffer holds {actual} bytes, {expected} expected")]
    BufferLength { expected: usize, actual: usize },
}

/// Decoded 8-bit RGBA pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgba {
    pub canvas: Canvas,
    pub pixels: Vec<u8>,
}

impl Rgba {
    pub fn new(canvas: Canvas, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = canvas.pixels() * 4;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Rgba { canvas, pixels })
    }

    pub fn pixel(&self, index: usize) -> &[u8] {
        &self.pixels[index * 4..index * 4 + 4]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        encode_png(self.canvas, &self.pixels, ExtendedColorType::Rgba8)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| RasterError::Decode(e.to_string()))?
            .to_rgba8();
        let canvas = Canvas {
            width: img.width(),
            height: img.height(),
        };
        Ok(Rgba {
            canvas,
            pixels: img.into_raw(),
        })
    }

    /// Nearest-neighbour rescale.
    pub fn resize_nearest(&self, target: Canvas) -> Rgba {
        if target == self.canvas {
            return self.clone();
        }
        let (sw, sh) = (self.canvas.width as u64, self.canvas.height as u64);
        let (tw, th) = (target.width as u64, target.height as u64);
        let mut pixels = Vec::with_capacity(target.pixels() * 4);
        for y in 0..th {
            let sy = (y * sh / th).min(sh - 1);
            for x in 0..tw {
                let sx = (x * sw / tw).min(sw - 1);
                let i = ((sy * sw + sx) * 4) as usize;
                pixels.extend_from_slice(&self.pixels[i..i + 4]);
            }
        }
        Rgba {
            canvas: target,
            pixels,
        }
    }

    /// Number of pixels whose four channels are not all equal.
    pub fn count_differing(&self, other: &Rgba) -> Result<u64, RasterError> {
        if self.canvas != other.canvas {
            return Err(RasterError::DimensionMismatch {
                expected: self.canvas,
                actual: other.canvas,
            });
        }
        Ok(self
            .pixels
            .chunks_exact(4)
            .zip(other.pixels.chunks_exact(4))
            .filter(|(a, b)| a != b)
            .count() as u64)
    }
}

fn encode_png(canvas: Canvas, raw: &[u8], color: ExtendedColorType) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(
        Cursor::new(&mut out),
        CompressionType::Default,
        FilterType::Adaptive,
    )
    .write_image(raw, canvas.width, canvas.height, color)
    .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out)
}

/// An encoded image together with its content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBlob {
    pub digest: Digest,
    pub bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl ImageBlob {
    pub fn from_rgba(raster: &Rgba) -> Result<Self, RasterError> {
        let bytes = raster.encode_png()?;
        Ok(ImageBlob {
            digest: Digest::of(&bytes),
            bytes,
            width: raster.canvas.width,
            height: raster.canvas.height,
        })
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            width: self.width,
            height: self.height,
        }
    }

    pub fn decode(&self) -> Result<Rgba, RasterError> {
        Rgba::decode_png(&self.bytes)
    }
}

/// One bit per pixel, row-major; a set bit marks a pixel to regenerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRegion {
    canvas: Canvas,
    bits: Vec<u64>,
}

impl MaskRegion {
    pub fn empty(canvas: Canvas) -> Self {
        MaskRegion {
            canvas,
            bits: vec![0; canvas.pixels().div_ceil(64)],
        }
    }

    pub fn full(canvas: Canvas) -> Self {
        let mut mask = Self::empty(canvas);
        for i in 0..canvas.pixels() {
            mask.set_index(i, true);
        }
        mask
    }

    pub fn from_fn(canvas: Canvas, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::empty(canvas);
        for y in 0..canvas.height {
            for x in 0..canvas.width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    /// Axis-aligned rectangle of set bits, clipped to the canvas.
    pub fn rect(canvas: Canvas, x0: u32, y0: u32, w: u32, h: u32) -> Self {
        Self::from_fn(canvas, |x, y| {
            x >= x0 && x < x0.saturating_add(w) && y >= y0 && y < y0.saturating_add(h)
        })
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn width(&self) -> u32 {
        self.canvas.width
    }

    pub fn height(&self) -> u32 {
        self.canvas.height
    }

    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_index(&mut self, i: usize, on: bool) {
        let word = &mut self.bits[i / 64];
        if on {
            *word |= 1 << (i % 64);
        } else {
            *word &= !(1 << (i % 64));
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.get_index(y as usize * self.canvas.width as usize + x as usize)
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = y as usize * self.canvas.width as usize + x as usize;
        self.set_index(i, on);
    }

    pub fn count_set(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count_set() == 0
    }

    /// 8-bit grayscale PNG: set bits are 255, clear bits 0.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let gray: Vec<u8> = (0..self.canvas.pixels())
            .map(|i| if self.get_index(i) { 255 } else { 0 })
            .collect();
        encode_png(self.canvas, &gray, ExtendedColorType::L8)
    }

    /// Decodes any raster image; luma >= 128 becomes a set bit.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| RasterError::Decode(e.to_string()))?
            .to_luma8();
        let canvas = Canvas {
            width: img.width(),
            height: img.height(),
        };
        let mut mask = Self::empty(canvas);
        for (i, luma) in img.as_raw().iter().enumerate() {
            if *luma >= 128 {
                mask.set_index(i, true);
            }
        }
        Ok(mask)
    }
}
