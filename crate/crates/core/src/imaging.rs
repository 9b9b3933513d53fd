//! Raster images with validity masks, homography warping, and file I/O.
//!
//! Warping tracks which destination pixels are backed by defined source
//! data: a pixel is valid only when every source pixel its bilinear sample
//! actually touches (nonzero weight) is in bounds and itself valid. Invalid
//! pixels store the value 0 and, for PNG output, alpha 0.

use crate::geometry::{GeometryError, Homography};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageEncoder};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image format error: {0}")]
    Format(#[from] image::ImageError),
    #[error("unsupported pixel layout: {reason}")]
    Unsupported { reason: String },
    #[error("homography is not invertible")]
    NonInvertible(#[source] GeometryError),
    #[error("pixel buffer has wrong length: expected {expected}, got {actual}")]
    BufferSize { expected: usize, actual: usize },
}

/// Row-major 8-bit raster, 1 or 3 channels, with a per-pixel validity bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
    mask: Vec<bool>,
}

impl Image {
    /// All-valid image from raw data.
    pub fn from_pixels(
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Unsupported {
                reason: format!("{channels} channels"),
            });
        }
        let expected = (width as usize) * (height as usize) * channels as usize;
        if pixels.len() != expected {
            return Err(ImagingError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        let mask = vec![true; (width as usize) * (height as usize)];
        Ok(Image {
            width,
            height,
            channels,
            pixels,
            mask,
        })
    }

    pub fn new_gray(width: u32, height: u32) -> Self {
        Image {
            width,
            height,
            channels: 1,
            pixels: vec![0; (width as usize) * (height as usize)],
            mask: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize
            + c as usize;
        self.pixels[idx]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize
            + c as usize;
        self.pixels[idx] = v;
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn set_valid(&mut self, x: u32, y: u32, valid: bool) {
        self.mask[y as usize * self.width as usize + x as usize] = valid;
    }

    pub fn all_valid(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// Grayscale view: single-channel images come back as a clone, RGB is
    /// reduced by the usual luminance weights.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new_gray(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let r = self.get(x, y, 0) as f64;
                let g = self.get(x, y, 1) as f64;
                let b = self.get(x, y, 2) as f64;
                let lum = (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0);
                out.set(x, y, 0, lum as u8);
            }
        }
        out.mask.copy_from_slice(&self.mask);
        out
    }
}

/// Inverse-mapped bilinear warp onto a canvas of the same size. Destination
/// pixels whose source sample leaves the image or touches an invalid source
/// pixel become invalid with value 0.
pub fn warp(src: &Image, h: &Homography) -> Result<Image, ImagingError> {
    let h_inv = h.inverse().map_err(ImagingError::NonInvertible)?;
    let m = *h_inv.matrix();
    let channels = src.channels as usize;
    let mut out = Image {
        width: src.width,
        height: src.height,
        channels: src.channels,
        pixels: vec![0; src.pixels.len()],
        mask: vec![false; src.mask.len()],
    };
    let w = src.width as i64;
    let hh = src.height as i64;
    let mut acc = vec![0.0f64; channels];

    for y in 0..src.height {
        for x in 0..src.width {
            let px = x as f64;
            let py = y as f64;
            let den = m[(2, 0)] * px + m[(2, 1)] * py + m[(2, 2)];
            if den.abs() < 1e-12 {
                continue;
            }
            let sx = (m[(0, 0)] * px + m[(0, 1)] * py + m[(0, 2)]) / den;
            let sy = (m[(1, 0)] * px + m[(1, 1)] * py + m[(1, 2)]) / den;
            if !(sx.is_finite() && sy.is_finite()) {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let x0 = x0 as i64;
            let y0 = y0 as i64;

            let weights = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut ok = true;
            for &(ix, iy, wt) in &weights {
                if wt <= 0.0 {
                    continue;
                }
                if ix < 0 || iy < 0 || ix >= w || iy >= hh || !src.is_valid(ix as u32, iy as u32)
                {
                    ok = false;
                    break;
                }
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wt * src.get(ix as u32, iy as u32, c as u8) as f64;
                }
            }
            if !ok {
                continue;
            }
            let base = (y as usize * src.width as usize + x as usize) * channels;
            for (c, a) in acc.iter().enumerate() {
                out.pixels[base + c] = a.round().clamp(0.0, 255.0) as u8;
            }
            out.mask[y as usize * src.width as usize + x as usize] = true;
        }
    }
    Ok(out)
}

/// Writes PNG (`.png`, mask as alpha when any pixel is invalid) or binary
/// PGM/PPM (`.pgm`/`.ppm`, pixel data only).
pub fn save_image(img: &Image, path: &Path) -> Result<(), ImagingError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "pgm" | "ppm" => save_pnm(img, path, &ext),
        other => Err(ImagingError::Unsupported {
            reason: format!("extension {other:?}"),
        }),
    }
}

fn save_png(img: &Image, path: &Path) -> Result<(), ImagingError> {
    let n = (img.width as usize) * (img.height as usize);
    let dynimg = if img.all_valid() {
        match img.channels {
            1 => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(img.width, img.height, img.pixels.clone()).unwrap(),
            ),
            _ => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(img.width, img.height, img.pixels.clone()).unwrap(),
            ),
        }
    } else {
        // Interleave the validity mask as an alpha channel.
        match img.channels {
            1 => {
                let mut data = Vec::with_capacity(n * 2);
                for i in 0..n {
                    data.push(img.pixels[i]);
                    data.push(if img.mask[i] { 255 } else { 0 });
                }
                DynamicImage::ImageLumaA8(
                    image::GrayAlphaImage::from_raw(img.width, img.height, data).unwrap(),
                )
            }
            _ => {
                let mut data = Vec::with_capacity(n * 4);
                for i in 0..n {
                    data.extend_from_slice(&img.pixels[i * 3..i * 3 + 3]);
                    data.push(if img.mask[i] { 255 } else { 0 });
                }
                DynamicImage::ImageRgba8(
                    image::RgbaImage::from_raw(img.width, img.height, data).unwrap(),
                )
            }
        }
    };
    dynimg.save(path)?;
    Ok(())
}

fn save_pnm(img: &Image, path: &Path, ext: &str) -> Result<(), ImagingError> {
    let (subtype, color) = match (img.channels, ext) {
        (1, "pgm") => (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            image::ExtendedColorType::L8,
        ),
        (3, "ppm") => (
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            image::ExtendedColorType::Rgb8,
        ),
        _ => {
            return Err(ImagingError::Unsupported {
                reason: format!("{} channels for .{ext}", img.channels),
            })
        }
    };
    let file = BufWriter::new(File::create(path)?);
    let encoder = PnmEncoder::new(file).with_subtype(subtype);
    encoder.write_image(&img.pixels, img.width, img.height, color)?;
    Ok(())
}

/// Reads PNG or PNM. Alpha, when present, becomes the validity mask
/// (alpha 0 = invalid); images without alpha load all-valid.
pub fn load_image(path: &Path) -> Result<Image, ImagingError> {
    let dynimg = image::open(path)?;
    let width = dynimg.width();
    let height = dynimg.height();
    let n = (width as usize) * (height as usize);
    match dynimg {
        DynamicImage::ImageLuma8(buf) => Image::from_pixels(width, height, 1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => Image::from_pixels(width, height, 3, buf.into_raw()),
        DynamicImage::ImageLumaA8(buf) => {
            let raw = buf.into_raw();
            let mut pixels = Vec::with_capacity(n);
            let mut mask = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(2) {
                pixels.push(chunk[0]);
                mask.push(chunk[1] != 0);
            }
            Ok(Image {
                width,
                height,
                channels: 1,
                pixels,
                mask,
            })
        }
        DynamicImage::ImageRgba8(buf) => {
            let raw = buf.into_raw();
            let mut pixels = Vec::with_capacity(n * 3);
            let mut mask = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(4) {
                pixels.extend_from_slice(&chunk[..3]);
                mask.push(chunk[3] != 0);
            }
            Ok(Image {
                width,
                height,
                channels: 3,
                pixels,
                mask,
            })
        }
        other => Err(ImagingError::Unsupported {
            reason: format!("{:?}", other.color()),
        }),
    }
}

/// Mean absolute pixel difference over positions valid in both images.
/// `None` when no position is valid in both.
pub fn mean_absolute_error(a: &Image, b: &Image) -> Option<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return None;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let ch = a.channels as usize;
    for i in 0..a.mask.len() {
        if a.mask[i] && b.mask[i] {
            for c in 0..ch {
                sum += (a.pixels[i * ch + c] as f64 - b.pixels[i * ch + c] as f64).abs();
            }
            count += ch;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}
