//! Decoded frames and the single-channel luminance plane used downstream.

use std::io::Cursor;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pixels {
    Gray(Vec<u8>),
    Rgb(Vec<u8>),
}

/// An 8-bit frame as read from a PGM/PPM file or an external decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Pixels,
}

impl Frame {
    pub fn gray(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch { expected: (width * height) as usize, actual: data.len() });
        }
        Ok(Self { width, height, pixels: Pixels::Gray(data) })
    }

    pub fn rgb(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch { expected: 3 * (width * height) as usize, actual: data.len() });
        }
        Ok(Self { width, height, pixels: Pixels::Rgb(data) })
    }

    /// Raw sample bytes; the identity an encoder hashes over.
    pub fn bytes(&self) -> &[u8] {
        match &self.pixels {
            Pixels::Gray(d) | Pixels::Rgb(d) => d,
        }
    }

    /// Parse a binary PGM (P5) or PPM (P6) image with 8-bit samples.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Format { what: "PNM frame", reason };
        if bytes.len() < 2 || !(bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
            return Err(bad("expected binary P5 or P6 header".into()));
        }
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| bad(e.to_string()))?;
        let (w, h) = (img.width(), img.height());
        match img {
            image::DynamicImage::ImageLuma8(buf) => Frame::gray(w, h, buf.into_raw()),
            image::DynamicImage::ImageRgb8(buf) => Frame::rgb(w, h, buf.into_raw()),
            other => Err(bad(format!("unsupported sample layout {:?}", other.color()))),
        }
    }

    /// Encode as binary PGM or PPM, matching the input channel layout.
    pub fn to_pnm(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        let (subtype, color) = match self.pixels {
            Pixels::Gray(_) => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            Pixels::Rgb(_) => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        };
        PnmEncoder::new(&mut out)
            .with_subtype(subtype)
            .write_image(self.bytes(), self.width, self.height, color)
            .expect("in-memory PNM encoding");
        out.into_inner()
    }

    /// ITU-R BT.601 luma; grayscale frames are taken as-is.
    pub fn luma(&self) -> GrayPlane {
        let data = match &self.pixels {
            Pixels::Gray(d) => d.iter().map(|&v| f32::from(v)).collect(),
            Pixels::Rgb(d) => d
                .chunks_exact(3)
                .map(|p| 0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2]))
                .collect(),
        };
        GrayPlane { width: self.width as usize, height: self.height as usize, data }
    }
}

/// Row-major single-channel float image in gray levels (0..=255 scale).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane size");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear resize; a no-op copy when the size already matches.
    pub fn resize(&self, width: usize, height: usize) -> GrayPlane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: image::ImageBuffer<image::Luma<f32>, Vec<f32>> =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("plane buffer size");
        let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
        GrayPlane::new(width, height, out.into_raw())
    }

    /// Population variance of the 4-neighbour Laplacian over interior pixels.
    pub fn laplacian_variance(&self) -> f64 {
        if self.width < 3 || self.height < 3 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for y in 1..self.height - 1 {
            for x in 1..self.width - 1 {
                let v = f64::from(
                    self.at(x - 1, y) + self.at(x + 1, y) + self.at(x, y - 1) + self.at(x, y + 1) - 4.0 * self.at(x, y),
                );
                sum += v;
                sum_sq += v * v;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        (sum_sq / n as f64 - mean * mean).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let f = Frame::gray(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = f.to_pnm();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(Frame::from_pnm(&bytes).unwrap(), f);
    }

    #[test]
    fn parses_handwritten_p6() {
        let mut bytes = b"P6\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let f = Frame::from_pnm(&bytes).unwrap();
        assert_eq!((f.width, f.height), (2, 1));
        let l = f.luma();
        assert!((l.data[0] - 0.299 * 255.0).abs() < 1e-3);
        assert!((l.data[1] - 0.114 * 255.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_ascii_and_garbage() {
        assert!(Frame::from_pnm(b"P2\n1 1\n255\n7\n").is_err());
        assert!(Frame::from_pnm(b"").is_err());
        assert!(Frame::from_pnm(b"P5\n4 4\n255\n\x01").is_err());
    }

    #[test]
    fn laplacian_variance_zero_on_flat_and_ramp() {
        assert_eq!(GrayPlane::filled(8, 8, 90.0).laplacian_variance(), 0.0);
        let ramp = GrayPlane::new(8, 1, (0..8).map(|v| v as f32).collect());
        assert_eq!(ramp.laplacian_variance(), 0.0);
        let ramp2 = GrayPlane::new(4, 4, (0..16).map(|v| (v % 4) as f32 * 3.0).collect());
        assert!(ramp2.laplacian_variance().abs() < 1e-9);
    }
}
