//! Interleaved multi-channel images and patch extraction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{clip_box, BoundingBox, FrameSize};

/// Row-major, channel-interleaved image with intensities in `[0, 255]`.
///
/// Values are stored as `f32` so resampled patches keep their fractional
/// intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

/// A resampled crop whose size matches the feature extractor's input.
pub type Patch = FrameImage;

impl FrameImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("intensity {v} outside [0, 255]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Self> {
        Self::new(width, height, channels, data.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> FrameSize {
        FrameSize::new(self.width, self.height)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    /// Writes a value, clamped into `[0, 255]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        let idx = (row * self.width + col) * self.channels + channel;
        self.pixels[idx] = value.clamp(0.0, 255.0);
    }

    /// Quantized 8-bit copy of the pixel buffer (round to nearest).
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| libm::roundf(v).clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Crops `b` (clipped to the frame) and resamples it to `target` with
/// bilinear interpolation, half-pixel-center convention, each channel
/// independently. Aspect ratio is not preserved.
pub fn crop_and_resize(img: &FrameImage, b: &BoundingBox, target: FrameSize) -> Result<Patch> {
    if target.width == 0 || target.height == 0 {
        return Err(Error::ShapeMismatch(format!(
            "target size must be positive, got {}x{}",
            target.width, target.height
        )));
    }
    let region = clip_box(b, img.size())?;
    let sx = region.w / target.width as f64;
    let sy = region.h / target.height as f64;
    let max_col = (img.width - 1) as f64;
    let max_row = (img.height - 1) as f64;
    let ch = img.channels;

    // Per-column sample positions are shared by every row.
    let cols: Vec<(usize, usize, f32)> = (0..target.width)
        .map(|j| {
            let x = (region.x + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, max_col);
            let x0 = libm::floor(x) as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            (x0, x1, (x - x0 as f64) as f32)
        })
        .collect();

    let mut out = Vec::with_capacity(target.width * target.height * ch);
    for i in 0..target.height {
        let y = (region.y + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, max_row);
        let y0 = libm::floor(y) as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = (y - y0 as f64) as f32;
        let top = &img.pixels[y0 * img.width * ch..(y0 + 1) * img.width * ch];
        let bot = &img.pixels[y1 * img.width * ch..(y1 + 1) * img.width * ch];
        for &(x0, x1, fx) in &cols {
            for c in 0..ch {
                let t = top[x0 * ch + c] * (1.0 - fx) + top[x1 * ch + c] * fx;
                let b = bot[x0 * ch + c] * (1.0 - fx) + bot[x1 * ch + c] * fx;
                out.push((t * (1.0 - fy) + b * fy).clamp(0.0, 255.0));
            }
        }
    }
    Ok(FrameImage {
        width: target.width,
        height: target.height,
        channels: ch,
        pixels: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        assert!(FrameImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FrameImage::new(0, 2, 1, vec![]).is_err());
        assert!(FrameImage::new(1, 1, 1, vec![256.0]).is_err());
        assert!(FrameImage::new(1, 1, 1, vec![255.0]).is_ok());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = FrameImage::filled(40, 30, 3, 77.0).unwrap();
        let p = crop_and_resize(&img, &BoundingBox::new(3.3, 4.7, 20.1, 11.9), FrameSize::new(9, 17)).unwrap();
        assert_eq!(p.size(), FrameSize::new(9, 17));
        assert!(p.pixels().iter().all(|&v| (v - 77.0).abs() < 1e-4));
    }

    #[test]
    fn full_frame_identity() {
        let data: Vec<u8> = (0..(7 * 5 * 3)).map(|i| (i * 7 % 256) as u8).collect();
        let img = FrameImage::from_u8(7, 5, 3, &data).unwrap();
        let p = crop_and_resize(&img, &img.size().as_box(), img.size()).unwrap();
        assert_eq!(p, img);
    }

    #[test]
    fn box_outside_frame_is_rejected() {
        let img = FrameImage::filled(10, 10, 1, 0.0).unwrap();
        let r = crop_and_resize(&img, &BoundingBox::new(11.0, 0.0, 5.0, 5.0), FrameSize::new(2, 2));
        assert_eq!(r, Err(Error::EmptyBox));
    }

    #[test]
    fn checkerboard_upsample_matches_formula() {
        // 2x2 checkerboard: 0 255 / 255 0
        let img = FrameImage::new(2, 2, 1, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let p = crop_and_resize(&img, &img.size().as_box(), FrameSize::new(4, 4)).unwrap();
        // Hand-coded interpolation: source coordinate s = (o + 0.5) / 2 - 0.5,
        // clamped to [0, 1]; value = bilinear blend of the four corners.
        let coord = |o: usize| -> f64 { ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0) };
        let corners = [[0.0, 255.0], [255.0, 0.0]];
        for r in 0..4 {
            for c in 0..4 {
                let (u, v) = (coord(r), coord(c));
                let expected = corners[0][0] * (1.0 - u) * (1.0 - v)
                    + corners[0][1] * (1.0 - u) * v
                    + corners[1][0] * u * (1.0 - v)
                    + corners[1][1] * u * v;
                assert!(
                    (p.get(r, c, 0) as f64 - expected).abs() < 1e-3,
                    "({r},{c}): {} vs {expected}",
                    p.get(r, c, 0)
                );
            }
        }
        // corners of the output replicate the source corners
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(0, 3, 0), 255.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn resampling_preserves_range(
                data in proptest::collection::vec(0u8..=255, 12 * 9 * 3),
                x in -4.0..10.0f64, y in -4.0..7.0f64,
                w in 1.0..12.0f64, h in 1.0..9.0f64,
                tw in 1usize..20, th in 1usize..20,
            ) {
                let img = FrameImage::from_u8(12, 9, 3, &data).unwrap();
                let lo = *data.iter().min().unwrap() as f32;
                let hi = *data.iter().max().unwrap() as f32;
                if let Ok(p) = crop_and_resize(&img, &BoundingBox::new(x, y, w, h), FrameSize::new(tw, th)) {
                    prop_assert!(p.pixels().iter().all(|&v| v >= lo - 1e-3 && v <= hi + 1e-3));
                }
            }
        }
    }
}
