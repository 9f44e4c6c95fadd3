//! Single-channel float image container and the PSNR metric.
//!
//! Images are row-major `f64` rasters with a declared dynamic range
//! `[0, peak]`. Intermediate results are never clamped; clamping and
//! quantization happen only when writing files.

use crate::error::{Error, Result};

/// Default dynamic-range maximum for 8-bit imagery.
pub const DEFAULT_PEAK: f64 = 255.0;

/// 2D single-channel image with row-major `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    peak: f64,
    data: Vec<f64>,
}

impl Image {
    /// All-zero image.
    pub fn zeros(width: usize, height: usize, peak: f64) -> Self {
        Self::constant(width, height, peak, 0.0)
    }

    /// Constant-valued image.
    pub fn constant(width: usize, height: usize, peak: f64, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(peak > 0.0, "peak must be positive");
        assert!(value.is_finite());
        Image {
            width,
            height,
            peak,
            data: vec![value; width * height],
        }
    }

    /// Builds an image from existing row-major data, validating invariants.
    pub fn from_vec(width: usize, height: usize, peak: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::RejectedInput("image dimensions must be positive".into()));
        }
        if !(peak > 0.0) {
            return Err(Error::RejectedInput(format!("peak must be positive, got {peak}")));
        }
        if data.len() != width * height {
            return Err(Error::dims(
                "image data length",
                width * height,
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("image data contains non-finite values".into()));
        }
        Ok(Image {
            width,
            height,
            peak,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, peak: f64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image::from_vec(width, height, peak, data).expect("from_fn produced invalid image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// True when `other` has identical width, height and peak.
    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.peak == other.peak
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{} peak {}", self.width, self.height, self.peak)
    }

    /// New image with the same shape, applying `f` to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            peak: self.peak,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::dims(
                "zip_map",
                self.shape_string(),
                other.shape_string(),
            ));
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            peak: self.peak,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Image, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Euclidean inner product of the two rasters.
    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    /// Euclidean norm of the raster.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Mean squared error against a same-shape image.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims("mse", self.shape_string(), other.shape_string()));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Copy with every sample clamped to `[0, peak]`.
    pub fn clamped(&self) -> Image {
        let peak = self.peak;
        self.map(|v| v.clamp(0.0, peak))
    }

    /// Drops a border of `crop` pixels on every side.
    pub fn cropped(&self, crop: usize) -> Result<Image> {
        if 2 * crop >= self.width || 2 * crop >= self.height {
            return Err(Error::RejectedInput(format!(
                "crop {} too large for {}x{} image",
                crop, self.width, self.height
            )));
        }
        let w = self.width - 2 * crop;
        let h = self.height - 2 * crop;
        Ok(Image::from_fn(w, h, self.peak, |x, y| {
            self.get(x + crop, y + crop)
        }))
    }

    /// Extracts a `w`x`h` window with top-left corner at `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::RejectedInput(format!(
                "window {}x{}+{}+{} exceeds {}x{} image",
                w, h, x0, y0, self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, self.peak, |x, y| {
            self.get(x0 + x, y0 + y)
        }))
    }
}

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`.
///
/// Identical images yield `f64::INFINITY`. The optional boundary crop used by
/// parts of the literature is applied by the caller (see `Image::cropped`).
pub fn psnr(test: &Image, reference: &Image) -> Result<f64> {
    if !test.same_shape(reference) {
        return Err(Error::dims(
            "psnr",
            reference.shape_string(),
            test.shape_string(),
        ));
    }
    let mse = test.mse(reference)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (reference.peak * reference.peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates() {
        assert!(Image::from_vec(2, 2, 255.0, vec![0.0; 3]).is_err());
        assert!(Image::from_vec(2, 2, 255.0, vec![f64::NAN; 4]).is_err());
        assert!(Image::from_vec(2, 2, 0.0, vec![0.0; 4]).is_err());
        assert!(Image::from_vec(2, 2, 255.0, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Image::constant(4, 4, 255.0, 17.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_full_scale_error_is_zero_db() {
        let reference = Image::zeros(5, 3, 255.0);
        let test = Image::constant(5, 3, 255.0, 255.0);
        let v = psnr(&test, &reference).unwrap();
        assert!(v.abs() < 1e-12, "expected 0 dB, got {v}");
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        let reference = Image::from_fn(8, 8, 255.0, |x, y| (x * 3 + y) as f64);
        let d = 7.5;
        let test = reference.map(|v| v + d);
        let expected = 10.0 * (255.0 * 255.0 / (d * d)).log10();
        let got = psnr(&test, &reference).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = Image::zeros(4, 4, 255.0);
        let b = Image::zeros(4, 5, 255.0);
        assert!(psnr(&a, &b).is_err());
        let c = Image::zeros(4, 4, 65535.0);
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn psnr_symmetric() {
        let a = Image::from_fn(6, 6, 255.0, |x, y| (x * y) as f64);
        let b = Image::from_fn(6, 6, 255.0, |x, y| (x + y) as f64 * 3.0);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
