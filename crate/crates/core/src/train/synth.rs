//! Degradation synthesis and procedural test imagery.
//!
//! Everything here is driven by an explicit seed; rerunning with the same
//! seed reproduces byte-identical outputs.

use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataprox::{Mask, TaskSpec};
use crate::error::{Error, Result};
use crate::filter::{convolve, BoundaryMode, Filter};
use crate::image::Image;
use crate::train::TrainingSample;

/// Piecewise-smooth synthetic image: smooth gradients, hard edges and soft
/// blobs, spanning most of the 8-bit range.
pub fn synthetic_clean_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (width as f64, height as f64);
    let mut data = vec![0.0f64; width * height];

    // low-frequency waves
    for _ in 0..3 {
        let amp: f64 = rng.random_range(10.0..40.0);
        let fx: f64 = rng.random_range(-1.5..1.5) / wf;
        let fy: f64 = rng.random_range(-1.5..1.5) / hf;
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                data[y * width + x] += amp
                    * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
            }
        }
    }
    // hard half-plane edges
    for _ in 0..6 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (nx, ny) = (angle.cos(), angle.sin());
        let c: f64 = rng.random_range(0.2..0.8) * (nx.abs() * wf + ny.abs() * hf);
        let amp: f64 = rng.random_range(-60.0..60.0);
        for y in 0..height {
            for x in 0..width {
                if nx * x as f64 + ny * y as f64 > c {
                    data[y * width + x] += amp;
                }
            }
        }
    }
    // soft blobs
    for _ in 0..4 {
        let cx: f64 = rng.random_range(0.0..wf);
        let cy: f64 = rng.random_range(0.0..hf);
        let s: f64 = rng.random_range(0.05..0.25) * wf.min(hf);
        let amp: f64 = rng.random_range(-50.0..50.0);
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                data[y * width + x] += amp * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }

    // affine-normalize into [8, 247]
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-9);
    for v in &mut data {
        *v = 8.0 + (*v - lo) / span * 239.0;
    }
    Image::from_vec(width, height, 255.0, data).expect("synthetic image is valid")
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, rng: &mut impl Rng) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Rounds every sample to an integer level and clamps to `[0, peak]`,
/// modeling the 8-bit (or 16-bit) file round trip degraded inputs go through.
pub fn quantize(img: &Image) -> Image {
    let peak = img.peak();
    img.map(|v| v.clamp(0.0, peak).round())
}

/// Random motion-blur-like PSF: a smoothed random walk, normalized to unit
/// mass.
pub fn random_psf(size: usize, rng: &mut impl Rng) -> Result<Filter> {
    if size % 2 == 0 || size < 3 {
        return Err(Error::RejectedInput(format!("psf size must be odd and >= 3, got {size}")));
    }
    let mut grid = vec![0.0f64; size * size];
    let center = (size / 2) as f64;
    let (mut px, mut py) = (center, center);
    let steps = size * 3;
    let step_scale = size as f64 / 6.0;
    for _ in 0..steps {
        // bilinear deposit
        let x0 = px.floor().clamp(0.0, (size - 2) as f64) as usize;
        let y0 = py.floor().clamp(0.0, (size - 2) as f64) as usize;
        let fx = (px - x0 as f64).clamp(0.0, 1.0);
        let fy = (py - y0 as f64).clamp(0.0, 1.0);
        grid[y0 * size + x0] += (1.0 - fx) * (1.0 - fy);
        grid[y0 * size + x0 + 1] += fx * (1.0 - fy);
        grid[(y0 + 1) * size + x0] += (1.0 - fx) * fy;
        grid[(y0 + 1) * size + x0 + 1] += fx * fy;
        px = (px + step_scale * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, (size - 1) as f64);
        py = (py + step_scale * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, (size - 1) as f64);
    }
    // light 3x3 smoothing keeps the kernel from being a bare trajectory
    let mut smoothed = vec![0.0f64; size * size];
    for y in 0..size as isize {
        for x in 0..size as isize {
            let mut acc = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0 && sy >= 0 && sx < size as isize && sy < size as isize {
                        let w = if dx == 0 && dy == 0 { 4.0 } else if dx == 0 || dy == 0 { 2.0 } else { 1.0 };
                        acc += w * grid[sy as usize * size + sx as usize];
                    }
                }
            }
            smoothed[y as usize * size + x as usize] = acc;
        }
    }
    let sum: f64 = smoothed.iter().sum();
    for v in &mut smoothed {
        *v /= sum;
    }
    Filter::new(size, smoothed)
}

/// Mask with an exact number of missing pixels: `round(missing_fraction * n)`
/// zeros placed by a seeded partial shuffle.
pub fn random_mask(width: usize, height: usize, missing_fraction: f64, rng: &mut impl Rng) -> Result<Mask> {
    if !(0.0..=1.0).contains(&missing_fraction) {
        return Err(Error::RejectedInput(format!(
            "missing fraction must be in [0, 1], got {missing_fraction}"
        )));
    }
    let n = width * height;
    let missing = (missing_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..missing.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut data = vec![1u8; n];
    for &p in idx.iter().take(missing) {
        data[p] = 0;
    }
    Mask::new(width, height, data)
}

/// How one training class degrades its samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ClassKind {
    /// Additive Gaussian noise at a fixed level.
    Denoise { sigma: f64 },
    /// Circular blur with a fresh random PSF per sample plus noise drawn
    /// uniformly from `[sigma_min, sigma_max]`.
    Deconv {
        sigma_min: f64,
        sigma_max: f64,
        psf_size: usize,
    },
}

/// One problem class in a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: String,
    #[serde(flatten)]
    pub kind: ClassKind,
    pub count: usize,
}

/// Training manifest: clean sources, patch geometry, classes and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub clean_images: Vec<PathBuf>,
    pub patch_size: usize,
    pub seed: u64,
    pub classes: Vec<ClassDef>,
}

/// Crops patches from clean images and degrades them per class definition.
///
/// Deterministic in `seed`; the degraded observation is quantized to integer
/// levels as captured files would be.
pub fn build_training_samples(
    clean: &[Image],
    patch_size: usize,
    classes: &[ClassDef],
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if clean.is_empty() {
        return Err(Error::Config("no clean images supplied".into()));
    }
    for img in clean {
        if img.width() < patch_size || img.height() < patch_size {
            return Err(Error::Config(format!(
                "clean image {} smaller than patch size {patch_size}",
                img.shape_string()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for class in classes {
        for _ in 0..class.count {
            let src = &clean[rng.random_range(0..clean.len())];
            let x0 = rng.random_range(0..=src.width() - patch_size);
            let y0 = rng.random_range(0..=src.height() - patch_size);
            let patch = src.window(x0, y0, patch_size, patch_size)?;
            let (degraded, task) = match &class.kind {
                ClassKind::Denoise { sigma } => {
                    let noisy = quantize(&add_gaussian_noise(&patch, *sigma, &mut rng));
                    (noisy, TaskSpec::denoise(class.id.clone(), *sigma))
                }
                ClassKind::Deconv {
                    sigma_min,
                    sigma_max,
                    psf_size,
                } => {
                    let psf = random_psf(*psf_size, &mut rng)?;
                    let blurred = convolve(&patch, &psf, BoundaryMode::Circular)?;
                    let sigma = if sigma_max > sigma_min {
                        rng.random_range(*sigma_min..*sigma_max)
                    } else {
                        *sigma_min
                    };
                    let noisy = quantize(&add_gaussian_noise(&blurred, sigma, &mut rng));
                    (noisy, TaskSpec::deconv(class.id.clone(), psf, sigma))
                }
            };
            samples.push(TrainingSample {
                degraded,
                ground_truth: patch,
                task,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_images_are_deterministic_and_in_range() {
        let a = synthetic_clean_image(64, 48, 7);
        let b = synthetic_clean_image(64, 48, 7);
        assert_eq!(a, b);
        let c = synthetic_clean_image(64, 48, 8);
        assert_ne!(a, c);
        for &v in a.data() {
            assert!((0.0..=255.0).contains(&v));
        }
    }

    #[test]
    fn mask_has_exact_missing_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = random_mask(50, 50, 0.6, &mut rng).unwrap();
        assert_eq!(mask.observed_count(), 2500 - 1500);
    }

    #[test]
    fn psf_is_normalized_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let psf = random_psf(9, &mut rng).unwrap();
            let sum = psf.tap_sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(psf.taps().iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn training_set_is_deterministic() {
        let clean = vec![synthetic_clean_image(80, 80, 3)];
        let classes = vec![
            ClassDef {
                id: "sigma15".into(),
                kind: ClassKind::Denoise { sigma: 15.0 },
                count: 3,
            },
            ClassDef {
                id: "blur".into(),
                kind: ClassKind::Deconv {
                    sigma_min: 1.0,
                    sigma_max: 5.0,
                    psf_size: 5,
                },
                count: 2,
            },
        ];
        let a = build_training_samples(&clean, 24, &classes, 11).unwrap();
        let b = build_training_samples(&clean, 24, &classes, 11).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.degraded, y.degraded);
            assert_eq!(x.ground_truth, y.ground_truth);
            assert_eq!(x.task, y.task);
        }
        // degraded observations are quantized
        for s in &a {
            for &v in s.degraded.data() {
                assert_eq!(v, v.round());
            }
        }
    }

    #[test]
    fn sigma_zero_degradation_is_quantization_only() {
        let clean = vec![synthetic_clean_image(40, 40, 5)];
        let classes = vec![ClassDef {
            id: "clean".into(),
            kind: ClassKind::Denoise { sigma: 0.0 },
            count: 1,
        }];
        let samples = build_training_samples(&clean, 20, &classes, 1).unwrap();
        let s = &samples[0];
        for (d, g) in s.degraded.data().iter().zip(s.ground_truth.data()) {
            assert_eq!(*d, g.clamp(0.0, 255.0).round());
        }
    }
}
