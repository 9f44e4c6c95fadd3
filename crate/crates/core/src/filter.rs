//! Small square filters, circular 2D convolution and its adjoint.
//!
//! Circular boundary handling is used throughout the library so every
//! convolution has a block-circulant matrix form; the Fourier-domain data
//! solve depends on that.

use crate::error::{Error, Result};
use crate::image::Image;

/// Boundary handling for spatial convolution. Only circular wrap-around is
/// supported; it keeps the operator block-circulant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Circular,
}

/// Odd-sized square convolution kernel with centered support.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    size: usize,
    taps: Vec<f64>,
}

impl Filter {
    /// Builds a filter from row-major taps; `size` must be odd and the taps finite.
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::RejectedInput(format!(
                "filter size must be odd and positive, got {size}"
            )));
        }
        if taps.len() != size * size {
            return Err(Error::dims("filter taps", size * size, taps.len()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::RejectedInput("filter taps contain non-finite values".into()));
        }
        Ok(Filter { size, taps })
    }

    /// Identity kernel: center tap 1, all others 0.
    pub fn identity(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        Filter::new(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Half-width of the centered support.
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at row `i`, column `j` (both in `0..size`).
    #[inline]
    pub fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[i * self.size + j]
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Kernel rotated by 180 degrees; convolving with it equals the adjoint
    /// of convolving with `self` under circular boundaries.
    pub fn rotated_180(&self) -> Filter {
        let mut taps = self.taps.clone();
        taps.reverse();
        Filter {
            size: self.size,
            taps,
        }
    }
}

fn check_conv_dims(img: &Image, filt: &Filter) -> Result<()> {
    if img.width() < filt.size() || img.height() < filt.size() {
        return Err(Error::RejectedInput(format!(
            "image {}x{} smaller than filter support {}",
            img.width(),
            img.height(),
            filt.size()
        )));
    }
    Ok(())
}

/// Circular 2D convolution: `out(p) = sum_q taps(q) img(p - q)`.
pub fn convolve(img: &Image, filt: &Filter, boundary: BoundaryMode) -> Result<Image> {
    let BoundaryMode::Circular = boundary;
    check_conv_dims(img, filt)?;
    let (w, h) = (img.width(), img.height());
    let r = filt.radius() as isize;
    let src = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (y - dy).rem_euclid(h as isize) as usize;
                let row = sy * w;
                let trow = ((dy + r) as usize) * filt.size();
                for dx in -r..=r {
                    let sx = (x - dx).rem_euclid(w as isize) as usize;
                    acc += filt.taps[trow + (dx + r) as usize] * src[row + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    Image::from_vec(w, h, img.peak(), out)
}

/// Adjoint of [`convolve`]: `out(p) = sum_q taps(q) img(p + q)`.
///
/// Satisfies `<convolve(a, f), b> == <a, convolve_transpose(b, f)>` exactly
/// up to floating-point roundoff.
pub fn convolve_transpose(img: &Image, filt: &Filter) -> Result<Image> {
    check_conv_dims(img, filt)?;
    let (w, h) = (img.width(), img.height());
    let r = filt.radius() as isize;
    let src = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (y + dy).rem_euclid(h as isize) as usize;
                let row = sy * w;
                let trow = ((dy + r) as usize) * filt.size();
                for dx in -r..=r {
                    let sx = (x + dx).rem_euclid(w as isize) as usize;
                    acc += filt.taps[trow + (dx + r) as usize] * src[row + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    Image::from_vec(w, h, img.peak(), out)
}

/// Circular cross-correlation against every lag in a `size`x`size` window:
/// `lags(dy+r, dx+r) = sum_p y(p) x(p - (dx, dy))`.
///
/// This is the gradient of `<y, convolve(x, f)>` with respect to the taps of
/// `f`, which is what the learned-filter backward pass needs.
pub fn correlate_lags(y: &Image, x: &Image, size: usize) -> Result<Vec<f64>> {
    if y.width() != x.width() || y.height() != x.height() {
        return Err(Error::dims("correlate_lags", y.shape_string(), x.shape_string()));
    }
    if size % 2 == 0 {
        return Err(Error::RejectedInput("lag window must be odd".into()));
    }
    let (w, h) = (x.width(), x.height());
    let r = (size / 2) as isize;
    let yd = y.data();
    let xd = x.data();
    let mut lags = vec![0.0; size * size];
    for dy in -r..=r {
        for dx in -r..=r {
            let mut acc = 0.0;
            for py in 0..h as isize {
                let sy = (py - dy).rem_euclid(h as isize) as usize;
                let yrow = py as usize * w;
                let xrow = sy * w;
                for px in 0..w as isize {
                    let sx = (px - dx).rem_euclid(w as isize) as usize;
                    acc += yd[yrow + px as usize] * xd[xrow + sx];
                }
            }
            lags[(dy + r) as usize * size + (dx + r) as usize] = acc;
        }
    }
    Ok(lags)
}

/// Zero-mean orthonormal filter basis: the non-DC atoms of the 2D DCT-II of
/// size `f`x`f`, ordered from low to high frequency.
///
/// Filters parameterized as coefficient vectors over this basis are zero-mean
/// by construction, which keeps the diffusion prior from shifting the mean of
/// constant images during training.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBasis {
    size: usize,
    atoms: Vec<Vec<f64>>,
}

impl FilterBasis {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::RejectedInput(format!(
                "basis filter size must be odd and positive, got {size}"
            )));
        }
        let f = size;
        let mut freqs: Vec<(usize, usize)> = (0..f)
            .flat_map(|u| (0..f).map(move |v| (u, v)))
            .filter(|&(u, v)| u + v > 0)
            .collect();
        freqs.sort_by_key(|&(u, v)| (u + v, u, v));
        let atoms = freqs
            .into_iter()
            .map(|(u, v)| {
                let alpha = |k: usize| {
                    if k == 0 {
                        (1.0 / f as f64).sqrt()
                    } else {
                        (2.0 / f as f64).sqrt()
                    }
                };
                let mut atom = Vec::with_capacity(f * f);
                for i in 0..f {
                    for j in 0..f {
                        let cy = (std::f64::consts::PI * (2 * i + 1) as f64 * v as f64
                            / (2.0 * f as f64))
                            .cos();
                        let cx = (std::f64::consts::PI * (2 * j + 1) as f64 * u as f64
                            / (2.0 * f as f64))
                            .cos();
                        atom.push(alpha(u) * alpha(v) * cx * cy);
                    }
                }
                atom
            })
            .collect();
        Ok(FilterBasis { size, atoms })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of atoms: `size^2 - 1`.
    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k]
    }

    /// Synthesizes taps from basis coefficients.
    pub fn taps_from_coeffs(&self, coeffs: &[f64]) -> Result<Filter> {
        if coeffs.len() != self.dim() {
            return Err(Error::dims("basis coefficients", self.dim(), coeffs.len()));
        }
        let mut taps = vec![0.0; self.size * self.size];
        for (c, atom) in coeffs.iter().zip(&self.atoms) {
            for (t, a) in taps.iter_mut().zip(atom) {
                *t += c * a;
            }
        }
        Filter::new(self.size, taps)
    }

    /// Projects a tap-space gradient back onto the coefficients.
    pub fn project(&self, taps: &[f64]) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|atom| atom.iter().zip(taps).map(|(a, t)| a * t).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> Image {
        Image::from_fn(w, h, 255.0, |_, _| rng.random_range(-100.0..100.0))
    }

    fn random_filter(f: usize, rng: &mut impl Rng) -> Filter {
        Filter::new(f, (0..f * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_filter_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(7, 5, &mut rng);
        let id = Filter::identity(3).unwrap();
        let out = convolve(&img, &id, BoundaryMode::Circular).unwrap();
        assert_eq!(out, img);
        let out_t = convolve_transpose(&img, &id).unwrap();
        assert_eq!(out_t, img);
    }

    #[test]
    fn constant_image_scales_by_tap_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let filt = random_filter(3, &mut rng);
        let img = Image::constant(6, 6, 255.0, 4.25);
        let out = convolve(&img, &filt, BoundaryMode::Circular).unwrap();
        let expect = 4.25 * filt.tap_sum();
        for &v in out.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_undersized_images() {
        let img = Image::zeros(2, 6, 255.0);
        let filt = Filter::identity(3).unwrap();
        assert!(convolve(&img, &filt, BoundaryMode::Circular).is_err());
        assert!(convolve_transpose(&img, &filt).is_err());
    }

    #[test]
    fn matches_dense_circulant_matrix() {
        // 6x6 image, 3x3 filter: compare against the explicitly assembled
        // 36x36 block-circulant matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(6, 6, &mut rng);
        let filt = random_filter(3, &mut rng);
        let (w, h) = (6usize, 6usize);
        let r = filt.radius() as isize;

        let mut dense = vec![vec![0.0; w * h]; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let p = y as usize * w + x as usize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = (y - dy).rem_euclid(h as isize) as usize;
                        let sx = (x - dx).rem_euclid(w as isize) as usize;
                        dense[p][sy * w + sx] +=
                            filt.tap((dy + r) as usize, (dx + r) as usize);
                    }
                }
            }
        }
        let out = convolve(&img, &filt, BoundaryMode::Circular).unwrap();
        for p in 0..w * h {
            let expect: f64 = dense[p]
                .iter()
                .zip(img.data())
                .map(|(&m, &v)| m * v)
                .sum();
            assert!(
                (out.data()[p] - expect).abs() < 1e-10,
                "pixel {p}: {} vs {}",
                out.data()[p],
                expect
            );
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = random_image(8, 8, &mut rng);
            let b = random_image(8, 8, &mut rng);
            let filt = random_filter(3, &mut rng);
            let lhs = convolve(&a, &filt, BoundaryMode::Circular).unwrap().dot(&b);
            let rhs = a.dot(&convolve_transpose(&b, &filt).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!((lhs - rhs).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn transpose_equals_rotated_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(9, 7, &mut rng);
        let filt = random_filter(5, &mut rng);
        let a = convolve_transpose(&img, &filt).unwrap();
        let b = convolve(&img, &filt.rotated_180(), BoundaryMode::Circular).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn correlate_lags_matches_tap_gradient() {
        // d/d tap_k <y, convolve(x, f)> computed by forward differences on
        // one tap at a time must equal the correlation at that lag.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_image(8, 8, &mut rng);
        let y = random_image(8, 8, &mut rng);
        let filt = random_filter(3, &mut rng);
        let lags = correlate_lags(&y, &x, 3).unwrap();
        for k in 0..9 {
            let mut taps_hi = filt.taps().to_vec();
            taps_hi[k] += 1.0;
            let f_hi = Filter::new(3, taps_hi).unwrap();
            let base = convolve(&x, &filt, BoundaryMode::Circular).unwrap().dot(&y);
            let hi = convolve(&x, &f_hi, BoundaryMode::Circular).unwrap().dot(&y);
            // Linear in taps, so the unit difference is exact.
            assert!((hi - base - lags[k]).abs() < 1e-8, "lag {k}");
        }
    }

    #[test]
    fn dct_basis_is_orthonormal_and_zero_mean() {
        for f in [3usize, 5] {
            let basis = FilterBasis::new(f).unwrap();
            assert_eq!(basis.dim(), f * f - 1);
            for k in 0..basis.dim() {
                let a = basis.atom(k);
                let sum: f64 = a.iter().sum();
                assert!(sum.abs() < 1e-12, "atom {k} not zero-mean: {sum}");
                for l in 0..basis.dim() {
                    let dot: f64 = a.iter().zip(basis.atom(l)).map(|(x, y)| x * y).sum();
                    let expect = if k == l { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-12, "atoms {k},{l}: {dot}");
                }
            }
        }
    }

    #[test]
    fn basis_round_trip() {
        let basis = FilterBasis::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..basis.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let filt = basis.taps_from_coeffs(&coeffs).unwrap();
        assert!(filt.tap_sum().abs() < 1e-12);
        let back = basis.project(filt.taps());
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
