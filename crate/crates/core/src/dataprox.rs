//! Closed-form data proximal operators.
//!
//! Each solve returns the exact minimizer of
//! `lambda ||b - A x||^2 + sum_j w_j ||c_j - x||^2` for its sensing operator:
//! elementwise for identity and masks, in the Fourier domain for circulant
//! convolution, and by dense factorization for the small test oracle. The
//! extra consensus terms beyond `(rho, z)` carry plug-in priors.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filter::Filter;
use crate::fourier::{fft2, ifft2_real, psf_otf};
use crate::image::Image;

/// Binary observation mask; 1 = measured pixel, 0 = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("mask data length", width * height, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::RejectedInput("mask entries must be 0 or 1".into()));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn all_ones(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn observed_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    fn matches(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }
}

/// Explicit sensing matrix, intended for small test instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSensing {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseSensing {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("dense sensing data", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("dense sensing matrix has non-finite entries".into()));
        }
        Ok(DenseSensing { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// The linear forward model of a restoration task.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensing {
    /// Denoising: A = I.
    Identity,
    /// Non-blind deconvolution: A is circular convolution with the PSF.
    ConvolutionPsf(Filter),
    /// Inpainting / joint denoise-inpaint: A is a binary diagonal.
    BinaryMask(Mask),
    /// Explicit matrix, test oracle only.
    DenseMatrix(DenseSensing),
}

/// A restoration problem class: sensing operator, noise level and the label
/// that keys its fidelity weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub sensing: Sensing,
    pub noise_sigma: f64,
    pub class_id: String,
}

impl TaskSpec {
    pub fn denoise(class_id: impl Into<String>, noise_sigma: f64) -> Self {
        TaskSpec {
            sensing: Sensing::Identity,
            noise_sigma,
            class_id: class_id.into(),
        }
    }

    pub fn deconv(class_id: impl Into<String>, psf: Filter, noise_sigma: f64) -> Self {
        TaskSpec {
            sensing: Sensing::ConvolutionPsf(psf),
            noise_sigma,
            class_id: class_id.into(),
        }
    }

    pub fn inpaint(class_id: impl Into<String>, mask: Mask, noise_sigma: f64) -> Self {
        TaskSpec {
            sensing: Sensing::BinaryMask(mask),
            noise_sigma,
            class_id: class_id.into(),
        }
    }

    /// Checks the sensing operator against an observation image.
    pub fn validate_for(&self, b: &Image) -> Result<()> {
        match &self.sensing {
            Sensing::Identity => Ok(()),
            Sensing::ConvolutionPsf(psf) => {
                if b.width() < psf.size() || b.height() < psf.size() {
                    Err(Error::dims(
                        "psf support",
                        format!(">= {}", psf.size()),
                        b.shape_string(),
                    ))
                } else {
                    Ok(())
                }
            }
            Sensing::BinaryMask(mask) => {
                if mask.matches(b) {
                    Ok(())
                } else {
                    Err(Error::dims(
                        "mask dimensions",
                        b.shape_string(),
                        format!("{}x{}", mask.width, mask.height),
                    ))
                }
            }
            Sensing::DenseMatrix(a) => {
                if a.rows != b.len() {
                    Err(Error::dims("dense sensing rows", b.len(), a.rows))
                } else if a.rows > 4096 || a.cols > 4096 {
                    Err(Error::RejectedInput(
                        "dense sensing is limited to 4096 pixels".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Inputs shared by every data proximal solve.
#[derive(Debug, Clone, Copy)]
pub struct DataProxInputs<'a> {
    /// Observation.
    pub b: &'a Image,
    /// Current slack estimate.
    pub z: &'a Image,
    /// Fidelity weight, strictly positive.
    pub lambda: f64,
    /// Consensus weight of this iteration, strictly positive.
    pub rho: f64,
}

impl<'a> DataProxInputs<'a> {
    pub fn new(b: &'a Image, z: &'a Image, lambda: f64, rho: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::RejectedInput(format!(
                "lambda and rho must be positive and finite (lambda {lambda}, rho {rho})"
            )));
        }
        Ok(DataProxInputs { b, z, lambda, rho })
    }
}

fn check_terms(b: &Image, terms: &[(f64, &Image)], same_shape_as_b: bool) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::RejectedInput("at least one consensus term required".into()));
    }
    let reference = terms[0].1;
    for &(w, img) in terms {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::RejectedInput(format!("consensus weight must be positive, got {w}")));
        }
        if img.width() != reference.width() || img.height() != reference.height() {
            return Err(Error::dims(
                "consensus term",
                reference.shape_string(),
                img.shape_string(),
            ));
        }
    }
    if same_shape_as_b && (reference.width() != b.width() || reference.height() != b.height()) {
        return Err(Error::dims(
            "observation vs consensus",
            reference.shape_string(),
            b.shape_string(),
        ));
    }
    Ok(())
}

/// Minimizer of `lambda ||b - A x||^2 + sum_j w_j ||c_j - x||^2`.
///
/// `terms` holds `(w_j, c_j)` pairs; the plain solves pass exactly one term
/// `(rho, z)` and plug-in priors append theirs.
pub fn solve_consensus(
    sensing: &Sensing,
    b: &Image,
    lambda: f64,
    terms: &[(f64, &Image)],
) -> Result<Image> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::RejectedInput(format!("lambda must be positive, got {lambda}")));
    }
    match sensing {
        Sensing::Identity => {
            check_terms(b, terms, true)?;
            let wsum: f64 = lambda + terms.iter().map(|t| t.0).sum::<f64>();
            let mut out = b.map(|v| lambda * v);
            for &(w, c) in terms {
                out.add_scaled(c, w);
            }
            Ok(out.map(|v| v / wsum))
        }
        Sensing::BinaryMask(mask) => {
            check_terms(b, terms, true)?;
            if !mask.matches(b) {
                return Err(Error::dims(
                    "mask dimensions",
                    b.shape_string(),
                    format!("{}x{}", mask.width, mask.height),
                ));
            }
            let wsum: f64 = terms.iter().map(|t| t.0).sum();
            let mut num: Vec<f64> = b
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&bv, &a)| lambda * a as f64 * bv)
                .collect();
            for &(w, c) in terms {
                for (n, &cv) in num.iter_mut().zip(c.data()) {
                    *n += w * cv;
                }
            }
            let data: Vec<f64> = num
                .iter()
                .zip(mask.data())
                .map(|(&n, &a)| n / (lambda * a as f64 + wsum))
                .collect();
            Image::from_vec(b.width(), b.height(), b.peak(), data)
        }
        Sensing::ConvolutionPsf(psf) => {
            check_terms(b, terms, true)?;
            let (w, h) = (b.width(), b.height());
            let otf = psf_otf(psf, w, h)?;
            let b_hat = fft2(b);
            let wsum: f64 = terms.iter().map(|t| t.0).sum();
            // numerator lambda conj(H) B + sum_j w_j C_j; denominator lambda |H|^2 + sum_j w_j
            let mut num: Vec<Complex64> = otf
                .iter()
                .zip(&b_hat)
                .map(|(hh, bb)| lambda * hh.conj() * bb)
                .collect();
            for &(wj, c) in terms {
                let c_hat = fft2(c);
                for (n, cc) in num.iter_mut().zip(&c_hat) {
                    *n += wj * cc;
                }
            }
            let spec: Vec<Complex64> = num
                .iter()
                .zip(&otf)
                .map(|(n, hh)| {
                    let denom = lambda * hh.norm_sqr() + wsum;
                    debug_assert!(denom > 0.0);
                    n / denom
                })
                .collect();
            ifft2_real(w, h, b.peak(), spec)
        }
        Sensing::DenseMatrix(a) => {
            check_terms(b, terms, false)?;
            let z0 = terms[0].1;
            if a.rows != b.len() || a.cols != z0.len() {
                return Err(Error::dims(
                    "dense sensing shape",
                    format!("{}x{}", b.len(), z0.len()),
                    format!("{}x{}", a.rows, a.cols),
                ));
            }
            if a.rows > 4096 || a.cols > 4096 {
                return Err(Error::RejectedInput(
                    "dense sensing is limited to 4096 pixels".into(),
                ));
            }
            let am = a.to_dmatrix();
            let wsum: f64 = terms.iter().map(|t| t.0).sum();
            let mut m = am.transpose() * &am * lambda;
            for i in 0..a.cols {
                m[(i, i)] += wsum;
            }
            let bv = nalgebra::DVector::from_column_slice(b.data());
            let mut rhs = am.transpose() * bv * lambda;
            for &(wj, c) in terms {
                for (r, &cv) in rhs.iter_mut().zip(c.data()) {
                    *r += wj * cv;
                }
            }
            let x = m
                .cholesky()
                .ok_or_else(|| Error::Numerical("dense data solve is not positive definite".into()))?
                .solve(&rhs);
            Image::from_vec(z0.width(), z0.height(), z0.peak(), x.iter().copied().collect())
        }
    }
}

/// Denoising update: `x = (lambda b + rho z) / (lambda + rho)`.
pub fn solve_identity(inputs: &DataProxInputs) -> Result<Image> {
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    solve_consensus(
        &Sensing::Identity,
        inputs.b,
        inputs.lambda,
        &[(inputs.rho, inputs.z)],
    )
}

/// Deconvolution update, solved exactly in the Fourier domain.
pub fn solve_deconv(inputs: &DataProxInputs, psf: &Filter) -> Result<Image> {
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    solve_consensus(
        &Sensing::ConvolutionPsf(psf.clone()),
        inputs.b,
        inputs.lambda,
        &[(inputs.rho, inputs.z)],
    )
}

/// Joint denoise-inpaint update:
/// `x = (lambda a .* b + rho z) / (lambda a + rho)` with binary mask `a`.
pub fn solve_mask(inputs: &DataProxInputs, mask: &Mask) -> Result<Image> {
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    solve_consensus(
        &Sensing::BinaryMask(mask.clone()),
        inputs.b,
        inputs.lambda,
        &[(inputs.rho, inputs.z)],
    )
}

/// Direct-factorization oracle for small instances.
pub fn solve_dense(inputs: &DataProxInputs, a: &DenseSensing) -> Result<Image> {
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    solve_consensus(
        &Sensing::DenseMatrix(a.clone()),
        inputs.b,
        inputs.lambda,
        &[(inputs.rho, inputs.z)],
    )
}

/// Dispatch on the task's sensing operator.
pub fn solve_task(task: &TaskSpec, inputs: &DataProxInputs) -> Result<Image> {
    task.validate_for(inputs.b)?;
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    solve_consensus(&task.sensing, inputs.b, inputs.lambda, &[(inputs.rho, inputs.z)])
}

/// Analytic derivatives of the plain data solve with respect to the slack
/// image and the fidelity weight: given `dL/dx`, returns `(dL/dz, dL/dlambda)`.
pub fn data_prox_backward(
    inputs: &DataProxInputs,
    dl_dx: &Image,
    task: &TaskSpec,
) -> Result<(Image, f64)> {
    DataProxInputs::new(inputs.b, inputs.z, inputs.lambda, inputs.rho)?;
    let (b, z, lambda, rho) = (inputs.b, inputs.z, inputs.lambda, inputs.rho);
    if !dl_dx.same_shape(z) {
        return Err(Error::dims("data backward", z.shape_string(), dl_dx.shape_string()));
    }
    match &task.sensing {
        Sensing::Identity => {
            if !b.same_shape(z) {
                return Err(Error::dims("data backward", z.shape_string(), b.shape_string()));
            }
            let denom = lambda + rho;
            let dz = dl_dx.map(|g| g * rho / denom);
            let mut dlambda = 0.0;
            for ((&g, &bv), &zv) in dl_dx.data().iter().zip(b.data()).zip(z.data()) {
                dlambda += g * rho * (bv - zv) / (denom * denom);
            }
            Ok((dz, dlambda))
        }
        Sensing::BinaryMask(mask) => {
            if !mask.matches(z) || !b.same_shape(z) {
                return Err(Error::dims("data backward mask", z.shape_string(), b.shape_string()));
            }
            let mut dz = vec![0.0; z.len()];
            let mut dlambda = 0.0;
            for p in 0..z.len() {
                let a = mask.data()[p] as f64;
                let denom = lambda * a + rho;
                let g = dl_dx.data()[p];
                dz[p] = g * rho / denom;
                dlambda += g * a * rho * (b.data()[p] - z.data()[p]) / (denom * denom);
            }
            Ok((
                Image::from_vec(z.width(), z.height(), z.peak(), dz)?,
                dlambda,
            ))
        }
        Sensing::ConvolutionPsf(psf) => {
            let (w, h) = (z.width(), z.height());
            let otf = psf_otf(psf, w, h)?;
            let g_hat = fft2(dl_dx);
            // dL/dz = IFFT(rho / D .* FFT(dL/dx)), D = lambda |H|^2 + rho
            let dz_spec: Vec<Complex64> = g_hat
                .iter()
                .zip(&otf)
                .map(|(g, hh)| g * (rho / (lambda * hh.norm_sqr() + rho)))
                .collect();
            let dz = ifft2_real(w, h, z.peak(), dz_spec)?;
            // dx/dlambda = IFFT(rho (conj(H) B - |H|^2 Z) / D^2)
            let b_hat = fft2(b);
            let z_hat = fft2(z);
            let dlam_spec: Vec<Complex64> = otf
                .iter()
                .zip(b_hat.iter().zip(&z_hat))
                .map(|(hh, (bb, zz))| {
                    let d = lambda * hh.norm_sqr() + rho;
                    (hh.conj() * bb - hh.norm_sqr() * zz) * (rho / (d * d))
                })
                .collect();
            let dx_dlambda = ifft2_real(w, h, z.peak(), dlam_spec)?;
            Ok((dz, dl_dx.dot(&dx_dlambda)))
        }
        Sensing::DenseMatrix(a) => {
            task.validate_for(b)?;
            if a.cols != z.len() {
                return Err(Error::dims("dense backward", z.len(), a.cols));
            }
            let am = a.to_dmatrix();
            let mut m = am.transpose() * &am * lambda;
            for i in 0..a.cols {
                m[(i, i)] += rho;
            }
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Numerical("dense data solve is not positive definite".into()))?;
            let g = nalgebra::DVector::from_column_slice(dl_dx.data());
            let y = chol.solve(&g);
            let dz = Image::from_vec(
                z.width(),
                z.height(),
                z.peak(),
                y.iter().map(|&v| rho * v).collect(),
            )?;
            // dL/dlambda = (A y) . (b - A x) with x the forward solution
            let x = solve_dense(inputs, a)?;
            let xv = nalgebra::DVector::from_column_slice(x.data());
            let bv = nalgebra::DVector::from_column_slice(b.data());
            let residual = bv - &am * xv;
            let dlambda = (&am * y).dot(&residual);
            Ok((dz, dlambda))
        }
    }
}

/// Dense block-circulant matrix of circular convolution with `psf` on a
/// `width` x `height` raster; the assembly oracle used in tests.
pub fn circulant_matrix(psf: &Filter, width: usize, height: usize) -> nalgebra::DMatrix<f64> {
    let n = width * height;
    let r = psf.radius() as isize;
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let p = y as usize * width + x as usize;
            for dy in -r..=r {
                let sy = (y - dy).rem_euclid(height as isize) as usize;
                for dx in -r..=r {
                    let sx = (x - dx).rem_euclid(width as isize) as usize;
                    m[(p, sy * width + sx)] += psf.tap((dy + r) as usize, (dx + r) as usize);
                }
            }
        }
    }
    m
}

/// Dense equivalent of a sensing operator on a `width` x `height` raster.
pub fn sensing_to_dense(sensing: &Sensing, width: usize, height: usize) -> Result<DenseSensing> {
    let n = width * height;
    match sensing {
        Sensing::Identity => {
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                data[i * n + i] = 1.0;
            }
            DenseSensing::new(n, n, data)
        }
        Sensing::ConvolutionPsf(psf) => {
            let m = circulant_matrix(psf, width, height);
            DenseSensing::new(n, n, m.transpose().as_slice().to_vec())
        }
        Sensing::BinaryMask(mask) => {
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                data[i * n + i] = mask.data()[i] as f64;
            }
            DenseSensing::new(n, n, data)
        }
        Sensing::DenseMatrix(a) => Ok(a.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> Image {
        Image::from_fn(w, h, 255.0, |_, _| rng.random_range(0.0..255.0))
    }

    fn random_psf(size: usize, rng: &mut impl Rng) -> Filter {
        let mut taps: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= s;
        }
        Filter::new(size, taps).unwrap()
    }

    #[test]
    fn identity_equal_weights_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let b = random_image(6, 6, &mut rng);
        let z = random_image(6, 6, &mut rng);
        let x = solve_identity(&DataProxInputs::new(&b, &z, 2.0, 2.0).unwrap()).unwrap();
        for ((xv, bv), zv) in x.data().iter().zip(b.data()).zip(z.data()) {
            assert!((xv - 0.5 * (bv + zv)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_consensus_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = random_image(5, 5, &mut rng);
        let z = random_image(5, 5, &mut rng);
        let x = solve_identity(&DataProxInputs::new(&b, &z, 1.0, 1e9).unwrap()).unwrap();
        for (xv, zv) in x.data().iter().zip(z.data()) {
            assert!((xv - zv).abs() < 1e-6 * 255.0);
        }
    }

    #[test]
    fn identity_scalar_case() {
        let b = Image::constant(4, 4, 255.0, 30.0);
        let z = Image::constant(4, 4, 255.0, 60.0);
        let x = solve_identity(&DataProxInputs::new(&b, &z, 2.0, 1.0).unwrap()).unwrap();
        for &v in x.data() {
            assert_eq!(v, 40.0);
        }
    }

    #[test]
    fn deconv_with_delta_psf_reduces_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let b = random_image(8, 8, &mut rng);
        let z = random_image(8, 8, &mut rng);
        let inputs = DataProxInputs::new(&b, &z, 0.7, 1.3).unwrap();
        let delta = Filter::identity(3).unwrap();
        let via_fft = solve_deconv(&inputs, &delta).unwrap();
        let direct = solve_identity(&inputs).unwrap();
        for (a, b) in via_fft.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn deconv_matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for trial in 0..5 {
            let (w, h) = (8, 8);
            let psf = random_psf(3, &mut rng);
            let clean = random_image(w, h, &mut rng);
            let b = {
                let m = circulant_matrix(&psf, w, h);
                let v = nalgebra::DVector::from_column_slice(clean.data());
                let bv = m * v;
                Image::from_vec(w, h, 255.0, bv.iter().copied().collect()).unwrap()
            };
            let z = random_image(w, h, &mut rng);
            let lambda = rng.random_range(0.05..5.0);
            let rho = rng.random_range(0.05..5.0);
            let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
            let x_fft = solve_deconv(&inputs, &psf).unwrap();
            let dense = sensing_to_dense(&Sensing::ConvolutionPsf(psf.clone()), w, h).unwrap();
            let x_dense = solve_dense(&inputs, &dense).unwrap();
            let scale = x_dense.norm().max(1.0);
            let mut diff = 0.0;
            for (a, b) in x_fft.data().iter().zip(x_dense.data()) {
                diff += (a - b) * (a - b);
            }
            assert!(
                diff.sqrt() / scale < 1e-8,
                "trial {trial}: relative error {}",
                diff.sqrt() / scale
            );
        }
    }

    #[test]
    fn deconv_normal_equation_residual_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (w, h) = (12, 10);
        let psf = random_psf(5, &mut rng);
        let b = random_image(w, h, &mut rng);
        let z = random_image(w, h, &mut rng);
        let (lambda, rho) = (1.7, 0.9);
        let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
        let x = solve_deconv(&inputs, &psf).unwrap();

        let a = circulant_matrix(&psf, w, h);
        let xv = nalgebra::DVector::from_column_slice(x.data());
        let bv = nalgebra::DVector::from_column_slice(b.data());
        let zv = nalgebra::DVector::from_column_slice(z.data());
        let lhs = (a.transpose() * &a * lambda + nalgebra::DMatrix::identity(w * h, w * h) * rho)
            * xv;
        let rhs = a.transpose() * bv * lambda + zv * rho;
        let rel = (lhs - &rhs).norm() / rhs.norm();
        assert!(rel < 1e-10, "residual {rel}");
    }

    #[test]
    fn mask_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let b = random_image(6, 6, &mut rng);
        let z = random_image(6, 6, &mut rng);
        let inputs = DataProxInputs::new(&b, &z, 0.8, 1.9).unwrap();

        let ones = Mask::all_ones(6, 6);
        let x = solve_mask(&inputs, &ones).unwrap();
        let ident = solve_identity(&inputs).unwrap();
        for (a, b) in x.data().iter().zip(ident.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zeros = Mask::new(6, 6, vec![0; 36]).unwrap();
        let x = solve_mask(&inputs, &zeros).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_mixed_scalar_case() {
        let b = Image::constant(4, 4, 255.0, 100.0);
        let z = Image::constant(4, 4, 255.0, 40.0);
        let mut mdata = vec![0u8; 16];
        for i in 0..8 {
            mdata[i] = 1;
        }
        let mask = Mask::new(4, 4, mdata).unwrap();
        let inputs = DataProxInputs::new(&b, &z, 1.0, 1.0).unwrap();
        let x = solve_mask(&inputs, &mask).unwrap();
        for (p, &v) in x.data().iter().enumerate() {
            let expect = if p < 8 { 70.0 } else { 40.0 };
            assert!((v - expect).abs() < 1e-12, "pixel {p}: {v}");
        }
    }

    #[test]
    fn dense_cross_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (w, h) = (6, 6);
        let b = random_image(w, h, &mut rng);
        let z = random_image(w, h, &mut rng);
        let inputs = DataProxInputs::new(&b, &z, 1.3, 0.6).unwrap();

        // A = I
        let ident = sensing_to_dense(&Sensing::Identity, w, h).unwrap();
        let xd = solve_dense(&inputs, &ident).unwrap();
        let xi = solve_identity(&inputs).unwrap();
        for (a, b) in xd.data().iter().zip(xi.data()) {
            assert!((a - b).abs() < 1e-12 * 255.0);
        }

        // A = diag(mask)
        let mask = Mask::new(
            w,
            h,
            (0..w * h).map(|i| (i % 3 == 0) as u8).collect(),
        )
        .unwrap();
        let dm = sensing_to_dense(&Sensing::BinaryMask(mask.clone()), w, h).unwrap();
        let xd = solve_dense(&inputs, &dm).unwrap();
        let xm = solve_mask(&inputs, &mask).unwrap();
        for (a, b) in xd.data().iter().zip(xm.data()) {
            assert!((a - b).abs() < 1e-12 * 255.0);
        }
    }

    #[test]
    fn solve_minimizes_objective() {
        // gradient of the quadratic objective at the solution must vanish
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let (w, h) = (8, 8);
        let psf = random_psf(3, &mut rng);
        let b = random_image(w, h, &mut rng);
        let z = random_image(w, h, &mut rng);
        let (lambda, rho) = (2.2, 0.4);
        let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
        let x = solve_deconv(&inputs, &psf).unwrap();

        let a = circulant_matrix(&psf, w, h);
        let xv = nalgebra::DVector::from_column_slice(x.data());
        let bv = nalgebra::DVector::from_column_slice(b.data());
        let zv = nalgebra::DVector::from_column_slice(z.data());
        let grad = a.transpose() * (&a * &xv - bv) * (2.0 * lambda) + (&xv - zv) * (2.0 * rho);
        let rhs_scale = (a.transpose() * nalgebra::DVector::from_column_slice(b.data()) * lambda
            + nalgebra::DVector::from_column_slice(z.data()) * rho)
            .norm();
        assert!(grad.norm() / rhs_scale < 1e-9);
    }

    #[test]
    fn monotone_blending() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let b = random_image(7, 7, &mut rng);
        let z = random_image(7, 7, &mut rng);
        for &(lambda, rho) in &[(0.1, 3.0), (5.0, 0.2), (1.0, 1.0)] {
            let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
            let x = solve_identity(&inputs).unwrap();
            for ((xv, bv), zv) in x.data().iter().zip(b.data()).zip(z.data()) {
                let lo = bv.min(*zv) - 1e-12;
                let hi = bv.max(*zv) + 1e-12;
                assert!(*xv >= lo && *xv <= hi);
            }
        }
    }

    #[test]
    fn backward_identity_finite_difference_on_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let b = random_image(6, 6, &mut rng);
        let z = random_image(6, 6, &mut rng);
        let gl = random_image(6, 6, &mut rng);
        let task = TaskSpec::denoise("d", 15.0);
        let lambda = 0.8;
        let rho = 1.7;
        let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
        let (_, dlambda) = data_prox_backward(&inputs, &gl, &task).unwrap();
        let h = 1e-5;
        let hi = solve_identity(&DataProxInputs::new(&b, &z, lambda + h, rho).unwrap()).unwrap();
        let lo = solve_identity(&DataProxInputs::new(&b, &z, lambda - h, rho).unwrap()).unwrap();
        let fd = (hi.dot(&gl) - lo.dot(&gl)) / (2.0 * h);
        assert!(
            (dlambda - fd).abs() / fd.abs().max(1e-6) < 1e-6,
            "{dlambda} vs {fd}"
        );
    }

    #[test]
    fn backward_deconv_finite_difference_on_z_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (w, h) = (8, 8);
        let psf = random_psf(3, &mut rng);
        let b = random_image(w, h, &mut rng);
        let z = random_image(w, h, &mut rng);
        let gl = random_image(w, h, &mut rng);
        let task = TaskSpec::deconv("k", psf.clone(), 3.0);
        let (lambda, rho) = (1.1, 0.7);
        let inputs = DataProxInputs::new(&b, &z, lambda, rho).unwrap();
        let (dz, _) = data_prox_backward(&inputs, &gl, &task).unwrap();

        let dir = random_image(w, h, &mut rng).map(|v| v / 255.0 - 0.5);
        let step = 1e-4;
        let mut z_hi = z.clone();
        z_hi.add_scaled(&dir, step);
        let mut z_lo = z.clone();
        z_lo.add_scaled(&dir, -step);
        let hi = solve_deconv(&DataProxInputs::new(&b, &z_hi, lambda, rho).unwrap(), &psf).unwrap();
        let lo = solve_deconv(&DataProxInputs::new(&b, &z_lo, lambda, rho).unwrap(), &psf).unwrap();
        let fd = (hi.dot(&gl) - lo.dot(&gl)) / (2.0 * step);
        let an = dz.dot(&dir);
        assert!((an - fd).abs() / fd.abs().max(1e-6) < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn backward_zero_upstream_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let b = random_image(5, 5, &mut rng);
        let z = random_image(5, 5, &mut rng);
        let zero = Image::zeros(5, 5, 255.0);
        let task = TaskSpec::denoise("d", 15.0);
        let inputs = DataProxInputs::new(&b, &z, 0.5, 2.0).unwrap();
        let (dz, dlambda) = data_prox_backward(&inputs, &zero, &task).unwrap();
        assert!(dz.data().iter().all(|&v| v == 0.0));
        assert_eq!(dlambda, 0.0);
    }

    #[test]
    fn lambda_to_zero_converges_to_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let b = random_image(5, 5, &mut rng);
        let z = random_image(5, 5, &mut rng);
        let inputs = DataProxInputs::new(&b, &z, 1e-12, 1.0).unwrap();
        let x = solve_identity(&inputs).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
