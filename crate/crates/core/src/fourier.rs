//! 2D FFT helpers on top of `rustfft`, plus circulant kernel embedding.
//!
//! The transform convention is the unnormalized forward DFT with `1/(W*H)`
//! applied on the inverse, so `ifft2(fft2(x)) == x` and the circular
//! convolution theorem reads `fft2(convolve(x, f)) = otf(f) .* fft2(x)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::filter::Filter;
use crate::image::Image;

// Plans are cached per (length, direction); planning is the expensive part
// and results never depend on cache state.
fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (len, dir == FftDirection::Forward);
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(key)
        .or_insert_with(|| FftPlanner::new().plan_fft(len, dir))
        .clone()
}

fn transform_2d(width: usize, height: usize, data: &mut [Complex64], dir: FftDirection) {
    debug_assert_eq!(data.len(), width * height);
    // Rows.
    let row_fft = plan(width, dir);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    // Columns, via gather/scatter into a scratch column.
    let col_fft = plan(height, dir);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

/// Forward 2D DFT of a real image.
pub fn fft2(img: &Image) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = img
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    transform_2d(img.width(), img.height(), &mut data, FftDirection::Forward);
    data
}

/// Inverse 2D DFT back to a real image.
///
/// The imaginary residue must be numerically negligible (below
/// `1e-8 * peak`); a larger residue indicates an inconsistent spectrum and is
/// reported as a numerical failure.
pub fn ifft2_real(width: usize, height: usize, peak: f64, mut spectrum: Vec<Complex64>) -> Result<Image> {
    if spectrum.len() != width * height {
        return Err(Error::dims("ifft2 spectrum", width * height, spectrum.len()));
    }
    transform_2d(width, height, &mut spectrum, FftDirection::Inverse);
    let scale = 1.0 / (width * height) as f64;
    let mut max_im = 0.0f64;
    let data: Vec<f64> = spectrum
        .iter()
        .map(|c| {
            max_im = max_im.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    if max_im > 1e-8 * peak {
        return Err(Error::Numerical(format!(
            "inverse FFT produced imaginary residue {max_im:.3e} (limit {:.3e})",
            1e-8 * peak
        )));
    }
    Image::from_vec(width, height, peak, data)
}

/// Optical transfer function: the 2D DFT of the kernel embedded at the origin
/// with circular wrap-around, matching the matrix form of [`crate::filter::convolve`].
pub fn psf_otf(filt: &Filter, width: usize, height: usize) -> Result<Vec<Complex64>> {
    if width < filt.size() || height < filt.size() {
        return Err(Error::RejectedInput(format!(
            "psf of size {} does not fit a {}x{} image",
            filt.size(),
            width,
            height
        )));
    }
    let r = filt.radius() as isize;
    let mut padded = vec![Complex64::default(); width * height];
    for dy in -r..=r {
        let y = dy.rem_euclid(height as isize) as usize;
        for dx in -r..=r {
            let x = dx.rem_euclid(width as isize) as usize;
            padded[y * width + x] +=
                Complex64::new(filt.tap((dy + r) as usize, (dx + r) as usize), 0.0);
        }
    }
    transform_2d(width, height, &mut padded, FftDirection::Forward);
    Ok(padded)
}
