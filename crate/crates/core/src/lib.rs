//! Transferable image restoration built on proximal splitting.
//!
//! A single trainable prior proximal operator (a multi-stage nonlinear
//! diffusion) is shared across restoration tasks; each task contributes only
//! a closed-form data proximal operator and a scalar fidelity weight. The
//! half-quadratic-splitting solver alternates the two under a growing penalty
//! schedule, end-to-end training backpropagates through the unrolled solver,
//! and external denoisers can be composed in as additional plug-in priors at
//! test time.

pub mod dataprox;
pub mod error;
pub mod filter;
pub mod fourier;
pub mod gradcheck;
pub mod image;
pub mod prior;
pub mod rbf;

pub use error::{Error, Result};
pub use image::{psnr, Image, DEFAULT_PEAK};

pub mod hqs;
pub mod io;
pub mod lbfgs;
pub mod model;
pub mod store;
pub mod train;
