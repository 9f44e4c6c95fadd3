//! Trainable pointwise influence functions: weighted sums of equidistant
//! Gaussian kernels.

use crate::error::{Error, Result};

/// Kernels further than this many bandwidths from the evaluation point are
/// skipped. exp(-12^2/2) ~ 5e-32 is far below double-precision roundoff for
/// any realistic weight, so the truncation is numerically invisible; it keeps
/// the per-pixel cost proportional to the local kernel count instead of M.
const TRUNCATION_BANDWIDTHS: f64 = 12.0;

/// 1D function `psi(v) = sum_j w_j exp(-(v - c_j)^2 / (2 sigma^2))` with
/// equidistant centers `c_j` spanning `[-range, +range]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFunction {
    range: f64,
    bandwidth: f64,
    weights: Vec<f64>,
}

impl RbfFunction {
    pub fn new(range: f64, bandwidth: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::RejectedInput(format!(
                "rbf needs at least 2 kernels, got {}",
                weights.len()
            )));
        }
        if !(range > 0.0) || !(bandwidth > 0.0) {
            return Err(Error::RejectedInput(format!(
                "rbf range and bandwidth must be positive (range {range}, bandwidth {bandwidth})"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::RejectedInput("rbf weights contain non-finite values".into()));
        }
        Ok(RbfFunction {
            range,
            bandwidth,
            weights,
        })
    }

    /// All-zero function with `m` kernels.
    pub fn zero(range: f64, bandwidth: f64, m: usize) -> Result<Self> {
        RbfFunction::new(range, bandwidth, vec![0.0; m])
    }

    pub fn num_kernels(&self) -> usize {
        self.weights.len()
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Spacing between adjacent centers.
    pub fn spacing(&self) -> f64 {
        2.0 * self.range / (self.weights.len() - 1) as f64
    }

    /// Center of kernel `j`.
    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        -self.range + j as f64 * self.spacing()
    }

    /// Inclusive index window of kernels that contribute at `v`.
    #[inline]
    fn window(&self, v: f64) -> (usize, usize) {
        let cut = TRUNCATION_BANDWIDTHS * self.bandwidth;
        let spacing = self.spacing();
        let lo = ((v - cut + self.range) / spacing).ceil();
        let hi = ((v + cut + self.range) / spacing).floor();
        let m = self.weights.len() as i64;
        let lo = (lo as i64).clamp(0, m);
        let hi = (hi as i64).min(m - 1);
        if hi < lo {
            (1, 0) // empty
        } else {
            (lo as usize, hi as usize)
        }
    }

    /// Calls `f(j, g_j)` for every kernel contributing at `v`, where
    /// `g_j = exp(-(v - c_j)^2 / (2 sigma^2))` in ascending `j` order.
    #[inline]
    pub fn for_each_kernel(&self, v: f64, mut f: impl FnMut(usize, f64)) {
        let (lo, hi) = self.window(v);
        let inv_two_sigma2 = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let spacing = self.spacing();
        let mut c = -self.range + lo as f64 * spacing;
        for j in lo..=hi {
            let d = v - c;
            f(j, (-d * d * inv_two_sigma2).exp());
            c += spacing;
        }
    }

    /// Evaluates the function at `v`.
    pub fn eval(&self, v: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_kernel(v, |j, g| acc += self.weights[j] * g);
        acc
    }

    /// Value and derivative with respect to `v`, in one kernel sweep.
    pub fn eval_with_slope(&self, v: f64) -> (f64, f64) {
        let inv_sigma2 = 1.0 / (self.bandwidth * self.bandwidth);
        let mut val = 0.0;
        let mut slope = 0.0;
        self.for_each_kernel(v, |j, g| {
            let wg = self.weights[j] * g;
            val += wg;
            slope += wg * (self.center(j) - v) * inv_sigma2;
        });
        (val, slope)
    }

    /// Analytic partials of [`RbfFunction::eval`]: `(d/dv, d/dw_j for all j)`.
    pub fn grad(&self, v: f64) -> (f64, Vec<f64>) {
        let inv_sigma2 = 1.0 / (self.bandwidth * self.bandwidth);
        let mut d_dv = 0.0;
        let mut d_dw = vec![0.0; self.weights.len()];
        self.for_each_kernel(v, |j, g| {
            d_dw[j] = g;
            d_dv += self.weights[j] * g * (self.center(j) - v) * inv_sigma2;
        });
        (d_dv, d_dw)
    }

    /// Least-squares fit of the kernel weights so the function interpolates
    /// `target` at the centers. Used to seed influence functions.
    pub fn fit(range: f64, bandwidth: f64, m: usize, target: impl Fn(f64) -> f64) -> Result<Self> {
        let proto = RbfFunction::zero(range, bandwidth, m)?;
        let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut rhs = nalgebra::DVector::<f64>::zeros(m);
        let inv_two_sigma2 = 1.0 / (2.0 * bandwidth * bandwidth);
        for j in 0..m {
            let cj = proto.center(j);
            rhs[j] = target(cj);
            for k in 0..m {
                let d = cj - proto.center(k);
                gram[(j, k)] = (-d * d * inv_two_sigma2).exp();
            }
            gram[(j, j)] += 1e-12; // ridge for conditioning
        }
        let solved = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs))
            .ok_or_else(|| Error::Numerical("rbf kernel system is singular".into()))?;
        RbfFunction::new(range, bandwidth, solved.iter().copied().collect())
    }
}
