//! The shared prior proximal operator: a K-stage nonlinear diffusion with
//! trainable filters and influence functions, plus exact reverse-mode
//! derivatives with respect to its input and every parameter.
//!
//! One stage maps `z -> z - sum_i F_i^T psi_i(F_i z)` with circular
//! convolutions `F_i` and pointwise influence functions `psi_i`. The operator
//! is independent of the penalty weight schedule, so the same parameters are
//! reused at every outer iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve, convolve_transpose, correlate_lags, BoundaryMode, Filter, FilterBasis};
use crate::image::Image;
use crate::rbf::RbfFunction;

/// Influence-function discretization: kernel count, span and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    /// Number of Gaussian kernels (M).
    pub kernels: usize,
    /// Centers span `[-range, +range]` in intensity units.
    pub range: f64,
    /// Gaussian kernel width.
    pub bandwidth: f64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        // 63 kernels over +-310 with bandwidth equal to the center spacing.
        RbfConfig {
            kernels: 63,
            range: 310.0,
            bandwidth: 10.0,
        }
    }
}

/// Model architecture constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Diffusion stages (K).
    pub stages: usize,
    /// Filters per stage (N).
    pub filters_per_stage: usize,
    /// Square filter side length (f, odd).
    pub filter_size: usize,
    pub rbf: RbfConfig,
}

impl Default for Architecture {
    fn default() -> Self {
        // 3 stages of 24 5x5 filters.
        Architecture {
            stages: 3,
            filters_per_stage: 24,
            filter_size: 5,
            rbf: RbfConfig::default(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("architecture needs at least one stage".into()));
        }
        if self.filter_size % 2 == 0 || self.filter_size < 3 {
            return Err(Error::Config(format!(
                "filter size must be odd and >= 3, got {}",
                self.filter_size
            )));
        }
        let basis_dim = self.filter_size * self.filter_size - 1;
        if self.filters_per_stage == 0 || self.filters_per_stage > basis_dim {
            return Err(Error::Config(format!(
                "filters per stage must be in 1..={} for {}x{} filters, got {}",
                basis_dim, self.filter_size, self.filter_size, self.filters_per_stage
            )));
        }
        if self.rbf.kernels < 2 || !(self.rbf.range > 0.0) || !(self.rbf.bandwidth > 0.0) {
            return Err(Error::Config("invalid rbf configuration".into()));
        }
        Ok(())
    }
}

/// A filter stored as coefficients over the zero-mean orthonormal basis,
/// with the synthesized taps cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedFilter {
    coeffs: Vec<f64>,
    taps: Filter,
}

impl LearnedFilter {
    pub fn from_coeffs(basis: &FilterBasis, coeffs: Vec<f64>) -> Result<Self> {
        let taps = basis.taps_from_coeffs(&coeffs)?;
        Ok(LearnedFilter { coeffs, taps })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn filter(&self) -> &Filter {
        &self.taps
    }

    pub fn set_coeffs(&mut self, basis: &FilterBasis, coeffs: &[f64]) -> Result<()> {
        self.taps = basis.taps_from_coeffs(coeffs)?;
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }
}

/// One diffusion stage: N filters paired with N influence functions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStage {
    filters: Vec<LearnedFilter>,
    influences: Vec<RbfFunction>,
}

impl DiffusionStage {
    pub fn new(filters: Vec<LearnedFilter>, influences: Vec<RbfFunction>) -> Result<Self> {
        if filters.is_empty() || filters.len() != influences.len() {
            return Err(Error::Config(format!(
                "stage needs matching filter/influence counts, got {}/{}",
                filters.len(),
                influences.len()
            )));
        }
        Ok(DiffusionStage {
            filters,
            influences,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn filters(&self) -> &[LearnedFilter] {
        &self.filters
    }

    pub fn influences(&self) -> &[RbfFunction] {
        &self.influences
    }

    pub fn filters_mut(&mut self) -> &mut [LearnedFilter] {
        &mut self.filters
    }

    pub fn influences_mut(&mut self) -> &mut [RbfFunction] {
        &mut self.influences
    }
}

/// One diffusion step: `z_prev - sum_i F_i^T psi_i(F_i z_prev)`.
pub fn diffusion_step(z_prev: &Image, stage: &DiffusionStage) -> Result<Image> {
    let (out, _) = diffusion_step_traced(z_prev, stage, false)?;
    Ok(out)
}

fn diffusion_step_traced(
    z_prev: &Image,
    stage: &DiffusionStage,
    keep_responses: bool,
) -> Result<(Image, Vec<Image>)> {
    let mut out = z_prev.clone();
    let mut responses = Vec::with_capacity(if keep_responses { stage.num_filters() } else { 0 });
    for (lf, psi) in stage.filters.iter().zip(&stage.influences) {
        let response = convolve(z_prev, lf.filter(), BoundaryMode::Circular)?;
        let fired = response.map(|v| psi.eval(v));
        let back = convolve_transpose(&fired, lf.filter())?;
        out.add_scaled(&back, -1.0);
        if keep_responses {
            responses.push(response);
        }
    }
    Ok((out, responses))
}

/// Intermediate state recorded by [`PriorProx::forward`] for the backward pass:
/// the input to every stage and every filter response.
#[derive(Debug, Clone)]
pub struct StageTape {
    inputs: Vec<Image>,
    responses: Vec<Vec<Image>>,
}

impl StageTape {
    pub fn stages(&self) -> usize {
        self.inputs.len()
    }

    pub fn stage_input(&self, k: usize) -> &Image {
        &self.inputs[k]
    }
}

/// Gradient of a scalar loss with respect to one stage's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGrad {
    /// Per filter: gradient over basis coefficients.
    pub filter_coeffs: Vec<Vec<f64>>,
    /// Per filter: gradient over rbf weights.
    pub rbf_weights: Vec<Vec<f64>>,
}

/// Gradient with respect to every prior parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGrad {
    pub stages: Vec<StageGrad>,
}

impl PriorGrad {
    pub fn zeros_like(prior: &PriorProx) -> Self {
        PriorGrad {
            stages: prior
                .stages
                .iter()
                .map(|s| StageGrad {
                    filter_coeffs: s.filters.iter().map(|f| vec![0.0; f.coeffs.len()]).collect(),
                    rbf_weights: s
                        .influences
                        .iter()
                        .map(|p| vec![0.0; p.num_kernels()])
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &PriorGrad) {
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            for (x, y) in a.filter_coeffs.iter_mut().zip(&b.filter_coeffs) {
                for (u, v) in x.iter_mut().zip(y) {
                    *u += v;
                }
            }
            for (x, y) in a.rbf_weights.iter_mut().zip(&b.rbf_weights) {
                for (u, v) in x.iter_mut().zip(y) {
                    *u += v;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for stage in &mut self.stages {
            for c in &mut stage.filter_coeffs {
                for v in c.iter_mut() {
                    *v *= s;
                }
            }
            for w in &mut stage.rbf_weights {
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// The shared prior proximal operator: K chained diffusion stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorProx {
    basis: FilterBasis,
    rbf: RbfConfig,
    stages: Vec<DiffusionStage>,
}

/// Default threshold (intensity units) of the seed shrinkage profile.
const INIT_SHRINK_THRESHOLD: f64 = 30.0;

impl PriorProx {
    pub fn new(basis: FilterBasis, rbf: RbfConfig, stages: Vec<DiffusionStage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("prior needs at least one stage".into()));
        }
        let n = stages[0].num_filters();
        for (k, stage) in stages.iter().enumerate() {
            if stage.num_filters() != n {
                return Err(Error::Config(format!(
                    "stage {k} has {} filters, expected {n}",
                    stage.num_filters()
                )));
            }
            for lf in &stage.filters {
                if lf.coeffs.len() != basis.dim() || lf.filter().size() != basis.size() {
                    return Err(Error::Config("filter does not match basis".into()));
                }
            }
            for psi in &stage.influences {
                if psi.num_kernels() != rbf.kernels
                    || psi.range() != rbf.range
                    || psi.bandwidth() != rbf.bandwidth
                {
                    return Err(Error::Config("influence does not match rbf config".into()));
                }
            }
        }
        Ok(PriorProx { basis, rbf, stages })
    }

    /// Fresh model: stage 1 seeded with low-frequency basis filters and a
    /// scaled soft-shrinkage influence profile; later stages start as exact
    /// identity maps (zero influence) so appending them never changes the
    /// output until they are trained.
    pub fn init(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let basis = FilterBasis::new(arch.filter_size)?;
        let mut stages = Vec::with_capacity(arch.stages);
        stages.push(Self::init_stage(arch, &basis, true)?);
        for _ in 1..arch.stages {
            stages.push(Self::init_stage(arch, &basis, false)?);
        }
        PriorProx::new(basis, arch.rbf, stages)
    }

    /// Builds one freshly initialized stage; see [`PriorProx::init`].
    pub fn init_stage(arch: &Architecture, basis: &FilterBasis, shrinkage: bool) -> Result<DiffusionStage> {
        let filters = (0..arch.filters_per_stage)
            .map(|i| {
                let mut coeffs = vec![0.0; basis.dim()];
                coeffs[i] = 1.0;
                LearnedFilter::from_coeffs(basis, coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        let psi = if shrinkage {
            let scale = 1.0 / (arch.filter_size * arch.filter_size) as f64;
            RbfFunction::fit(arch.rbf.range, arch.rbf.bandwidth, arch.rbf.kernels, |v| {
                scale * v.clamp(-INIT_SHRINK_THRESHOLD, INIT_SHRINK_THRESHOLD)
            })?
        } else {
            RbfFunction::zero(arch.rbf.range, arch.rbf.bandwidth, arch.rbf.kernels)?
        };
        let influences = vec![psi; arch.filters_per_stage];
        DiffusionStage::new(filters, influences)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_filters(&self) -> usize {
        self.stages[0].num_filters()
    }

    pub fn filter_size(&self) -> usize {
        self.basis.size()
    }

    pub fn rbf_config(&self) -> &RbfConfig {
        &self.rbf
    }

    pub fn basis(&self) -> &FilterBasis {
        &self.basis
    }

    pub fn stages(&self) -> &[DiffusionStage] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [DiffusionStage] {
        &mut self.stages
    }

    pub fn push_stage(&mut self, stage: DiffusionStage) -> Result<()> {
        if stage.num_filters() != self.num_filters() {
            return Err(Error::Config("appended stage has wrong filter count".into()));
        }
        self.stages.push(stage);
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            stages: self.num_stages(),
            filters_per_stage: self.num_filters(),
            filter_size: self.filter_size(),
            rbf: self.rbf,
        }
    }

    /// Forward evaluation without derivative bookkeeping.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        let mut z = x.clone();
        for stage in &self.stages {
            z = diffusion_step(&z, stage)?;
        }
        Ok(z)
    }

    /// Forward evaluation recording everything the backward pass needs.
    pub fn forward(&self, x: &Image) -> Result<(Image, StageTape)> {
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut responses = Vec::with_capacity(self.stages.len());
        let mut z = x.clone();
        for stage in &self.stages {
            let (next, resp) = diffusion_step_traced(&z, stage, true)?;
            inputs.push(z);
            responses.push(resp);
            z = next;
        }
        Ok((z, StageTape { inputs, responses }))
    }

    /// Reverse-mode derivatives of [`PriorProx::forward`].
    ///
    /// Given `dL/dz` for the forward output, returns `dL/dx` and the gradient
    /// over every filter coefficient and rbf weight.
    pub fn backward(&self, tape: &StageTape, dl_dz: &Image) -> Result<(Image, PriorGrad)> {
        if tape.inputs.len() != self.stages.len() {
            return Err(Error::InvariantViolation(format!(
                "tape has {} stages, model has {}",
                tape.inputs.len(),
                self.stages.len()
            )));
        }
        let mut grad = PriorGrad::zeros_like(self);
        let mut g = dl_dz.clone();
        for (k, stage) in self.stages.iter().enumerate().rev() {
            if tape.responses[k].len() != stage.num_filters()
                || !tape.inputs[k].same_shape(dl_dz)
            {
                return Err(Error::InvariantViolation(
                    "tape does not match model architecture or image shape".into(),
                ));
            }
            let z_in = &tape.inputs[k];
            let mut g_prev = g.clone();
            for (i, (lf, psi)) in stage.filters.iter().zip(&stage.influences).enumerate() {
                let response = &tape.responses[k][i];
                let u = convolve(&g, lf.filter(), BoundaryMode::Circular)?;

                // One kernel sweep per pixel yields psi(r), psi'(r) u and the
                // weight gradient together.
                let npix = response.len();
                let mut psi_vals = vec![0.0; npix];
                let mut slope_u = vec![0.0; npix];
                let weights = psi.weights();
                let inv_sigma2 = 1.0 / (psi.bandwidth() * psi.bandwidth());
                let dw = &mut grad.stages[k].rbf_weights[i];
                for p in 0..npix {
                    let v = response.data()[p];
                    let up = u.data()[p];
                    let mut val = 0.0;
                    let mut slope = 0.0;
                    psi.for_each_kernel(v, |j, gk| {
                        let w = weights[j];
                        val += w * gk;
                        slope += w * gk * (psi.center(j) - v) * inv_sigma2;
                        dw[j] -= up * gk;
                    });
                    psi_vals[p] = val;
                    slope_u[p] = slope * up;
                }
                let psi_img = Image::from_vec(u.width(), u.height(), u.peak(), psi_vals)?;
                let a_img = Image::from_vec(u.width(), u.height(), u.peak(), slope_u)?;

                // Input gradient: g - sum_i F_i^T (psi'(r_i) .* F_i g).
                let back = convolve_transpose(&a_img, lf.filter())?;
                g_prev.add_scaled(&back, -1.0);

                // Tap gradient: -(corr(psi(r), g) + corr(psi'(r) .* F_i g, z_in)),
                // projected onto the basis coefficients.
                let f = lf.filter().size();
                let lags1 = correlate_lags(&psi_img, &g, f)?;
                let lags2 = correlate_lags(&a_img, z_in, f)?;
                let dtaps: Vec<f64> = lags1
                    .iter()
                    .zip(&lags2)
                    .map(|(a, b)| -(a + b))
                    .collect();
                let dcoeffs = self.basis.project(&dtaps);
                for (dst, src) in grad.stages[k].filter_coeffs[i].iter_mut().zip(&dcoeffs) {
                    *dst += src;
                }
            }
            g = g_prev;
        }
        Ok((g, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            stages: 2,
            filters_per_stage: 2,
            filter_size: 3,
            rbf: RbfConfig {
                kernels: 5,
                range: 100.0,
                bandwidth: 50.0,
            },
        }
    }

    fn random_prior(arch: &Architecture, rng: &mut impl Rng) -> PriorProx {
        let mut prior = PriorProx::init(arch).unwrap();
        let basis = prior.basis().clone();
        for stage in prior.stages_mut() {
            for lf in stage.filters_mut() {
                let coeffs: Vec<f64> = (0..basis.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
                lf.set_coeffs(&basis, &coeffs).unwrap();
            }
            for psi in stage.influences_mut() {
                for w in psi.weights_mut() {
                    *w = rng.random_range(-0.5..0.5);
                }
            }
        }
        prior
    }

    fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> Image {
        Image::from_fn(w, h, 255.0, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn zero_influence_is_identity() {
        let mut arch = tiny_arch();
        arch.stages = 3;
        let basis = FilterBasis::new(3).unwrap();
        let stages = (0..3)
            .map(|_| PriorProx::init_stage(&arch, &basis, false).unwrap())
            .collect();
        let prior = PriorProx::new(basis, arch.rbf, stages).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_image(10, 8, &mut rng);
        let z = prior.apply(&x).unwrap();
        assert_eq!(z, x);
        // forward and a zero upstream gradient give zero parameter gradients
        let (_, tape) = prior.forward(&x).unwrap();
        let zero = Image::zeros(10, 8, 255.0);
        let (dx, grad) = prior.backward(&tape, &zero).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        for s in &grad.stages {
            assert!(s.filter_coeffs.iter().flatten().all(|&v| v == 0.0));
            assert!(s.rbf_weights.iter().flatten().all(|&v| v == 0.0));
        }
        // and dL/dx passes straight through for the identity model
        let g = random_image(10, 8, &mut rng);
        let (dx, _) = prior.backward(&tape, &g).unwrap();
        assert_eq!(dx, g);
    }

    #[test]
    fn single_stage_equals_diffusion_step() {
        let mut arch = tiny_arch();
        arch.stages = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let prior = random_prior(&arch, &mut rng);
        let x = random_image(9, 9, &mut rng);
        let direct = diffusion_step(&x, &prior.stages()[0]).unwrap();
        let applied = prior.apply(&x).unwrap();
        assert_eq!(direct, applied);
    }

    #[test]
    fn chained_stages_equal_manual_composition() {
        let mut arch = tiny_arch();
        arch.stages = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let prior = random_prior(&arch, &mut rng);
        let x = random_image(12, 7, &mut rng);
        let mut manual = x.clone();
        for stage in prior.stages() {
            manual = diffusion_step(&manual, stage).unwrap();
        }
        let (z, _) = prior.forward(&x).unwrap();
        assert_eq!(manual, z);
    }

    #[test]
    fn diffusion_step_matches_literal_formula() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let prior = random_prior(&arch, &mut rng);
        let stage = &prior.stages()[0];
        let z_prev = random_image(16, 16, &mut rng);

        // Literal reimplementation from the public primitives.
        let mut expect = z_prev.clone();
        for (lf, psi) in stage.filters().iter().zip(stage.influences()) {
            let fired = convolve(&z_prev, lf.filter(), BoundaryMode::Circular)
                .unwrap()
                .map(|v| psi.eval(v));
            let back = convolve_transpose(&fired, lf.filter()).unwrap();
            expect.add_scaled(&back, -1.0);
        }
        let got = diffusion_step(&z_prev, stage).unwrap();
        assert_eq!(got, expect, "diffusion step must match the composed formula bit-exactly");
    }

    #[test]
    fn constant_images_stay_constant() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let prior = random_prior(&arch, &mut rng);
        let x = Image::constant(8, 8, 255.0, 120.0);
        let z = prior.apply(&x).unwrap();
        let first = z.data()[0];
        for &v in z.data() {
            assert!((v - first).abs() < 1e-9, "not constant: {v} vs {first}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_over_all_parameters() {
        // Tiny model, full parameter sweep, scalar loss L = <c, forward(x)>.
        let arch = Architecture {
            stages: 2,
            filters_per_stage: 2,
            filter_size: 3,
            rbf: RbfConfig {
                kernels: 5,
                range: 120.0,
                bandwidth: 60.0,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let prior = random_prior(&arch, &mut rng);
        let x = random_image(10, 10, &mut rng);
        let c = random_image(10, 10, &mut rng);

        let loss = |p: &PriorProx| p.apply(&x).unwrap().dot(&c);
        let (_, tape) = prior.forward(&x).unwrap();
        let (dx, grad) = prior.backward(&tape, &c).unwrap();

        let step = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);

        // filter coefficients
        for k in 0..2 {
            for i in 0..2 {
                for q in 0..prior.basis().dim() {
                    let mut hi = prior.clone();
                    let mut lo = prior.clone();
                    let basis = prior.basis().clone();
                    let mut c_hi = hi.stages()[k].filters()[i].coeffs().to_vec();
                    c_hi[q] += step;
                    hi.stages_mut()[k].filters_mut()[i].set_coeffs(&basis, &c_hi).unwrap();
                    let mut c_lo = lo.stages()[k].filters()[i].coeffs().to_vec();
                    c_lo[q] -= step;
                    lo.stages_mut()[k].filters_mut()[i].set_coeffs(&basis, &c_lo).unwrap();
                    let fd = (loss(&hi) - loss(&lo)) / (2.0 * step);
                    let an = grad.stages[k].filter_coeffs[i][q];
                    assert!(rel(an, fd) < 1e-5, "coeff k={k} i={i} q={q}: {an} vs {fd}");
                }
            }
        }
        // rbf weights
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..5 {
                    let mut hi = prior.clone();
                    let mut lo = prior.clone();
                    hi.stages_mut()[k].influences_mut()[i].weights_mut()[j] += step;
                    lo.stages_mut()[k].influences_mut()[i].weights_mut()[j] -= step;
                    let fd = (loss(&hi) - loss(&lo)) / (2.0 * step);
                    let an = grad.stages[k].rbf_weights[i][j];
                    assert!(rel(an, fd) < 1e-5, "weight k={k} i={i} j={j}: {an} vs {fd}");
                }
            }
        }
        // input image (directional)
        let mut dir_rng = ChaCha8Rng::seed_from_u64(37);
        let dir = random_image(10, 10, &mut dir_rng).map(|v| v / 255.0 - 0.5);
        let mut x_hi = x.clone();
        x_hi.add_scaled(&dir, step);
        let mut x_lo = x.clone();
        x_lo.add_scaled(&dir, -step);
        let fd = (prior.apply(&x_hi).unwrap().dot(&c) - prior.apply(&x_lo).unwrap().dot(&c))
            / (2.0 * step);
        let an = dx.dot(&dir);
        assert!(rel(an, fd) < 1e-6, "input gradient: {an} vs {fd}");
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let prior = random_prior(&arch, &mut rng);
        let mut bigger = tiny_arch();
        bigger.stages = 3;
        let other = random_prior(&bigger, &mut rng);
        let x = random_image(8, 8, &mut rng);
        let (_, tape) = prior.forward(&x).unwrap();
        let g = random_image(8, 8, &mut rng);
        assert!(matches!(
            other.backward(&tape, &g),
            Err(Error::InvariantViolation(_))
        ));
    }
}
