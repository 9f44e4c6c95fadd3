//! The recurrent half-quadratic-splitting solver.
//!
//! Each iteration applies the shared prior proximal operator, then the task's
//! closed-form data proximal operator under a growing penalty schedule. The
//! same model parameters are used at every iteration. Additional plug-in
//! priors (external denoisers) contribute extra consensus terms to the data
//! solve.

use std::io::Write;

use crate::dataprox::{solve_consensus, Mask, Sensing, TaskSpec};
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::model::ModelParams;

/// Solver schedule and options.
#[derive(Debug, Clone)]
pub struct HqsConfig {
    /// Number of HQS iterations (T).
    pub iterations: usize,
    /// Initial penalty weight, `rho^1`.
    pub rho0: f64,
    /// Per-iteration penalty growth; 2 doubles the weight each iteration.
    pub rho_growth: f64,
    /// Test-time fidelity override; replaces the trained per-class lambda.
    pub lambda_override: Option<f64>,
    /// Retain per-iteration images in the trace (memory heavy).
    pub keep_images: bool,
}

impl Default for HqsConfig {
    fn default() -> Self {
        HqsConfig {
            iterations: 3,
            rho0: 1.0,
            rho_growth: 2.0,
            lambda_override: None,
            keep_images: false,
        }
    }
}

impl HqsConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        HqsConfig {
            iterations,
            ..HqsConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be >= 1".into()));
        }
        if !(self.rho0 > 0.0) || !(self.rho_growth >= 1.0) {
            return Err(Error::Config(format!(
                "invalid penalty schedule (rho0 {}, growth {})",
                self.rho0, self.rho_growth
            )));
        }
        if let Some(l) = self.lambda_override {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda override must be positive, got {l}")));
            }
        }
        Ok(())
    }

    /// Penalty weight at iteration `t` (1-based): `rho0 * growth^(t-1)`.
    pub fn rho_at(&self, t: usize) -> f64 {
        self.rho0 * self.rho_growth.powi(t as i32 - 1)
    }
}

/// Per-iteration record of the solver state.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub t: usize,
    pub rho: f64,
    /// Relative consensus gap `||z - x|| / ||x||`.
    pub consensus_gap: f64,
    /// PSNR against the reference, when one was supplied.
    pub psnr: Option<f64>,
    pub x: Option<Image>,
    pub z: Option<Image>,
}

/// Full run record: one entry per iteration plus run-level metadata.
#[derive(Debug, Clone)]
pub struct HqsTrace {
    pub records: Vec<IterRecord>,
    /// How `x^0` was produced ("observation" or "nearest_fill").
    pub init_method: &'static str,
    /// The fidelity weight actually used.
    pub lambda: f64,
}

impl HqsTrace {
    /// Writes one structured line per iteration: t, rho, consensus gap, psnr.
    pub fn write_report(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            let line = serde_json::json!({
                "t": r.t,
                "rho": r.rho,
                "consensus_gap": r.consensus_gap,
                "psnr": r.psnr,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Per-iteration relative consensus gaps `||z^t - x^t|| / ||x^t||`.
pub fn consensus_gap(trace: &HqsTrace) -> Result<Vec<f64>> {
    if trace.records.is_empty() {
        return Err(Error::RejectedInput("empty trace".into()));
    }
    Ok(trace.records.iter().map(|r| r.consensus_gap).collect())
}

/// An external prior plugged into the solver: a denoiser invoked as
/// `denoiser(x, strength)` with `strength = tau / rho_s^t`.
pub struct PluginPrior {
    pub denoiser: Box<dyn Fn(&Image, f64) -> Image + Send + Sync>,
    /// Weight of the external prior in the objective.
    pub tau: f64,
    /// Initial consensus weight of this plugin's slack variable.
    pub rho0: f64,
    /// Growth of the plugin consensus weight, same doubling form as the main schedule.
    pub rho_growth: f64,
}

impl PluginPrior {
    pub fn new(denoiser: Box<dyn Fn(&Image, f64) -> Image + Send + Sync>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("plugin tau must be positive, got {tau}")));
        }
        Ok(PluginPrior {
            denoiser,
            tau,
            rho0: 1.0,
            rho_growth: 2.0,
        })
    }

    /// Built-in smoothing plugin: Gaussian blur with spatial sigma
    /// `sigma_scale * strength`.
    pub fn gaussian_smoother(tau: f64, sigma_scale: f64) -> Result<Self> {
        PluginPrior::new(
            Box::new(move |img, strength| gaussian_blur(img, sigma_scale * strength)),
            tau,
        )
    }

    fn rho_at(&self, t: usize) -> f64 {
        self.rho0 * self.rho_growth.powi(t as i32 - 1)
    }
}

impl std::fmt::Debug for PluginPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginPrior")
            .field("tau", &self.tau)
            .field("rho0", &self.rho0)
            .field("rho_growth", &self.rho_growth)
            .finish()
    }
}

/// Separable circular Gaussian blur, support truncated at three sigma.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let max_r = (img.width().min(img.height()) - 1) / 2;
    let r = ((3.0 * sigma).ceil() as usize).clamp(1, max_r.max(1));
    let mut kernel = Vec::with_capacity(2 * r + 1);
    for d in -(r as isize)..=(r as isize) {
        kernel.push((-(d * d) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (w, h) = (img.width(), img.height());
    // horizontal pass
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ki, d) in (-(r as isize)..=(r as isize)).enumerate() {
                let sx = (x - d).rem_euclid(w as isize) as usize;
                acc += kernel[ki] * img.data()[y * w + sx];
            }
            tmp[y * w + x as usize] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, d) in (-(r as isize)..=(r as isize)).enumerate() {
                let sy = (y - d).rem_euclid(h as isize) as usize;
                acc += kernel[ki] * tmp[sy as usize * w + x];
            }
            out[y as usize * w + x] = acc;
        }
    }
    Image::from_vec(w, h, img.peak(), out).expect("blur produced invalid image")
}

/// Deterministic nearest-observed-pixel fill used to initialize inpainting:
/// multi-source BFS from the observed pixels, 4-connected, scan-order ties.
pub fn nearest_fill(b: &Image, mask: &Mask) -> Image {
    let (w, h) = (b.width(), b.height());
    let mut out = b.clone();
    let mut source: Vec<i32> = vec![-1; w * h];
    let mut queue = std::collections::VecDeque::new();
    for p in 0..w * h {
        if mask.data()[p] == 1 {
            source[p] = p as i32;
            queue.push_back(p);
        }
    }
    if queue.is_empty() {
        return out;
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = (p % w, p / w);
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx < w && ny < h {
                let q = ny * w + nx;
                if source[q] < 0 {
                    source[q] = source[p];
                    queue.push_back(q);
                }
            }
        }
    }
    for p in 0..w * h {
        if mask.data()[p] == 0 {
            out.data_mut()[p] = b.data()[source[p] as usize];
        }
    }
    out
}

fn resolve_lambda(task: &TaskSpec, model: &ModelParams, cfg: &HqsConfig) -> Result<f64> {
    if let Some(l) = cfg.lambda_override {
        return Ok(l);
    }
    model.lambda_for(&task.class_id).ok_or_else(|| {
        Error::Config(format!(
            "no trained lambda for class '{}' and no override given",
            task.class_id
        ))
    })
}

/// Restores `b` under `task` with the trained model; returns the final
/// estimate and the per-iteration trace.
pub fn restore(
    b: &Image,
    task: &TaskSpec,
    model: &ModelParams,
    cfg: &HqsConfig,
) -> Result<(Image, HqsTrace)> {
    restore_with_options(b, task, model, cfg, &[], None)
}

/// [`restore`] with additional plug-in priors composed into the data solve.
pub fn restore_with_plugins(
    b: &Image,
    task: &TaskSpec,
    model: &ModelParams,
    cfg: &HqsConfig,
    plugins: &[PluginPrior],
) -> Result<(Image, HqsTrace)> {
    restore_with_options(b, task, model, cfg, plugins, None)
}

/// Full-control entry point: plug-ins plus an optional reference image for
/// per-iteration PSNR records.
pub fn restore_with_options(
    b: &Image,
    task: &TaskSpec,
    model: &ModelParams,
    cfg: &HqsConfig,
    plugins: &[PluginPrior],
    reference: Option<&Image>,
) -> Result<(Image, HqsTrace)> {
    cfg.validate()?;
    task.validate_for(b)?;
    let lambda = resolve_lambda(task, model, cfg)?;
    if b.peak() != model.peak {
        log::warn!(
            "image peak {} differs from model peak {}; fidelity weights assume the model's range",
            b.peak(),
            model.peak
        );
    }

    let (x0, init_method) = match &task.sensing {
        Sensing::BinaryMask(mask) => (nearest_fill(b, mask), "nearest_fill"),
        _ => (b.clone(), "observation"),
    };

    let mut x = x0;
    let mut records = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        let rho = cfg.rho_at(t);
        let z = model.prior.apply(&x)?;
        let mut plugin_values = Vec::with_capacity(plugins.len());
        for plugin in plugins {
            let rho_s = plugin.rho_at(t);
            let v = (plugin.denoiser)(&x, plugin.tau / rho_s);
            if !v.same_shape(&x) {
                return Err(Error::InvariantViolation(format!(
                    "plugin denoiser returned {}, expected {}",
                    v.shape_string(),
                    x.shape_string()
                )));
            }
            plugin_values.push((rho_s, v));
        }
        let mut terms: Vec<(f64, &Image)> = Vec::with_capacity(1 + plugin_values.len());
        terms.push((rho, &z));
        terms.extend(plugin_values.iter().map(|(w, v)| (*w, v)));
        let x_next = solve_consensus(&task.sensing, b, lambda, &terms)?;

        let mut gap_num = 0.0;
        for (zv, xv) in z.data().iter().zip(x_next.data()) {
            gap_num += (zv - xv) * (zv - xv);
        }
        let x_norm = x_next.norm();
        let consensus = if x_norm > 0.0 {
            gap_num.sqrt() / x_norm
        } else {
            0.0
        };
        let psnr_t = match reference {
            Some(r) => Some(psnr(&x_next, r)?),
            None => None,
        };
        records.push(IterRecord {
            t,
            rho,
            consensus_gap: consensus,
            psnr: psnr_t,
            x: cfg.keep_images.then(|| x_next.clone()),
            z: cfg.keep_images.then(|| z.clone()),
        });
        x = x_next;
    }
    Ok((
        x,
        HqsTrace {
            records,
            init_method,
            lambda,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprox::{solve_identity, DataProxInputs};
    use crate::filter::Filter;
    use crate::prior::{Architecture, PriorProx, RbfConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn zero_prior_model() -> ModelParams {
        let arch = Architecture {
            stages: 1,
            filters_per_stage: 2,
            filter_size: 3,
            rbf: RbfConfig {
                kernels: 5,
                range: 100.0,
                bandwidth: 50.0,
            },
        };
        let basis = crate::filter::FilterBasis::new(3).unwrap();
        let stage = PriorProx::init_stage(&arch, &basis, false).unwrap();
        let prior = PriorProx::new(basis, arch.rbf, vec![stage]).unwrap();
        let mut m = ModelParams::new(prior);
        m.set_lambda("d", 1.0).unwrap();
        m
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 255.0, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn data_dominated_limit_returns_observation() {
        let model = zero_prior_model();
        let b = random_image(8, 8, 61);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig {
            iterations: 1,
            lambda_override: Some(1e9),
            ..HqsConfig::default()
        };
        let (x, _) = restore(&b, &task, &model, &cfg).unwrap();
        for (a, bb) in x.data().iter().zip(b.data()) {
            assert!((a - bb).abs() < 1e-6);
        }
    }

    #[test]
    fn clean_consensus_fixed_point() {
        // zero-weight prior + identity task: z^1 = x^0 = b so x^1 = b.
        let model = zero_prior_model();
        let b = random_image(6, 6, 62);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig::with_iterations(1);
        let (x, _) = restore(&b, &task, &model, &cfg).unwrap();
        for (a, bb) in x.data().iter().zip(b.data()) {
            assert!((a - bb).abs() < 1e-12 * 255.0);
        }
    }

    #[test]
    fn matches_manual_composition_bit_exactly() {
        let mut model = zero_prior_model();
        // non-trivial prior weights
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for stage in model.prior.stages_mut() {
            for psi in stage.influences_mut() {
                for w in psi.weights_mut() {
                    *w = rng.random_range(-0.2..0.2);
                }
            }
        }
        let b = random_image(10, 10, 64);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig::with_iterations(3);
        let (x, _) = restore(&b, &task, &model, &cfg).unwrap();

        let lambda = model.lambda_for("d").unwrap();
        let mut manual = b.clone();
        for t in 1..=3 {
            let rho = cfg.rho_at(t);
            let z = model.prior.apply(&manual).unwrap();
            manual = solve_identity(&DataProxInputs::new(&b, &z, lambda, rho).unwrap()).unwrap();
        }
        assert_eq!(x, manual);
    }

    #[test]
    fn empty_plugin_list_is_bitwise_identical() {
        let model = zero_prior_model();
        let b = random_image(9, 9, 65);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig::with_iterations(3);
        let (plain, _) = restore(&b, &task, &model, &cfg).unwrap();
        let (with, _) = restore_with_plugins(&b, &task, &model, &cfg, &[]).unwrap();
        assert_eq!(plain, with);
    }

    #[test]
    fn identity_plugin_scalar_arithmetic() {
        // identity denoiser plugin, zero prior, constant images: the update
        // is x^t = (lambda b + rho^t z^t + rho_s^t x^{t-1}) / (lambda + rho^t + rho_s^t).
        let model = zero_prior_model();
        let b = Image::constant(6, 6, 255.0, 90.0);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig::with_iterations(2);
        let plugin =
            PluginPrior::new(Box::new(|img: &Image, _s: f64| img.clone()), 5.0).unwrap();
        let (x, _) = restore_with_plugins(&b, &task, &model, &cfg, &[plugin]).unwrap();

        let lambda = 1.0;
        let mut xv = 90.0f64;
        for t in 1..=2u32 {
            let rho = 2f64.powi(t as i32 - 1);
            let rho_s = 2f64.powi(t as i32 - 1);
            let zv = xv; // zero prior
            let vv = xv; // identity denoiser
            xv = (lambda * 90.0 + rho * zv + rho_s * vv) / (lambda + rho + rho_s);
        }
        for &v in x.data() {
            assert!((v - xv).abs() < 1e-10, "{v} vs {xv}");
        }
    }

    #[test]
    fn schedule_is_bit_exact() {
        let model = zero_prior_model();
        let b = random_image(6, 6, 66);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig {
            iterations: 5,
            rho0: 0.7,
            rho_growth: 1.6,
            ..HqsConfig::default()
        };
        let (_, trace) = restore(&b, &task, &model, &cfg).unwrap();
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.t, i + 1);
            assert_eq!(r.rho, 0.7 * 1.6f64.powi(i as i32));
        }
    }

    #[test]
    fn override_changes_lambda_but_not_z1() {
        let mut model = zero_prior_model();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for stage in model.prior.stages_mut() {
            for psi in stage.influences_mut() {
                for w in psi.weights_mut() {
                    *w = rng.random_range(-0.2..0.2);
                }
            }
        }
        let b = random_image(8, 8, 68);
        let task = TaskSpec::denoise("d", 15.0);
        let mut cfg = HqsConfig::with_iterations(2);
        cfg.keep_images = true;
        let (_, t1) = restore(&b, &task, &model, &cfg).unwrap();
        cfg.lambda_override = Some(7.0);
        let (_, t2) = restore(&b, &task, &model, &cfg).unwrap();
        assert_eq!(t2.lambda, 7.0);
        // z^1 depends only on x^0, not on lambda
        assert_eq!(t1.records[0].z, t2.records[0].z);
        assert_ne!(t1.records[0].x, t2.records[0].x);
    }

    #[test]
    fn missing_lambda_is_a_config_error() {
        let model = zero_prior_model();
        let b = random_image(6, 6, 69);
        let task = TaskSpec::denoise("unseen", 15.0);
        let cfg = HqsConfig::with_iterations(1);
        assert!(matches!(
            restore(&b, &task, &model, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn consensus_gap_vanishes_as_lambda_vanishes() {
        let model = zero_prior_model();
        let b = random_image(8, 8, 70);
        let psf = Filter::new(3, vec![0.0, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0, 0.2, 0.0]).unwrap();
        let task = TaskSpec::deconv("d", psf, 3.0);
        let cfg = HqsConfig {
            iterations: 1,
            lambda_override: Some(1e-12),
            ..HqsConfig::default()
        };
        let (_, trace) = restore(&b, &task, &model, &cfg).unwrap();
        let gaps = consensus_gap(&trace).unwrap();
        assert!(gaps[0] < 1e-9, "gap {}", gaps[0]);
    }

    #[test]
    fn trace_gap_matches_retained_images() {
        let model = zero_prior_model();
        let b = random_image(8, 8, 71);
        let psf = Filter::new(3, vec![0.1; 9]).unwrap();
        let task = TaskSpec::deconv("d", psf, 3.0);
        let mut cfg = HqsConfig::with_iterations(3);
        cfg.keep_images = true;
        let (_, trace) = restore(&b, &task, &model, &cfg).unwrap();
        for r in &trace.records {
            let z = r.z.as_ref().unwrap();
            let x = r.x.as_ref().unwrap();
            let mut num = 0.0;
            for (a, b) in z.data().iter().zip(x.data()) {
                num += (a - b) * (a - b);
            }
            let expect = num.sqrt() / x.norm();
            assert_eq!(r.consensus_gap, expect);
        }
    }

    #[test]
    fn plugin_shape_mismatch_is_invariant_violation() {
        let model = zero_prior_model();
        let b = random_image(8, 8, 72);
        let task = TaskSpec::denoise("d", 15.0);
        let cfg = HqsConfig::with_iterations(1);
        let bad = PluginPrior::new(
            Box::new(|_img: &Image, _s: f64| Image::zeros(3, 3, 255.0)),
            1.0,
        )
        .unwrap();
        assert!(matches!(
            restore_with_plugins(&b, &task, &model, &cfg, &[bad]),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn nearest_fill_is_deterministic_and_exact_on_observed() {
        let b = random_image(10, 10, 73);
        let mut mdata = vec![0u8; 100];
        for p in [5usize, 37, 81, 99] {
            mdata[p] = 1;
        }
        let mask = Mask::new(10, 10, mdata).unwrap();
        let f1 = nearest_fill(&b, &mask);
        let f2 = nearest_fill(&b, &mask);
        assert_eq!(f1, f2);
        for p in [5usize, 37, 81, 99] {
            assert_eq!(f1.data()[p], b.data()[p]);
        }
        // every filled value is one of the observed values
        let observed: Vec<f64> = [5usize, 37, 81, 99].iter().map(|&p| b.data()[p]).collect();
        for &v in f1.data() {
            assert!(observed.contains(&v));
        }
    }

    #[test]
    fn gaussian_blur_preserves_mean() {
        let img = random_image(16, 16, 74);
        let blurred = gaussian_blur(&img, 1.5);
        let mean = |im: &Image| im.data().iter().sum::<f64>() / im.len() as f64;
        assert!((mean(&img) - mean(&blurred)).abs() < 1e-9);
    }
}
