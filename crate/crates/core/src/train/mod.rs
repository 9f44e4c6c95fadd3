//! End-to-end training of the shared prior and the per-class fidelity
//! weights.
//!
//! The loss is the negative mean PSNR of the unrolled solver's outputs.
//! Gradients flow through every iteration: the data solve contributes the
//! fidelity-weight partials, the prior contributes the parameter partials,
//! and the slack dependence chains each iteration to the previous one.
//! Optimization is full-batch L-BFGS under the progressive schedule: stages
//! are trained greedily at one solver iteration, then everything is refined
//! jointly while the unroll depth grows.

pub mod synth;

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::dataprox::{data_prox_backward, solve_consensus, DataProxInputs, Sensing, TaskSpec};
use crate::error::{Error, Result};
use crate::hqs::nearest_fill;
use crate::image::{psnr, Image};
use crate::lbfgs;
use crate::model::{LossGrad, ModelParams, ParamSelection};
use crate::prior::{Architecture, PriorProx};

/// PSNR is clamped at this value inside the loss so near-perfect
/// reconstructions keep it finite; the gradient is zero at the clamp.
pub const PSNR_CAP_DB: f64 = 60.0;

/// One supervised example.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub degraded: Image,
    pub ground_truth: Image,
    pub task: TaskSpec,
}

/// Progressive-training settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: Architecture,
    /// Final unroll depth.
    pub t_final: usize,
    /// Optimizer iterations per greedy stage phase.
    pub greedy_iters: usize,
    /// Optimizer iterations per refinement phase.
    pub refine_iters: usize,
    pub optimizer: lbfgs::Options,
    /// Penalty schedule used during training.
    pub rho0: f64,
    pub rho_growth: f64,
    pub seed: u64,
    /// Write a model checkpoint after every phase.
    pub checkpoint_dir: Option<PathBuf>,
    /// Append per-iteration loss/gradient lines here.
    pub log_path: Option<PathBuf>,
    /// Experimental: optimize on random subsets of this size, restarting the
    /// optimizer every epoch. Full-batch when unset.
    pub minibatch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            t_final: 3,
            greedy_iters: 200,
            refine_iters: 100,
            optimizer: lbfgs::Options::default(),
            rho0: 1.0,
            rho_growth: 2.0,
            seed: 0,
            checkpoint_dir: None,
            log_path: None,
            minibatch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.t_final == 0 {
            return Err(Error::Config("t_final must be >= 1".into()));
        }
        if !(self.rho0 > 0.0) || !(self.rho_growth >= 1.0) {
            return Err(Error::Config("invalid training penalty schedule".into()));
        }
        Ok(())
    }
}

fn check_classes(model: &ModelParams, samples: &[TrainingSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    for s in samples {
        if model.lambda_for(&s.task.class_id).is_none() {
            return Err(Error::Config(format!(
                "no lambda entry for class '{}'",
                s.task.class_id
            )));
        }
        if !s.degraded.same_shape(&s.ground_truth) && !matches!(s.task.sensing, Sensing::DenseMatrix(_)) {
            return Err(Error::dims(
                "training sample",
                s.ground_truth.shape_string(),
                s.degraded.shape_string(),
            ));
        }
    }
    Ok(())
}

fn initial_x(sample: &TrainingSample) -> Image {
    match &sample.task.sensing {
        Sensing::BinaryMask(mask) => nearest_fill(&sample.degraded, mask),
        _ => sample.degraded.clone(),
    }
}

/// Unrolled forward pass for one sample; returns the capped PSNR.
fn sample_psnr(
    model: &ModelParams,
    sample: &TrainingSample,
    t_iters: usize,
    rho0: f64,
    rho_growth: f64,
) -> Result<f64> {
    let lambda = model
        .lambda_for(&sample.task.class_id)
        .ok_or_else(|| Error::Config(format!("no lambda for class '{}'", sample.task.class_id)))?;
    let mut x = initial_x(sample);
    for t in 1..=t_iters {
        let rho = rho0 * rho_growth.powi(t as i32 - 1);
        let z = model.prior.apply(&x)?;
        x = solve_consensus(&sample.task.sensing, &sample.degraded, lambda, &[(rho, &z)])?;
    }
    Ok(psnr(&x, &sample.ground_truth)?.min(PSNR_CAP_DB))
}

/// Negative mean capped PSNR over the sample set at unroll depth `t_iters`,
/// under the default doubling schedule.
pub fn loss(model: &ModelParams, samples: &[TrainingSample], t_iters: usize) -> Result<f64> {
    loss_with_schedule(model, samples, t_iters, 1.0, 2.0)
}

pub fn loss_with_schedule(
    model: &ModelParams,
    samples: &[TrainingSample],
    t_iters: usize,
    rho0: f64,
    rho_growth: f64,
) -> Result<f64> {
    check_classes(model, samples)?;
    let psnrs: Result<Vec<f64>> = samples
        .par_iter()
        .map(|s| sample_psnr(model, s, t_iters, rho0, rho_growth))
        .collect();
    let psnrs = psnrs?;
    Ok(-psnrs.iter().sum::<f64>() / samples.len() as f64)
}

/// Per-sample reverse-mode pass; returns the capped PSNR and the gradient of
/// `-psnr` over the full parameter set.
fn sample_grad(
    model: &ModelParams,
    sample: &TrainingSample,
    t_iters: usize,
    rho0: f64,
    rho_growth: f64,
) -> Result<(f64, LossGrad)> {
    let lambda = model
        .lambda_for(&sample.task.class_id)
        .ok_or_else(|| Error::Config(format!("no lambda for class '{}'", sample.task.class_id)))?;
    let b = &sample.degraded;
    let gt = &sample.ground_truth;

    // forward, keeping tapes and slack images
    let mut x = initial_x(sample);
    let mut tapes = Vec::with_capacity(t_iters);
    let mut slacks = Vec::with_capacity(t_iters);
    for t in 1..=t_iters {
        let rho = rho0 * rho_growth.powi(t as i32 - 1);
        let (z, tape) = model.prior.forward(&x)?;
        x = solve_consensus(&sample.task.sensing, b, lambda, &[(rho, &z)])?;
        tapes.push(tape);
        slacks.push(z);
    }

    let mut grad = LossGrad::zeros_like(model);
    let raw_psnr = psnr(&x, gt)?;
    let capped = raw_psnr.min(PSNR_CAP_DB);
    if raw_psnr >= PSNR_CAP_DB {
        // flat region of the clamp
        return Ok((capped, grad));
    }

    // d(-psnr)/dx = 20 (x - gt) / (P * MSE * ln 10)
    let mse = x.mse(gt)?;
    let npix = x.len() as f64;
    let scale = 20.0 / (npix * mse * std::f64::consts::LN_10);
    let mut g = x.zip_map(gt, |xv, gv| scale * (xv - gv))?;

    let mut dlambda_total = 0.0;
    for t in (1..=t_iters).rev() {
        let rho = rho0 * rho_growth.powi(t as i32 - 1);
        let inputs = DataProxInputs::new(b, &slacks[t - 1], lambda, rho)?;
        let (dz, dlambda) = data_prox_backward(&inputs, &g, &sample.task)?;
        dlambda_total += dlambda;
        let (dx, dtheta) = model.prior.backward(&tapes[t - 1], &dz)?;
        grad.prior.add_assign(&dtheta);
        g = dx;
    }
    // chain rule through lambda = exp(log_lambda)
    *grad
        .log_lambdas
        .get_mut(&sample.task.class_id)
        .expect("class checked above") = dlambda_total * lambda;
    Ok((capped, grad))
}

/// Loss and its exact gradient over every parameter, default schedule.
pub fn loss_grad(
    model: &ModelParams,
    samples: &[TrainingSample],
    t_iters: usize,
) -> Result<(f64, LossGrad)> {
    loss_grad_with_schedule(model, samples, t_iters, 1.0, 2.0)
}

pub fn loss_grad_with_schedule(
    model: &ModelParams,
    samples: &[TrainingSample],
    t_iters: usize,
    rho0: f64,
    rho_growth: f64,
) -> Result<(f64, LossGrad)> {
    check_classes(model, samples)?;
    let per_sample: Result<Vec<(f64, LossGrad)>> = samples
        .par_iter()
        .map(|s| sample_grad(model, s, t_iters, rho0, rho_growth))
        .collect();
    let per_sample = per_sample?;
    // deterministic reduction in sample order
    let mut total = LossGrad::zeros_like(model);
    let mut psnr_sum = 0.0;
    for (p, g) in &per_sample {
        psnr_sum += p;
        total.add_assign(g);
    }
    let inv = 1.0 / samples.len() as f64;
    total.scale(inv);
    Ok((-psnr_sum * inv, total))
}

fn initial_lambdas(model: &mut ModelParams, samples: &[TrainingSample]) -> Result<()> {
    use std::collections::BTreeMap;
    let mut sigma_by_class: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = sigma_by_class.entry(&s.task.class_id).or_insert((0.0, 0));
        e.0 += s.task.noise_sigma;
        e.1 += 1;
    }
    for (class, (sum, count)) in sigma_by_class {
        let mean_sigma = sum / count as f64;
        // noise-matched seed: lambda ~ 1/sigma^2 in intensity units
        let lambda = 1.0 / mean_sigma.max(1.0).powi(2);
        model.set_lambda(class.to_owned(), lambda)?;
    }
    Ok(())
}

struct PhaseLogger {
    path: Option<PathBuf>,
}

impl PhaseLogger {
    fn log(&self, phase: &str, outcome: &lbfgs::Outcome) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for it in &outcome.history {
            let line = serde_json::json!({
                "phase": phase,
                "iteration": it.iteration,
                "loss": it.f,
                "grad_norm": it.grad_norm,
                "step": it.step,
                "fn_evals": it.fn_evals,
            });
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Runs one optimization phase over the selected parameters, restarting once
/// with damped memory if the line search stalls.
fn run_phase(
    model: &mut ModelParams,
    samples: &[TrainingSample],
    sel: &ParamSelection,
    t_iters: usize,
    iters: usize,
    cfg: &TrainConfig,
    phase: &str,
    logger: &PhaseLogger,
    restarts: &mut usize,
) -> Result<()> {
    if iters == 0 {
        return Ok(());
    }
    let subset_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15 ^ (t_iters as u64); // per-phase stream
    let batches: Vec<Vec<usize>> = match cfg.minibatch {
        None => vec![(0..samples.len()).collect()],
        Some(m) => {
            // experimental: one epoch of `epoch_len` iterations per subset
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(subset_seed);
            let epoch_len = 10usize;
            let epochs = iters.div_ceil(epoch_len);
            (0..epochs)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..samples.len()).collect();
                    idx.shuffle(&mut rng);
                    idx.truncate(m.max(1).min(samples.len()));
                    idx.sort_unstable();
                    idx
                })
                .collect()
        }
    };
    let iters_per_batch = iters.div_ceil(batches.len());

    for (epoch, batch_idx) in batches.iter().enumerate() {
        let batch: Vec<TrainingSample> = batch_idx.iter().map(|&i| samples[i].clone()).collect();
        let mut work = model.clone();
        let non_finite = std::cell::Cell::new(false);
        let objective = |x: &[f64], g: &mut [f64]| -> f64 {
            if work.inject(sel, x).is_err() {
                g.fill(0.0);
                return f64::INFINITY;
            }
            match loss_grad_with_schedule(&work, &batch, t_iters, cfg.rho0, cfg.rho_growth) {
                Ok((f, grad)) => {
                    g.copy_from_slice(&work.extract_grad(&grad, sel));
                    if !f.is_finite() {
                        non_finite.set(true);
                    }
                    f
                }
                Err(_) => {
                    g.fill(0.0);
                    non_finite.set(true);
                    f64::INFINITY
                }
            }
        };

        let x0 = model.extract(sel);
        let mut opts = cfg.optimizer.clone();
        opts.max_iterations = iters_per_batch;
        let mut objective = objective;
        let mut outcome = lbfgs::minimize(&mut objective, &x0, &opts);
        logger.log(phase, &outcome)?;
        if outcome.line_search_failed && outcome.iterations < iters_per_batch {
            // restart with damped memory from the best point so far
            *restarts += 1;
            log::warn!(
                "{phase}: line search stalled after {} iterations, restarting with damped memory",
                outcome.iterations
            );
            let mut damped = opts.clone();
            damped.memory = (opts.memory / 2).max(1);
            damped.max_iterations = iters_per_batch - outcome.iterations;
            let restart = lbfgs::minimize(&mut objective, &outcome.x, &damped);
            logger.log(&format!("{phase}/restart"), &restart)?;
            if restart.f < outcome.f {
                outcome = restart;
            }
        }
        if non_finite.get() && !outcome.f.is_finite() {
            return Err(Error::Numerical(format!(
                "{phase}: loss became non-finite (epoch {epoch}, best f {})",
                outcome.f
            )));
        }
        model.inject(sel, &outcome.x)?;
    }
    Ok(())
}

fn checkpoint(model: &ModelParams, cfg: &TrainConfig, phase: &str) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tagged = model.clone();
        tagged.metadata.set("phase", phase);
        crate::store::save(&tagged, dir.join(format!("checkpoint_{phase}.rmod")))?;
    }
    Ok(())
}

/// Progressive training: greedy per-stage training at one solver iteration,
/// then joint refinement while the unroll depth grows to `t_final`. Returns
/// the trained model with provenance metadata.
pub fn train_progressive(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let logger = PhaseLogger {
        path: cfg.log_path.clone(),
    };

    // stage-1 model, fidelity weights seeded from the class noise levels
    let stage1_arch = Architecture {
        stages: 1,
        ..cfg.arch
    };
    let mut model = ModelParams::init(&stage1_arch)?;
    initial_lambdas(&mut model, samples)?;
    check_classes(&model, samples)?;

    // greedy phases at T = 1: train the new stage plus all lambdas
    let mut restarts = 0usize;
    for k in 0..cfg.arch.stages {
        if k > 0 {
            let stage = PriorProx::init_stage(&cfg.arch, &model.prior.basis().clone(), false)?;
            model.prior.push_stage(stage)?;
        }
        let phase = format!("greedy_stage{}", k + 1);
        run_phase(
            &mut model,
            samples,
            &ParamSelection::single_stage(k),
            1,
            cfg.greedy_iters,
            cfg,
            &phase,
            &logger,
            &mut restarts,
        )?;
        checkpoint(&model, cfg, &phase)?;
    }

    // refinement phases: all parameters, growing unroll depth
    for t in 2..=cfg.t_final {
        let phase = format!("refine_t{t}");
        let sel = ParamSelection::all(&model);
        run_phase(
            &mut model,
            samples,
            &sel,
            t,
            cfg.refine_iters,
            cfg,
            &phase,
            &logger,
            &mut restarts,
        )?;
        checkpoint(&model, cfg, &phase)?;
    }

    model.metadata.set("line_search_restarts", restarts.to_string());
    model.metadata.set("seed", cfg.seed.to_string());
    model.metadata.set("t_final", cfg.t_final.to_string());
    model.metadata.set("samples", samples.len().to_string());
    model.metadata.set(
        "schedule",
        format!("rho0={} growth={}", cfg.rho0, cfg.rho_growth),
    );
    model.metadata.set("init", "dct_lowfreq+soft_shrinkage");
    Ok(model)
}
