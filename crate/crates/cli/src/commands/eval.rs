//! `restore eval`: batch evaluation with optional T / sigma / lambda sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use restore_core::dataprox::TaskSpec;
use restore_core::hqs::{restore, HqsConfig};
use restore_core::image::{psnr, Image};
use restore_core::io;
use restore_core::model::ModelParams;
use restore_core::store;
use restore_core::train::synth;

use crate::errors::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of degraded images (with optional .psf.txt/.mask.pgm sidecars).
    #[arg(long, required_unless_present = "sweep_sigma")]
    pub degraded: Option<PathBuf>,
    /// Directory of reference (clean) images, paired by file stem.
    #[arg(long)]
    pub reference: PathBuf,
    /// Problem class whose trained lambda to use.
    #[arg(long)]
    pub class: Option<String>,
    /// Fidelity override applied to every image.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Solver iterations.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Sweep solver iteration counts, e.g. "1,3,5".
    #[arg(long, value_delimiter = ',')]
    pub sweep_t: Option<Vec<usize>>,
    /// Sweep noise levels (degrades the reference set internally), e.g. "5,15,25".
    #[arg(long, value_delimiter = ',')]
    pub sweep_sigma: Option<Vec<f64>>,
    /// Sweep fidelity weights "lo:hi:count" (log-spaced).
    #[arg(long)]
    pub sweep_lambda: Option<String>,
    /// Class name prefix used to pick lambdas during a sigma sweep.
    #[arg(long, default_value = "sigma")]
    pub class_prefix: String,
    /// Seed for internally generated degradations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Crop this many boundary pixels before computing PSNR.
    #[arg(long, default_value_t = 0)]
    pub psnr_crop: usize,
    /// Write the machine-readable report (JSON) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Clone)]
struct EvalRow {
    name: String,
    class: String,
    sweep: String,
    t: usize,
    k: usize,
    lambda: f64,
    input_psnr: f64,
    output_psnr: f64,
    runtime_ms: f64,
}

#[derive(Serialize)]
struct EvalGroup {
    sweep: String,
    images: usize,
    mean_input_psnr: f64,
    mean_output_psnr: f64,
}

#[derive(Serialize)]
struct EvalReport {
    seed: u64,
    model: String,
    stages: usize,
    config: serde_json::Value,
    unpaired: Vec<String>,
    rows: Vec<EvalRow>,
    groups: Vec<EvalGroup>,
}

struct WorkItem {
    name: String,
    degraded: Image,
    reference: Image,
    task: TaskSpec,
    sweep: String,
    t: usize,
    lambda_override: Option<f64>,
}

fn pair_by_stem(
    degraded_dir: &Path,
    reference_dir: &Path,
) -> Result<(Vec<(PathBuf, PathBuf)>, Vec<String>), CliError> {
    let refs = super::list_images(reference_dir)?;
    let degs = super::list_images(degraded_dir)?;
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for d in &degs {
        let stem = super::file_stem(d);
        match refs.iter().find(|r| super::file_stem(r) == stem) {
            Some(r) => pairs.push((d.clone(), r.clone())),
            None => unpaired.push(format!("{} (no reference)", d.display())),
        }
    }
    Ok((pairs, unpaired))
}

fn sidecar_task(degraded_path: &Path, class: &str) -> Result<TaskSpec, CliError> {
    let stem = super::file_stem(degraded_path);
    let dir = degraded_path.parent().unwrap_or(Path::new("."));
    let psf_path = dir.join(format!("{stem}.psf.txt"));
    let mask_path = dir.join(format!("{stem}.mask.pgm"));
    if psf_path.exists() {
        Ok(TaskSpec::deconv(class, io::read_psf(&psf_path)?, 0.0))
    } else if mask_path.exists() {
        Ok(TaskSpec::inpaint(class, io::read_mask(&mask_path)?, 0.0))
    } else {
        Ok(TaskSpec::denoise(class, 0.0))
    }
}

fn parse_lambda_sweep(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::usage("--sweep-lambda expects lo:hi:count"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| CliError::usage("bad lambda lo"))?;
    let hi: f64 = parts[1].parse().map_err(|_| CliError::usage("bad lambda hi"))?;
    let n: usize = parts[2].parse().map_err(|_| CliError::usage("bad lambda count"))?;
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(CliError::usage("--sweep-lambda needs 0 < lo < hi and count >= 2"));
    }
    Ok((0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect())
}

pub fn run(args: EvalArgs) -> CliResult {
    let sweeps_given = [
        args.sweep_t.is_some(),
        args.sweep_sigma.is_some(),
        args.sweep_lambda.is_some(),
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if sweeps_given > 1 {
        return Err(CliError::usage("at most one sweep may be given"));
    }
    let model = store::load(&args.model)?;
    let k = model.prior.num_stages();

    let mut unpaired = Vec::new();
    let mut work = Vec::new();

    if let Some(sigmas) = &args.sweep_sigma {
        // degrade the reference set internally at each sigma
        let refs = super::list_images(&args.reference)?;
        if refs.is_empty() {
            return Err(CliError::data("no reference images".into()));
        }
        for &sigma in sigmas {
            let class = format!("{}{}", args.class_prefix, sigma as i64);
            resolve_lambda_or_fail(&model, &class, args.lambda)?;
            for path in &refs {
                let reference = io::read_image(path)?;
                let seed = super::file_seed(args.seed, &format!("{}:{sigma}", super::file_stem(path)));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let degraded = synth::quantize(&synth::add_gaussian_noise(&reference, sigma, &mut rng));
                work.push(WorkItem {
                    name: super::file_stem(path),
                    degraded,
                    reference,
                    task: TaskSpec::denoise(class.clone(), sigma),
                    sweep: format!("sigma={sigma}"),
                    t: args.t,
                    lambda_override: args.lambda,
                });
            }
        }
    } else {
        let degraded_dir = args
            .degraded
            .as_ref()
            .ok_or_else(|| CliError::usage("--degraded is required without --sweep-sigma"))?;
        let class = match (&args.class, args.lambda) {
            (Some(c), _) => c.clone(),
            (None, Some(_)) => "override".to_owned(),
            (None, None) => {
                return Err(CliError::usage("either --class or --lambda is required"))
            }
        };
        if args.lambda.is_none() {
            resolve_lambda_or_fail(&model, &class, None)?;
        }
        let (pairs, missing) = pair_by_stem(degraded_dir, &args.reference)?;
        unpaired = missing;
        if pairs.is_empty() {
            return Err(CliError::data("no paired degraded/reference images".into()));
        }
        for (dpath, rpath) in &pairs {
            let degraded = io::read_image(dpath)?;
            let reference = io::read_image(rpath)?;
            let task = sidecar_task(dpath, &class)?;
            match (&args.sweep_t, &args.sweep_lambda) {
                (Some(ts), _) => {
                    for &t in ts {
                        work.push(WorkItem {
                            name: super::file_stem(dpath),
                            degraded: degraded.clone(),
                            reference: reference.clone(),
                            task: task.clone(),
                            sweep: format!("t={t}"),
                            t,
                            lambda_override: args.lambda,
                        });
                    }
                }
                (None, Some(spec)) => {
                    for lambda in parse_lambda_sweep(spec)? {
                        work.push(WorkItem {
                            name: super::file_stem(dpath),
                            degraded: degraded.clone(),
                            reference: reference.clone(),
                            task: task.clone(),
                            sweep: format!("lambda={lambda:.6e}"),
                            t: args.t,
                            lambda_override: Some(lambda),
                        });
                    }
                }
                (None, None) => work.push(WorkItem {
                    name: super::file_stem(dpath),
                    degraded: degraded.clone(),
                    reference: reference.clone(),
                    task: task.clone(),
                    sweep: "-".to_owned(),
                    t: args.t,
                    lambda_override: args.lambda,
                }),
            }
        }
    }

    let crop = args.psnr_crop;
    let rows: Result<Vec<EvalRow>, CliError> = work
        .par_iter()
        .map(|item| -> Result<EvalRow, CliError> {
            let cfg = HqsConfig {
                iterations: item.t,
                lambda_override: item.lambda_override,
                ..HqsConfig::default()
            };
            let t0 = Instant::now();
            let (x, trace) = restore(&item.degraded, &item.task, &model, &cfg)?;
            let runtime_ms = t0.elapsed().as_secs_f64() * 1000.0;
            let (xc, rc, dc) = if crop > 0 {
                (
                    x.cropped(crop)?,
                    item.reference.cropped(crop)?,
                    item.degraded.cropped(crop)?,
                )
            } else {
                (x, item.reference.clone(), item.degraded.clone())
            };
            Ok(EvalRow {
                name: item.name.clone(),
                class: item.task.class_id.clone(),
                sweep: item.sweep.clone(),
                t: item.t,
                k,
                lambda: trace.lambda,
                input_psnr: psnr(&dc, &rc)?,
                output_psnr: psnr(&xc, &rc)?,
                runtime_ms,
            })
        })
        .collect();
    let mut rows = rows?;
    rows.sort_by(|a, b| (&a.sweep, &a.name).cmp(&(&b.sweep, &b.name)));

    // aggregates per sweep label, recomputable from the rows
    let mut groups: Vec<EvalGroup> = Vec::new();
    for row in &rows {
        if groups.last().map(|g| g.sweep != row.sweep).unwrap_or(true) {
            groups.push(EvalGroup {
                sweep: row.sweep.clone(),
                images: 0,
                mean_input_psnr: 0.0,
                mean_output_psnr: 0.0,
            });
        }
        let g = groups.last_mut().unwrap();
        g.images += 1;
        g.mean_input_psnr += row.input_psnr;
        g.mean_output_psnr += row.output_psnr;
    }
    for g in &mut groups {
        g.mean_input_psnr /= g.images as f64;
        g.mean_output_psnr /= g.images as f64;
    }

    // table to stdout, 2-decimal PSNR
    println!(
        "{:<24} {:<16} {:>3} {:>3} {:>10} {:>10} {:>9}",
        "image", "sweep", "t", "k", "in (dB)", "out (dB)", "ms"
    );
    for r in &rows {
        println!(
            "{:<24} {:<16} {:>3} {:>3} {:>10.2} {:>10.2} {:>9.1}",
            r.name, r.sweep, r.t, r.k, r.input_psnr, r.output_psnr, r.runtime_ms
        );
    }
    for g in &groups {
        println!(
            "mean [{}] over {} image(s): {:.2} -> {:.2} dB",
            g.sweep, g.images, g.mean_input_psnr, g.mean_output_psnr
        );
    }
    for u in &unpaired {
        eprintln!("unpaired: {u}");
    }

    let report = EvalReport {
        seed: args.seed,
        model: args.model.display().to_string(),
        stages: k,
        config: serde_json::json!({
            "t": args.t,
            "class": args.class,
            "lambda": args.lambda,
            "sweep_t": args.sweep_t,
            "sweep_sigma": args.sweep_sigma,
            "sweep_lambda": args.sweep_lambda,
            "psnr_crop": args.psnr_crop,
        }),
        unpaired,
        rows,
        groups,
    };
    if let Some(out) = &args.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn resolve_lambda_or_fail(
    model: &ModelParams,
    class: &str,
    lambda_override: Option<f64>,
) -> Result<(), CliError> {
    if lambda_override.is_some() || model.lambda_for(class).is_some() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "model has no lambda for class '{class}' (available: {}); pass --lambda to override",
            model
                .class_ids()
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}
