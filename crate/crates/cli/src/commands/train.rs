//! `restore train`: progressive training from a manifest.

use std::path::PathBuf;

use clap::Args;

use restore_core::io;
use restore_core::prior::{Architecture, RbfConfig};
use restore_core::store;
use restore_core::train::synth::TrainingManifest;
use restore_core::train::{self, train_progressive, TrainConfig};

use crate::errors::{CliError, CliResult};

#[derive(Args)]
pub struct TrainArgs {
    /// Training manifest (JSON): clean image paths, classes, patch size, seed.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Diffusion stages (K).
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    /// Filters per stage (N).
    #[arg(long, default_value_t = 24)]
    pub filters: usize,
    /// Filter side length (f, odd).
    #[arg(long, default_value_t = 5)]
    pub filter_size: usize,
    /// Final unroll depth (T).
    #[arg(long, default_value_t = 3)]
    pub t_final: usize,
    /// L-BFGS iterations per greedy stage phase.
    #[arg(long, default_value_t = 200)]
    pub greedy_iters: usize,
    /// L-BFGS iterations per refinement phase.
    #[arg(long, default_value_t = 100)]
    pub refine_iters: usize,
    /// Write checkpoints after each phase into this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Append per-iteration loss lines (JSONL) to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Experimental: subset size for minibatch mode.
    #[arg(long)]
    pub minibatch: Option<usize>,
}

pub fn run(args: TrainArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", args.manifest.display())))?;
    let manifest: TrainingManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("bad manifest {}: {e}", args.manifest.display())))?;
    if manifest.classes.is_empty() {
        return Err(CliError::usage("manifest declares no classes"));
    }

    let clean: Vec<_> = manifest
        .clean_images
        .iter()
        .map(io::read_image)
        .collect::<Result<_, _>>()?;
    let samples = train::synth::build_training_samples(
        &clean,
        manifest.patch_size,
        &manifest.classes,
        manifest.seed,
    )?;
    println!(
        "training on {} samples ({} classes, patch {}x{})",
        samples.len(),
        manifest.classes.len(),
        manifest.patch_size,
        );

    let cfg = TrainConfig {
        arch: Architecture {
            stages: args.stages,
            filters_per_stage: args.filters,
            filter_size: args.filter_size,
            rbf: RbfConfig::default(),
        },
        t_final: args.t_final,
        greedy_iters: args.greedy_iters,
        refine_iters: args.refine_iters,
        seed: manifest.seed,
        checkpoint_dir: args.checkpoint_dir.clone(),
        log_path: args.log.clone(),
        minibatch: args.minibatch,
        ..TrainConfig::default()
    };
    let mut model = train_progressive(&samples, &cfg)?;
    model
        .metadata
        .set("manifest", args.manifest.display().to_string());
    store::save(&model, &args.out)?;

    let final_loss = train::loss(&model, &samples, args.t_final)?;
    let restarts = model
        .metadata
        .get("line_search_restarts")
        .unwrap_or("0")
        .to_owned();
    println!(
        "model written to {} (final training loss {final_loss:.4}, mean PSNR {:.2} dB, line-search restarts {restarts})",
        args.out.display(),
        -final_loss
    );
    for (class, log_lambda) in model.log_lambdas() {
        println!("  lambda[{class}] = {:.6}", log_lambda.exp());
    }
    Ok(())
}
