//! `restore run`: restore one image with a trained model.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use restore_core::dataprox::TaskSpec;
use restore_core::hqs::{restore_with_options, HqsConfig, PluginPrior};
use restore_core::image::{psnr, Image};
use restore_core::io;
use restore_core::store;

use crate::errors::{CliError, CliResult};

#[derive(Args)]
pub struct RunArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Degraded input image (.pgm or .png; color PNGs are processed per channel).
    #[arg(long)]
    pub input: PathBuf,
    /// Restored output image.
    #[arg(long)]
    pub output: PathBuf,
    /// Problem class whose trained fidelity weight to use.
    #[arg(long)]
    pub class: Option<String>,
    /// Fidelity weight override (test-time); replaces the trained value.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Solver iterations.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Initial penalty weight.
    #[arg(long, default_value_t = 1.0)]
    pub rho0: f64,
    /// Penalty growth per iteration.
    #[arg(long, default_value_t = 2.0)]
    pub rho_growth: f64,
    /// PSF file: switches the task to non-blind deconvolution.
    #[arg(long)]
    pub psf: Option<PathBuf>,
    /// Mask file (0 = missing): switches the task to joint denoise+inpaint.
    #[arg(long, conflicts_with = "psf")]
    pub mask: Option<PathBuf>,
    /// Ground truth for PSNR reporting.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Write the per-iteration run report (JSONL) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Compose a Gaussian-smoothing plug-in prior with this tau.
    #[arg(long)]
    pub plugin_smooth: Option<f64>,
    /// Spatial sigma per unit strength for the smoothing plug-in.
    #[arg(long, default_value_t = 0.1)]
    pub plugin_scale: f64,
    /// Crop this many boundary pixels before computing reported PSNR.
    #[arg(long, default_value_t = 0)]
    pub psnr_crop: usize,
}

pub fn run(args: RunArgs) -> CliResult {
    // validate flag consistency before touching any output
    if args.class.is_none() && args.lambda.is_none() {
        return Err(CliError::usage(
            "either --class (trained lambda) or --lambda (override) is required",
        ));
    }
    if args.t == 0 {
        return Err(CliError::usage("--t must be >= 1"));
    }
    let model = store::load(&args.model)?;
    let psf = args.psf.as_ref().map(io::read_psf).transpose()?;
    let mask = args.mask.as_ref().map(io::read_mask).transpose()?;
    let reference = args.reference.as_ref().map(io::read_image).transpose()?;

    let class = args.class.clone().unwrap_or_else(|| "override".to_owned());
    let make_task = |mask: Option<restore_core::dataprox::Mask>| -> TaskSpec {
        match (&psf, mask) {
            (Some(p), None) => TaskSpec::deconv(class.clone(), p.clone(), 0.0),
            (None, Some(m)) => TaskSpec::inpaint(class.clone(), m, 0.0),
            _ => TaskSpec::denoise(class.clone(), 0.0),
        }
    };
    let cfg = HqsConfig {
        iterations: args.t,
        rho0: args.rho0,
        rho_growth: args.rho_growth,
        lambda_override: args.lambda,
        keep_images: false,
    };
    let plugins: Vec<PluginPrior> = match args.plugin_smooth {
        Some(tau) => vec![PluginPrior::gaussian_smoother(tau, args.plugin_scale)?],
        None => Vec::new(),
    };

    let channels = match args.input.extension().and_then(|e| e.to_str()) {
        Some("png") => io::read_png_channels(&args.input)?,
        _ => vec![io::read_image(&args.input)?],
    };
    let multi = channels.len() > 1;

    let mut outputs = Vec::new();
    let mut total_ms = 0.0;
    let mut last_trace = None;
    for chan in &channels {
        let task = make_task(mask.clone());
        task.validate_for(chan).map_err(CliError::from)?;
        let t0 = Instant::now();
        let (x, trace) = restore_with_options(
            chan,
            &task,
            &model,
            &cfg,
            &plugins,
            if multi { None } else { reference.as_ref() },
        )?;
        total_ms += t0.elapsed().as_secs_f64() * 1000.0;
        outputs.push(x);
        last_trace = Some(trace);
    }

    if multi {
        if outputs.len() != 3 {
            return Err(CliError::data("expected 1 or 3 channels".into()));
        }
        let arr: [Image; 3] = [
            outputs[0].clone(),
            outputs[1].clone(),
            outputs[2].clone(),
        ];
        io::write_png_rgb(&arr, &args.output)?;
    } else {
        io::write_image(&outputs[0], &args.output)?;
    }

    let trace = last_trace.expect("at least one channel");
    if let Some(path) = &args.report {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        trace.write_report(file)?;
    }
    println!(
        "restored {} -> {} ({} iteration(s), lambda {:.6}, init {}, {total_ms:.1} ms compute)",
        args.input.display(),
        args.output.display(),
        args.t,
        trace.lambda,
        trace.init_method
    );
    if let (Some(reference), false) = (&reference, multi) {
        let crop = args.psnr_crop;
        let (out_c, ref_c, in_c) = if crop > 0 {
            (
                outputs[0].cropped(crop)?,
                reference.cropped(crop)?,
                channels[0].cropped(crop)?,
            )
        } else {
            (outputs[0].clone(), reference.clone(), channels[0].clone())
        };
        println!(
            "PSNR: input {:.2} dB -> output {:.2} dB",
            psnr(&in_c, &ref_c)?,
            psnr(&out_c, &ref_c)?
        );
    }
    Ok(())
}
