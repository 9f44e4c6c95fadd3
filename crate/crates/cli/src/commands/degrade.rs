//! `restore degrade`: seeded degradation synthesis with a manifest.

use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use restore_core::filter::{convolve, BoundaryMode};
use restore_core::io;
use restore_core::train::synth;

use crate::errors::{CliError, CliResult};

#[derive(Args)]
pub struct DegradeArgs {
    /// Directory of clean .pgm/.png images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for degraded images, sidecars and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Blur with this PSF file (text grid or PGM) before adding noise.
    #[arg(long)]
    pub psf: Option<PathBuf>,
    /// Blur with a fresh random PSF of this odd size per image.
    #[arg(long, conflicts_with = "psf")]
    pub psf_size: Option<usize>,
    /// Drop this fraction of pixels (writes a mask sidecar).
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// PRNG seed; identical seeds reproduce byte-identical outputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sigma: f64,
    pub psf: Option<String>,
    pub mask: Option<String>,
    pub mask_missing_fraction: Option<f64>,
    pub file_seed: u64,
}

#[derive(Serialize, Deserialize)]
pub struct DegradeManifest {
    pub seed: u64,
    pub sigma: f64,
    pub psf_size: Option<usize>,
    pub mask_fraction: Option<f64>,
    pub entries: Vec<ManifestEntry>,
}

pub fn run(args: DegradeArgs) -> CliResult {
    if args.sigma < 0.0 {
        return Err(CliError::usage("--sigma must be non-negative"));
    }
    if let Some(f) = args.mask_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::usage("--mask-fraction must be in [0, 1]"));
        }
    }
    if let Some(s) = args.psf_size {
        if s % 2 == 0 || s < 3 {
            return Err(CliError::usage("--psf-size must be odd and >= 3"));
        }
    }
    let fixed_psf = args.psf.as_ref().map(io::read_psf).transpose()?;
    let files = super::list_images(&args.input)?;
    if files.is_empty() {
        return Err(CliError::data(format!(
            "no .pgm/.png images in {}",
            args.input.display()
        )));
    }
    std::fs::create_dir_all(&args.out)?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for path in &files {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match degrade_one(&args, fixed_psf.as_ref(), path, &name) {
            Ok(entry) => entries.push(entry),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }

    let manifest = DegradeManifest {
        seed: args.seed,
        sigma: args.sigma,
        psf_size: args.psf_size,
        mask_fraction: args.mask_fraction,
        entries,
    };
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    println!(
        "degraded {} image(s) into {} (manifest: {})",
        manifest.entries.len(),
        args.out.display(),
        manifest_path.display()
    );
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        return Err(CliError::data(format!(
            "{} input file(s) could not be processed",
            failures.len()
        )));
    }
    Ok(())
}

fn degrade_one(
    args: &DegradeArgs,
    fixed_psf: Option<&restore_core::filter::Filter>,
    path: &std::path::Path,
    name: &str,
) -> Result<ManifestEntry, CliError> {
    let stem = super::file_stem(path);
    let seed = super::file_seed(args.seed, name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = io::read_image(path)?;

    let mut img = clean;
    let mut psf_ref = None;
    if let Some(psf) = fixed_psf {
        img = convolve(&img, psf, BoundaryMode::Circular)?;
        psf_ref = Some(
            args.psf
                .as_ref()
                .expect("psf path present")
                .display()
                .to_string(),
        );
    } else if let Some(size) = args.psf_size {
        let psf = synth::random_psf(size, &mut rng)?;
        img = convolve(&img, &psf, BoundaryMode::Circular)?;
        let psf_path = args.out.join(format!("{stem}.psf.txt"));
        io::write_psf(&psf, &psf_path)?;
        psf_ref = Some(psf_path.display().to_string());
    }
    if args.sigma > 0.0 {
        img = synth::add_gaussian_noise(&img, args.sigma, &mut rng);
    }

    let mut mask_ref = None;
    let mut missing_fraction = None;
    if let Some(fraction) = args.mask_fraction {
        let mask = synth::random_mask(img.width(), img.height(), fraction, &mut rng)?;
        for (p, v) in img.data_mut().iter_mut().enumerate() {
            if mask.data()[p] == 0 {
                *v = 0.0;
            }
        }
        let mask_path = args.out.join(format!("{stem}.mask.pgm"));
        io::write_mask(&mask, &mask_path)?;
        mask_ref = Some(mask_path.display().to_string());
        missing_fraction =
            Some(1.0 - mask.observed_count() as f64 / (img.width() * img.height()) as f64);
    }

    let img = synth::quantize(&img);
    io::write_image(&img, args.out.join(name))?;
    Ok(ManifestEntry {
        name: name.to_owned(),
        sigma: args.sigma,
        psf: psf_ref,
        mask: mask_ref,
        mask_missing_fraction: missing_fraction,
        file_seed: seed,
    })
}
