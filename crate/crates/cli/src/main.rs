//! Command-line entry points: degradation synthesis, training, restoration,
//! evaluation sweeps, gradient checking and model export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod errors;

use clap::{Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "restore",
    about = "Image restoration with a shared learned prior: denoising, deconvolution and inpainting through one proximal solver",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize degraded images (noise, blur, missing pixels) with a manifest.
    Degrade(commands::degrade::DegradeArgs),
    /// Train a model from a manifest of clean images and problem classes.
    Train(commands::train::TrainArgs),
    /// Restore a single image with a trained model.
    Run(commands::run::RunArgs),
    /// Evaluate a model over an image set, optionally sweeping T, sigma or lambda.
    Eval(commands::eval::EvalArgs),
    /// Validate every analytic gradient against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Export a model file as human-readable JSON.
    Export(commands::export::ExportArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Degrade(args) => commands::degrade::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Run(args) => commands::run::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Export(args) => commands::export::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
