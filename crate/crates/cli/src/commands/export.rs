//! `restore export`: human-readable JSON view of a model file.

use std::path::PathBuf;

use clap::Args;

use restore_core::store;

use crate::errors::CliResult;

#[derive(Args)]
pub struct ExportArgs {
    /// Model file to export.
    #[arg(long)]
    pub model: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ExportArgs) -> CliResult {
    let model = store::load(&args.model)?;
    let text = store::export_text(&model);
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}
