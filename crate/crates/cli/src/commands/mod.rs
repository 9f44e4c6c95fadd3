pub mod degrade;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod run;
pub mod train;

use std::path::{Path, PathBuf};

use crate::errors::CliError;

/// Sorted list of .pgm/.png files in a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read directory {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("png")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Deterministic per-file seed: the run seed mixed with a hash of the name.
pub fn file_seed(run_seed: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(name.as_bytes());
    run_seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
