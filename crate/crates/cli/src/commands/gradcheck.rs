//! `restore gradcheck`: finite-difference validation of analytic gradients.

use clap::Args;

use restore_core::gradcheck;

use crate::errors::{CliError, CliResult};

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Test hook: deliberately corrupt one analytic gradient in this block.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

pub fn run(args: GradcheckArgs) -> CliResult {
    let report = gradcheck::run_suite(args.seed, args.tolerance, args.corrupt.as_deref())
        .map_err(CliError::from)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numerical(
            "gradient check failed (see offending coordinates above)".into(),
        ))
    }
}
