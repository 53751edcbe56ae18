pub mod decode;
pub mod featurize;
pub mod score;
pub mod synth;
pub mod train;
pub mod verify;

use std::path::Path;

use crate::config::RunConfig;
use crate::CliError;

/// Load `--config` if given, else defaults.
pub fn load_config(args: &crate::args::Args) -> Result<RunConfig, CliError> {
    match args.get("config") {
        Some(path) => RunConfig::load(Path::new(path)).map_err(CliError::Usage),
        None => Ok(RunConfig::default()),
    }
}

pub fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}
