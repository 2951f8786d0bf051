mod eval;
mod fit;
mod simulate;
mod sweep;

use std::path::Path;

pub use eval::{
    cmd_eval, read_reference, summarize_ks, threshold_sweep, EvalReport, KsSummary, SweepRow,
};
pub use fit::{cmd_fit, FitFlags, FitReport, FitWarnings};
pub use simulate::{cmd_simulate, SimulateSummary};
pub use sweep::{
    cell_synth, cells, cmd_sweep, replicate_seed, run_replicate, summarize, Cell, CellSummary,
    RunRow, SweepOutput,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Writes the fully resolved configuration next to a command's outputs.
fn write_config_echo(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))
}
