//! Subcommand implementations. Stages communicate only via files under the
//! run directory.

mod analysis;
mod pipeline;
mod synth;

pub use analysis::{cmd_ablate, cmd_evaluate, cmd_explain, cmd_report};
pub use pipeline::{cmd_detect, cmd_ingest, cmd_split, cmd_train, TrainBranch};
pub use synth::cmd_synth;

use anyhow::Result;
use chronolens_core::catalog::{load_catalog, Catalog, Task};

use crate::config::RunConfig;
use crate::rundir::RunDir;

/// Catalog restricted to the records of the active task: dating keeps
/// 1930..=1999, context keeps everything.
pub(crate) fn task_catalog(config: &RunConfig, run: &RunDir) -> Result<Catalog> {
    let catalog = load_catalog(&run.catalog_path())?;
    Ok(match config.task {
        Task::Dating => catalog.filter_for_dating(),
        Task::Context => catalog,
    })
}
