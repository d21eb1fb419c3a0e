//! Experiment orchestration: configs, model roster, training, evaluation,
//! self-checks and the model-ordering experiment.

pub mod checks;
pub mod config;
pub mod eval;
pub mod model;
pub mod ordering;
pub mod train;

use std::path::Path;

pub use checks::{CheckOutcome, Suite};
pub use config::{ArchConfig, ExperimentConfig, ModelKind};
pub use eval::{evaluate, score_item, EvalOptions};
pub use model::{sort_canonicalize, CheckpointMeta, Field, Model};
pub use train::{train, TrainLog, TrainOutcome};

use crate::error::{invalid, Result};
use crate::nn::Checkpoint;

/// Writes the Param2Tok matrices of a checkpoint as CSV files.
pub fn export_p2t(ckpt: &Checkpoint, out_dir: &Path) -> Result<()> {
    let (model, _) = Model::from_checkpoint(ckpt)?;
    match model.field() {
        Some(Field::Param2Tok { p2t, .. }) => crate::param2tok::export_csv(p2t, &model.store, out_dir),
        _ => Err(invalid(format!(
            "{} checkpoints have no Param2Tok projection",
            model.kind()
        ))),
    }
}
