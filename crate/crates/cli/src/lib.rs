//! Command-line and HTTP front ends for the morphing-grid surrogate.

pub mod server;
pub mod workspace;

use morphsim::dataset::{Provenance, StatsReport};
use morphsim::train::{EpochRecord, Hyperparams};
use serde::{Deserialize, Serialize};

/// Metadata stored inside every checkpoint the CLI writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub hyperparams: Hyperparams,
    /// Geometry statistics of the training designs; drives validation
    /// warnings.
    pub dataset_stats: StatsReport,
    pub provenance: Option<Provenance>,
    pub trajectories: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}
