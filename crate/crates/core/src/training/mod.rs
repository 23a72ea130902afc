//! Objectives, optimizer and the per-version training procedure.

mod adam;
mod losses;
mod objective;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use losses::{
    alignment_rows, amplification_metric, bpr_loss, mean_sq_row_norm, multi_step_alignment_loss,
    single_step_alignment_loss, weighted_alignment_loss, AlignOutput, BprOutput,
};
pub use objective::{joint_objective, AlignmentTarget, BprBatch, ObjectiveGrads, ObjectiveValue};
pub use trainer::{train_version, train_version_on, EpochLog, Phase, VersionArtifacts, VersionInputs};

/// Which nodes the alignment loss is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentSetPolicy {
    /// Every user and item in the version-`k` snapshot.
    #[default]
    AllSnapshotNodes,
    /// Only nodes already present in the version `k-1` snapshot.
    PreviousSnapshotNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight `λ` of the alignment loss.
    pub lambda: f64,
    /// Positive edges per optimizer step; `0` means the whole snapshot.
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Optimizer steps for the post-hoc `B_k` fit.
    pub posthoc_epochs: usize,
    pub posthoc_learning_rate: f64,
    pub alignment_set: AlignmentSetPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.001,
            weight_decay: 0.01,
            lambda: 16.0,
            batch_size: 0,
            negatives_per_positive: 1,
            seed: 0,
            posthoc_epochs: 500,
            posthoc_learning_rate: 0.01,
            alignment_set: AlignmentSetPolicy::AllSnapshotNodes,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if !(self.lambda >= 0.0) {
            return fail("lambda must be >= 0");
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives_per_positive must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.posthoc_learning_rate > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be >= 0");
        }
        Ok(())
    }
}
