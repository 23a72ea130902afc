//! Unintended-task consumers: labels from ratings and activity, MLP
//! classifiers trained once on version-0 embeddings, ROC-AUC scoring.

mod labels;
mod model;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, NodeId};
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::tensor::derive_seed;

pub use labels::{
    build_labels, first_test_version, median_item_rating, LabeledExamples, Split, Subject, MIN_REVIEWS,
    POSITIVE_RATING, STD_THRESHOLD,
};
pub use model::ConsumerModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    UserActivity,
    UserPositiveActivity,
    ItemRatingAvg,
    ItemRatingStd,
    EdgeRating,
}

/// What a task's examples are made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    User,
    Item,
    UserItemPair,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::UserActivity,
        TaskId::UserPositiveActivity,
        TaskId::ItemRatingAvg,
        TaskId::ItemRatingStd,
        TaskId::EdgeRating,
    ];

    pub fn key(self) -> &'static str {
        match self {
            TaskId::UserActivity => "user_activity",
            TaskId::UserPositiveActivity => "user_positive_activity",
            TaskId::ItemRatingAvg => "item_rating_avg",
            TaskId::ItemRatingStd => "item_rating_std",
            TaskId::EdgeRating => "edge_rating",
        }
    }

    pub fn arity(self) -> Arity {
        match self {
            TaskId::UserActivity | TaskId::UserPositiveActivity => Arity::User,
            TaskId::ItemRatingAvg | TaskId::ItemRatingStd => Arity::Item,
            TaskId::EdgeRating => Arity::UserItemPair,
        }
    }

    /// Consumer input width for embeddings of dimension `dim`.
    pub fn input_dim(self, dim: usize) -> usize {
        match self.arity() {
            Arity::UserItemPair => 2 * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| Error::Lookup(format!("task {s:?}")))
    }
}

/// Hyper-parameter grid and training knobs shared by all consumers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsumerGrid {
    pub hidden_dims: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ConsumerGrid {
    fn default() -> Self {
        ConsumerGrid {
            hidden_dims: vec![128, 256],
            dropouts: vec![0.0, 0.25],
            max_epochs: 100,
            patience: 10,
            learning_rate: 0.001,
            batch_size: 256,
        }
    }
}

impl ConsumerGrid {
    /// The full grid: widths {128, 256, 512, 1024} × dropout {0, 0.25, 0.5}.
    pub fn full() -> Self {
        ConsumerGrid {
            hidden_dims: vec![128, 256, 512, 1024],
            dropouts: vec![0.0, 0.25, 0.5],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.dropouts.is_empty() {
            return Err(Error::Validation("consumer grid is empty".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Validation("consumer max_epochs and patience must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("consumer learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Stacks the consumer inputs for `labels` from `table`; pairs are
/// `user ‖ item`.
pub fn features(table: &EmbeddingTable, labels: &LabeledExamples) -> Result<Array2<f64>> {
    let d = table.dim();
    let width = labels.task.input_dim(d);
    let mut out = Array2::zeros((labels.len(), width));
    for (r, &(subject, _)) in labels.examples.iter().enumerate() {
        let mut row = out.row_mut(r);
        match subject {
            Subject::User(u) => row.assign(&table.vector(NodeId::User(u))?),
            Subject::Item(i) => row.assign(&table.vector(NodeId::Item(i))?),
            Subject::Pair(u, i) => row.assign(&concatenate(
                Axis(0),
                &[table.vector(NodeId::User(u))?, table.vector(NodeId::Item(i))?],
            )?),
        }
    }
    Ok(out)
}

/// Fits every grid point on `train` and keeps the one with the best
/// validation ROC-AUC (first wins on ties).
///
/// `train_table` and `valid_table` must both hold version-0 embeddings
/// (`M_0` run on the snapshots named by the label sets).
pub fn train_consumer(
    train_table: &EmbeddingTable,
    train: &LabeledExamples,
    valid_table: &EmbeddingTable,
    valid: &LabeledExamples,
    grid: &ConsumerGrid,
    seed: u64,
) -> Result<ConsumerModel> {
    grid.validate()?;
    if train.task != valid.task {
        return Err(Error::Validation(format!("train/validation tasks differ: {} vs {}", train.task, valid.task)));
    }
    let train_y = train.labels();
    if train.positives() == 0 || train.positives() == train.len() {
        return Err(Error::Validation(format!("{} training labels are single-class", train.task)));
    }
    let train_x = features(train_table, train)?;
    let valid_x = features(valid_table, valid)?;
    let valid_y = valid.labels();

    let mut best: Option<ConsumerModel> = None;
    let mut point = 0;
    for &hidden_dim in &grid.hidden_dims {
        for &dropout in &grid.dropouts {
            let settings = model::FitSettings {
                hidden_dim,
                dropout,
                max_epochs: grid.max_epochs,
                patience: grid.patience,
                learning_rate: grid.learning_rate,
                batch_size: grid.batch_size,
            };
            let m = model::fit(
                train.task,
                &train_x.view(),
                &train_y,
                &valid_x.view(),
                &valid_y,
                settings,
                derive_seed(seed, point, train.task as u64 + 100),
            )?;
            if best.as_ref().is_none_or(|b| m.validation_auc > b.validation_auc) {
                best = Some(m);
            }
            point += 1;
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// ROC-AUC of `model` on `labels`, reading inputs from `table`.
pub fn evaluate_consumer(model: &ConsumerModel, table: &EmbeddingTable, labels: &LabeledExamples) -> Result<f64> {
    if model.task != labels.task {
        return Err(Error::Validation(format!("model for {} applied to {}", model.task, labels.task)));
    }
    let x = features(table, labels)?;
    let scores = model.predict(&x.view())?;
    roc_auc(&scores.to_vec(), &labels.labels())
}
