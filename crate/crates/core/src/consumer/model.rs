//! One-hidden-layer MLP consumer trained with cross-entropy and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TaskId;
use crate::error::{Error, Result};
use crate::persist::{self, ArtifactKind};
use crate::tensor::{gather_rows, row_major, Parameters};
use crate::training::{adam_step, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerModel {
    pub task: TaskId,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Per-feature standardisation fitted on the training inputs.
    pub input_mean: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weight: Array1<f64>,
    pub output_bias: Array1<f64>,
    /// Best validation ROC-AUC seen during training.
    pub validation_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MlpGrads {
    hidden_weight: Array2<f64>,
    hidden_bias: Array1<f64>,
    output_weight: Array1<f64>,
    output_bias: Array1<f64>,
}

impl Parameters for ConsumerModel {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("hidden.weight".into(), self.hidden_weight.as_slice().unwrap()),
            ("hidden.bias".into(), self.hidden_bias.as_slice().unwrap()),
            ("output.weight".into(), self.output_weight.as_slice().unwrap()),
            ("output.bias".into(), self.output_bias.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("hidden.weight".into(), self.hidden_weight.as_slice_mut().unwrap()),
            ("hidden.bias".into(), self.hidden_bias.as_slice_mut().unwrap()),
            ("output.weight".into(), self.output_weight.as_slice_mut().unwrap()),
            ("output.bias".into(), self.output_bias.as_slice_mut().unwrap()),
        ]
    }
}

impl Parameters for MlpGrads {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("hidden.weight".into(), self.hidden_weight.as_slice().unwrap()),
            ("hidden.bias".into(), self.hidden_bias.as_slice().unwrap()),
            ("output.weight".into(), self.output_weight.as_slice().unwrap()),
            ("output.bias".into(), self.output_bias.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("hidden.weight".into(), self.hidden_weight.as_slice_mut().unwrap()),
            ("hidden.bias".into(), self.hidden_bias.as_slice_mut().unwrap()),
            ("output.weight".into(), self.output_weight.as_slice_mut().unwrap()),
            ("output.bias".into(), self.output_bias.as_slice_mut().unwrap()),
        ]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl ConsumerModel {
    /// Glorot-uniform weights, zero biases, standardisation fitted on `train_inputs`.
    pub fn init(task: TaskId, train_inputs: &ArrayView2<f64>, hidden_dim: usize, dropout: f64, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || !(0.0..1.0).contains(&dropout) {
            return Err(Error::Validation(format!(
                "consumer needs hidden_dim > 0 and dropout in [0, 1), got {hidden_dim} / {dropout}"
            )));
        }
        let input_dim = train_inputs.ncols();
        let input_mean = train_inputs.mean_axis(Axis(0)).ok_or_else(|| Error::Validation("no training inputs".into()))?;
        let input_scale = train_inputs.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let hidden_weight = Array2::from_shape_simple_fn((input_dim, hidden_dim), || rng.random_range(-limit..limit));
        let limit = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let output_weight = Array1::from_shape_simple_fn(hidden_dim, || rng.random_range(-limit..limit));
        Ok(ConsumerModel {
            task,
            input_dim,
            hidden_dim,
            dropout,
            input_mean,
            input_scale,
            hidden_weight,
            hidden_bias: Array1::zeros(hidden_dim),
            output_weight,
            output_bias: Array1::zeros(1),
            validation_auc: f64::NAN,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        persist::save(path, ArtifactKind::Consumer, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        persist::load(path, ArtifactKind::Consumer)
    }

    fn standardise(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape("consumer input", self.input_dim, x.ncols()));
        }
        Ok((x - &self.input_mean) * &self.input_scale)
    }

    /// Logits with dropout disabled.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        let z = self.standardise(x)?;
        let h = (z.dot(&self.hidden_weight) + &self.hidden_bias).mapv(|v| v.max(0.0));
        Ok(h.dot(&self.output_weight) + self.output_bias[0])
    }

    /// Mean binary cross-entropy and gradients on one batch, with inverted
    /// dropout on the hidden layer.
    pub(crate) fn loss_and_grads(&self, x: &ArrayView2<f64>, y: &[u8], rng: &mut ChaCha8Rng) -> Result<(f64, MlpGrads)> {
        let z = self.standardise(x)?;
        let n = z.nrows() as f64;
        let pre = z.dot(&self.hidden_weight) + &self.hidden_bias;
        let keep = 1.0 - self.dropout;
        let mask = if self.dropout > 0.0 {
            Array2::from_shape_simple_fn(pre.raw_dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        } else {
            Array2::ones(pre.raw_dim())
        };
        let act = pre.mapv(|v| v.max(0.0)) * &mask;
        let logits = act.dot(&self.output_weight) + self.output_bias[0];

        let mut loss = 0.0;
        let mut d_logit = Array1::zeros(logits.len());
        for (r, (&l, &t)) in logits.iter().zip(y).enumerate() {
            let t = t as f64;
            loss += softplus(l) - t * l;
            d_logit[r] = (sigmoid(l) - t) / n;
        }
        loss /= n;

        let output_weight = act.t().dot(&d_logit);
        let output_bias = Array1::from_elem(1, d_logit.sum());
        let mut d_pre = d_logit.insert_axis(Axis(1)).dot(&self.output_weight.view().insert_axis(Axis(0))) * &mask;
        d_pre.zip_mut_with(&pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        let grads = MlpGrads {
            hidden_weight: row_major(z.t().dot(&d_pre)),
            hidden_bias: d_pre.sum_axis(Axis(0)),
            output_weight,
            output_bias,
        };
        Ok((loss, grads))
    }
}

/// Knobs for one consumer fit (one grid point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FitSettings {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Trains one grid point; keeps the parameters of the best validation epoch.
pub(crate) fn fit(
    task: TaskId,
    train_x: &ArrayView2<f64>,
    train_y: &[u8],
    valid_x: &ArrayView2<f64>,
    valid_y: &[u8],
    settings: FitSettings,
    seed: u64,
) -> Result<ConsumerModel> {
    let mut model = ConsumerModel::init(task, train_x, settings.hidden_dim, settings.dropout, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut state = OptimizerState::default();
    let mut best = model.clone();
    best.validation_auc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let batch = if settings.batch_size == 0 { order.len() } else { settings.batch_size };

    for epoch in 0..settings.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let x = gather_rows(train_x, chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = model.loss_and_grads(&x.view(), &y, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("{} consumer loss at epoch {epoch}", task.key())));
            }
            adam_step(&mut model, &grads, &mut state, settings.learning_rate, 0.0)?;
        }
        let auc = crate::evaluation::roc_auc(&model.predict(valid_x)?.to_vec(), valid_y)?;
        if auc > best.validation_auc {
            best = model.clone();
            best.validation_auc = auc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= settings.patience {
                break;
            }
        }
    }
    Ok(best)
}
