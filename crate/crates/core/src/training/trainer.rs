//! Fitting `M_k` (and `B_k`) for one version according to a method.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use super::losses::{amplification_metric, weighted_alignment_loss};
use super::objective::{joint_objective, AlignmentTarget, BprBatch};
use super::{AlignmentSetPolicy, TrainConfig};
use crate::compat::{BackwardTransform, TransformRegistry};
use crate::encoder::{encode_all, forward, init_params, EmbeddingTable, EncoderParams, EncoderSchedule, GraphView};
use crate::error::{Error, Result};
use crate::graph::{snapshot_at, InteractionGraph, Snapshot, VersionSchedule};
use crate::method::{AlignLoss, MethodSpec, Strategy, TransformChoice};
use crate::tensor::{derive_seed, gather_rows, truncation};

const STREAM_INIT: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Encoder,
    Transform,
}

/// One line of the per-epoch loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub version: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub intended: f64,
    pub align: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VersionArtifacts {
    pub encoder: EncoderParams,
    /// `B_k` for Keep-Latest methods at `k > 0`.
    pub transform: Option<BackwardTransform>,
    /// Outputs of `encoder` on the version-`k` snapshot.
    pub table: EmbeddingTable,
    pub log: Vec<EpochLog>,
}

/// Everything `train_version_on` needs for version `k`.
pub struct VersionInputs<'a> {
    pub k: usize,
    pub graph: &'a InteractionGraph,
    pub snapshot: &'a Snapshot,
    pub view: &'a GraphView,
    /// Snapshot `k-1`, used only by [`AlignmentSetPolicy::PreviousSnapshotNodes`].
    pub prev_snapshot: Option<&'a Snapshot>,
    pub prev_encoder: Option<&'a EncoderParams>,
    /// Keep-All's `M_k` for the same seed. Post-hoc methods would refit
    /// exactly this encoder, so they reuse it when given.
    pub intended_encoder: Option<&'a EncoderParams>,
    pub registry: &'a TransformRegistry,
    pub method: MethodSpec,
    pub architecture: &'a EncoderSchedule,
    pub config: &'a TrainConfig,
}

/// Builds the snapshot and view for version `k`, then trains.
#[allow(clippy::too_many_arguments)]
pub fn train_version(
    k: usize,
    graph: &InteractionGraph,
    schedule: &VersionSchedule,
    prev_encoder: Option<&EncoderParams>,
    registry: &TransformRegistry,
    method: MethodSpec,
    architecture: &EncoderSchedule,
    config: &TrainConfig,
) -> Result<VersionArtifacts> {
    let snapshot = snapshot_at(graph, schedule, k)?;
    let prev_snapshot = if k > 0 { Some(snapshot_at(graph, schedule, k - 1)?) } else { None };
    let view = GraphView::new(graph, &snapshot);
    train_version_on(&VersionInputs {
        k,
        graph,
        snapshot: &snapshot,
        view: &view,
        prev_snapshot: prev_snapshot.as_ref(),
        prev_encoder,
        intended_encoder: None,
        registry,
        method,
        architecture,
        config,
    })
}

pub fn train_version_on(inputs: &VersionInputs<'_>) -> Result<VersionArtifacts> {
    inputs.config.validate()?;
    let k = inputs.k;
    let method = inputs.method;
    let feature_dim = inputs.graph.feature_dim();
    let seed = inputs.config.seed;

    if k == 0 {
        // Every method trains M_0 identically.
        let params = init_params(inputs.architecture.config_at(0, feature_dim), derive_seed(seed, 0, STREAM_INIT))?;
        let (params, _, log) = fit_encoder(inputs, params, None, None)?;
        let table = encode_all(&params, inputs.view)?;
        return Ok(VersionArtifacts {
            encoder: params,
            transform: None,
            table,
            log,
        });
    }

    let prev = inputs.prev_encoder;
    let need_prev = || {
        prev.ok_or_else(|| {
            Error::State(format!(
                "{} at version {k} needs the version {} encoder",
                method.method,
                k - 1
            ))
        })
    };

    match method.strategy {
        Strategy::Frozen => {
            let params = need_prev()?.clone();
            let table = encode_all(&params, inputs.view)?;
            Ok(VersionArtifacts {
                encoder: params,
                transform: None,
                table,
                log: Vec::new(),
            })
        }
        Strategy::Finetune => {
            let mut params = need_prev()?.clone();
            params.config.version = k;
            let (params, _, log) = fit_encoder(inputs, params, None, None)?;
            let table = encode_all(&params, inputs.view)?;
            Ok(VersionArtifacts {
                encoder: params,
                transform: None,
                table,
                log,
            })
        }
        Strategy::IntendedOnly => {
            let params = fresh_params(inputs)?;
            let (params, _, log) = fit_encoder(inputs, params, None, None)?;
            let table = encode_all(&params, inputs.view)?;
            Ok(VersionArtifacts {
                encoder: params,
                transform: None,
                table,
                log,
            })
        }
        Strategy::Posthoc => {
            let prev = need_prev()?;
            let (params, mut log) = match inputs.intended_encoder {
                Some(p) if p.config == inputs.architecture.config_at(k, feature_dim) => (p.clone(), Vec::new()),
                Some(_) => return Err(Error::State(format!("reused encoder does not match version {k}"))),
                None => {
                    let (p, _, log) = fit_encoder(inputs, fresh_params(inputs)?, None, None)?;
                    (p, log)
                }
            };
            let table = encode_all(&params, inputs.view)?;
            let (d_new, d_old) = (params.output_dim(), prev.output_dim());
            let transform = match method.transform {
                TransformChoice::Linear => {
                    let target = alignment_target(inputs, prev, method, d_old)?;
                    let out = forward(&params, inputs.view)?.output;
                    let new_rows = gather_rows(&out.view(), &target.rows);
                    let (b, transform_log) = fit_transform_posthoc(inputs, initial_linear(k, d_old, d_new)?, &new_rows, &target)?;
                    log.extend(transform_log);
                    b
                }
                TransformChoice::NoTrans => BackwardTransform::no_trans(k, d_new, d_old)?,
                TransformChoice::None => {
                    return Err(Error::State(format!("{} has no transform to fit", method.method)))
                }
            };
            Ok(VersionArtifacts {
                encoder: params,
                transform: Some(transform),
                table,
                log,
            })
        }
        Strategy::Joint => {
            let prev = need_prev()?;
            let params = fresh_params(inputs)?;
            let (d_new, d_old) = (params.output_dim(), prev.output_dim());
            let transform = match method.transform {
                TransformChoice::Linear => initial_linear(k, d_old, d_new)?,
                TransformChoice::NoTrans => BackwardTransform::no_trans(k, d_new, d_old)?,
                TransformChoice::None => {
                    return Err(Error::State(format!("{} has no transform to fit", method.method)))
                }
            };
            let target = alignment_target(inputs, prev, method, d_old)?;
            let (params, transform, log) = fit_encoder(inputs, params, Some(transform), Some(&target))?;
            let table = encode_all(&params, inputs.view)?;
            Ok(VersionArtifacts {
                encoder: params,
                transform,
                table,
                log,
            })
        }
    }
}

fn fresh_params(inputs: &VersionInputs<'_>) -> Result<EncoderParams> {
    let cfg = inputs.architecture.config_at(inputs.k, inputs.graph.feature_dim());
    init_params(cfg, derive_seed(inputs.config.seed, inputs.k, STREAM_INIT))
}

/// `[I 0]`: the linear transform starts out as truncation.
fn initial_linear(k: usize, d_old: usize, d_new: usize) -> Result<BackwardTransform> {
    BackwardTransform::linear(k, truncation(d_old, d_new))
}

fn alignment_target(
    inputs: &VersionInputs<'_>,
    prev: &EncoderParams,
    method: MethodSpec,
    d_old: usize,
) -> Result<AlignmentTarget> {
    let view = inputs.view;
    let rows: Vec<usize> = match inputs.config.alignment_set {
        AlignmentSetPolicy::AllSnapshotNodes => view.snapshot_rows(),
        AlignmentSetPolicy::PreviousSnapshotNodes => {
            let prev_snap = inputs
                .prev_snapshot
                .ok_or_else(|| Error::State("previous snapshot required by alignment policy".into()))?;
            let nu = view.num_users();
            prev_snap
                .users
                .iter()
                .map(|&u| u as usize)
                .chain(prev_snap.items.iter().map(|&i| nu + i as usize))
                .collect()
        }
    };
    if rows.is_empty() {
        return Err(Error::Validation("empty alignment set".into()));
    }
    // Targets: frozen M_{k-1} evaluated on the same version-k inputs.
    let prev_out = forward(prev, view)?.output;
    let targets = gather_rows(&prev_out.view(), &rows);
    let metric = match method.loss {
        AlignLoss::SingleStep => None,
        AlignLoss::MultiStep => Some(amplification_metric(inputs.registry, inputs.k, d_old)?),
    };
    Ok(AlignmentTarget { rows, targets, metric })
}

struct EdgeSampler {
    positives: Vec<(usize, usize)>,
    items: Vec<usize>,
    rng: ChaCha8Rng,
}

impl EdgeSampler {
    fn new(inputs: &VersionInputs<'_>) -> Result<Self> {
        let nu = inputs.view.num_users();
        let positives: Vec<(usize, usize)> = inputs.graph.interactions()[inputs.snapshot.edge_indices()]
            .iter()
            .map(|e| (e.user as usize, nu + e.item as usize))
            .collect();
        if positives.is_empty() {
            return Err(Error::Validation(format!("snapshot {} has no edges", inputs.k)));
        }
        let items = inputs.snapshot.items.iter().map(|&i| nu + i as usize).collect();
        Ok(EdgeSampler {
            positives,
            items,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(inputs.config.seed, inputs.k, STREAM_NEGATIVES)),
        })
    }

    /// Shuffled positives with fresh uniform negatives, split into batches.
    fn epoch(&mut self, batch_size: usize, negatives: usize) -> Vec<BprBatch> {
        let mut order: Vec<usize> = (0..self.positives.len()).collect();
        order.shuffle(&mut self.rng);
        let size = if batch_size == 0 { order.len() } else { batch_size };
        order
            .chunks(size)
            .map(|chunk| {
                let mut b = BprBatch::default();
                for &p in chunk {
                    let (u, i) = self.positives[p];
                    for _ in 0..negatives {
                        b.users.push(u);
                        b.pos.push(i);
                        b.neg.push(self.items[self.rng.random_range(0..self.items.len())]);
                    }
                }
                b
            })
            .collect()
    }
}

/// Adam over the encoder (and `B_k`, when one is trained jointly).
fn fit_encoder(
    inputs: &VersionInputs<'_>,
    mut params: EncoderParams,
    mut transform: Option<BackwardTransform>,
    alignment: Option<&AlignmentTarget>,
) -> Result<(EncoderParams, Option<BackwardTransform>, Vec<EpochLog>)> {
    let cfg = inputs.config;
    let mut sampler = EdgeSampler::new(inputs)?;
    let mut state = OptimizerState::default();
    let mut transform_state = OptimizerState::default();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches = sampler.epoch(cfg.batch_size, cfg.negatives_per_positive);
        let (mut intended, mut align, mut total) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let (value, grads) = joint_objective(&params, transform.as_ref(), inputs.view, batch, alignment, cfg.lambda)
                .map_err(|e| match e {
                    Error::Numeric(what) => Error::Numeric(format!("{what} at version {} epoch {epoch}", inputs.k)),
                    other => other,
                })?;
            adam_step(&mut params, &grads.encoder, &mut state, cfg.learning_rate, cfg.weight_decay)?;
            if let (Some(b), Some(g)) = (transform.as_mut(), grads.transform.as_ref()) {
                adam_step(b, g, &mut transform_state, cfg.learning_rate, cfg.weight_decay)?;
            }
            intended += value.intended;
            align += value.align;
            total += value.total;
        }
        let n = batches.len() as f64;
        log.push(EpochLog {
            version: inputs.k,
            phase: Phase::Encoder,
            epoch,
            intended: intended / n,
            align: align / n,
            total: total / n,
        });
    }
    if !params.is_finite() {
        return Err(Error::Numeric(format!("encoder parameters at version {}", inputs.k)));
    }
    Ok((params, transform, log))
}

/// Adam over `B_k` alone with `M_k` frozen.
fn fit_transform_posthoc(
    inputs: &VersionInputs<'_>,
    mut transform: BackwardTransform,
    new_rows: &Array2<f64>,
    target: &AlignmentTarget,
) -> Result<(BackwardTransform, Vec<EpochLog>)> {
    let cfg = inputs.config;
    let mut state = OptimizerState::default();
    let mut log = Vec::with_capacity(cfg.posthoc_epochs);
    for epoch in 0..cfg.posthoc_epochs {
        let out = weighted_alignment_loss(&transform, &new_rows.view(), &target.targets.view(), target.metric.as_ref())?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("post-hoc alignment loss at version {} epoch {epoch}", inputs.k)));
        }
        let grad = BackwardTransform::linear(transform.version, out.d_weight.expect("linear transform"))?;
        adam_step(&mut transform, &grad, &mut state, cfg.posthoc_learning_rate, cfg.weight_decay)?;
        log.push(EpochLog {
            version: inputs.k,
            phase: Phase::Transform,
            epoch,
            intended: 0.0,
            align: out.loss,
            total: out.loss,
        });
    }
    Ok((transform, log))
}
