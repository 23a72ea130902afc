//! The joint objective `L_k(M_k) + λ · L_align(B_k ∘ M_k, M_{k-1})` and its
//! gradients through the encoder.

use ndarray::Array2;

use super::losses::{bpr_loss, weighted_alignment_loss};
use crate::compat::{BackwardTransform, TransformKind};
use crate::encoder::{backward, forward, EncoderParams, GraphView};
use crate::error::{Error, Result};
use crate::tensor::{gather_rows, scatter_add_rows};

/// Triples of stacked node rows `(user, positive item, negative item)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BprBatch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl BprBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Frozen previous-version outputs over the alignment set.
#[derive(Debug, Clone)]
pub struct AlignmentTarget {
    /// Stacked node rows of the alignment set.
    pub rows: Vec<usize>,
    /// `z_{k-1}` for each row, computed by the frozen `M_{k-1}`.
    pub targets: Array2<f64>,
    /// Multi-step metric `Q`; `None` for the single-step loss.
    pub metric: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub intended: f64,
    pub align: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub encoder: EncoderParams,
    /// Zero-sized for NoTrans or when no transform is trained.
    pub transform: Option<BackwardTransform>,
}

/// Value and gradients of the joint objective on one BPR batch.
///
/// With `alignment = None` (or `lambda = 0`) this is the intended loss alone.
/// The alignment targets are constants, so no gradient reaches `M_{k-1}`.
pub fn joint_objective(
    encoder: &EncoderParams,
    transform: Option<&BackwardTransform>,
    view: &GraphView,
    batch: &BprBatch,
    alignment: Option<&AlignmentTarget>,
    lambda: f64,
) -> Result<(ObjectiveValue, ObjectiveGrads)> {
    if lambda < 0.0 {
        return Err(Error::Validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let fwd = forward(encoder, view)?;
    let out = fwd.output.view();
    let mut d_out = Array2::zeros(fwd.output.raw_dim());

    let users = gather_rows(&out, &batch.users);
    let pos = gather_rows(&out, &batch.pos);
    let neg = gather_rows(&out, &batch.neg);
    let bpr = bpr_loss(&users.view(), &pos.view(), &neg.view())?;
    scatter_add_rows(&mut d_out, &batch.users, &bpr.d_user.view());
    scatter_add_rows(&mut d_out, &batch.pos, &bpr.d_pos.view());
    scatter_add_rows(&mut d_out, &batch.neg, &bpr.d_neg.view());

    let mut align = 0.0;
    let mut d_transform = None;
    if let Some(target) = alignment {
        let transform = transform.ok_or_else(|| Error::State("alignment requested without a transform".into()))?;
        let new_rows = gather_rows(&out, &target.rows);
        let a = weighted_alignment_loss(transform, &new_rows.view(), &target.targets.view(), target.metric.as_ref())?;
        align = a.loss;
        scatter_add_rows(&mut d_out, &target.rows, &(a.d_new * lambda).view());
        d_transform = a.d_weight.map(|dw| BackwardTransform {
            version: transform.version,
            kind: TransformKind::Linear(dw * lambda),
        });
    }
    let total = bpr.loss + lambda * align;
    if !total.is_finite() {
        return Err(Error::Numeric("joint objective".into()));
    }

    let encoder_grads = backward(encoder, view, &fwd, &d_out);
    Ok((
        ObjectiveValue {
            intended: bpr.loss,
            align,
            total,
        },
        ObjectiveGrads {
            encoder: encoder_grads,
            transform: d_transform,
        },
    ))
}
