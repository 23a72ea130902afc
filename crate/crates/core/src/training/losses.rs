//! Intended-task and alignment losses with exact analytic gradients.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::compat::{BackwardTransform, TransformKind, TransformRegistry};
use crate::encoder::{EmbeddingTable, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{identity, row_major};

/// `ln(1 + e^{-x})` without overflow.
fn softplus_neg(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct BprOutput {
    pub loss: f64,
    pub d_user: Array2<f64>,
    pub d_pos: Array2<f64>,
    pub d_neg: Array2<f64>,
}

/// Mean of `−ln σ(⟨u,i⟩ − ⟨u,j⟩)` over the rows of a batch.
pub fn bpr_loss(users: &ArrayView2<f64>, pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<BprOutput> {
    if users.dim() != pos.dim() || users.dim() != neg.dim() {
        return Err(Error::shape(
            "bpr inputs",
            format!("{:?}", users.dim()),
            format!("{:?} / {:?}", pos.dim(), neg.dim()),
        ));
    }
    let n = users.nrows();
    if n == 0 {
        return Err(Error::Validation("empty BPR batch".into()));
    }
    let diff = pos - neg;
    let margins = (users * &diff).sum_axis(Axis(1));
    let loss: f64 = margins.iter().map(|&m| softplus_neg(m)).sum();
    // d/dmargin of −ln σ(margin) = −σ(−margin)
    let coeff = margins.mapv(|m| -sigmoid(-m) / n as f64).insert_axis(Axis(1));
    let d_user = diff * &coeff;
    let d_pos = users * &coeff;
    let d_neg = -&d_pos;
    Ok(BprOutput {
        loss: loss / n as f64,
        d_user,
        d_pos,
        d_neg,
    })
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub loss: f64,
    /// Gradient w.r.t. the new-version rows `z_k`.
    pub d_new: Array2<f64>,
    /// Gradient w.r.t. `W_k`; `None` for NoTrans.
    pub d_weight: Option<Array2<f64>>,
}

/// `(1/|X|) Σ_x δ(x)ᵀ Q δ(x)` with `δ = B_k(z_k) − z_{k-1}`.
///
/// `Q = I` is the single-step loss; the multi-step loss uses the averaged
/// historical metric from [`amplification_metric`].
pub fn weighted_alignment_loss(
    transform: &BackwardTransform,
    new_rows: &ArrayView2<f64>,
    old_rows: &ArrayView2<f64>,
    metric: Option<&Array2<f64>>,
) -> Result<AlignOutput> {
    let n = new_rows.nrows();
    if n == 0 {
        return Err(Error::Validation("empty alignment set".into()));
    }
    if old_rows.nrows() != n {
        return Err(Error::shape("alignment targets", n, old_rows.nrows()));
    }
    if old_rows.ncols() != transform.out_dim() {
        return Err(Error::shape("alignment targets dim", transform.out_dim(), old_rows.ncols()));
    }
    let mapped = transform.apply_rows(new_rows)?;
    let delta = &mapped - old_rows;
    let weighted = match metric {
        Some(q) => {
            if q.dim() != (delta.ncols(), delta.ncols()) {
                return Err(Error::shape("alignment metric", delta.ncols(), q.nrows()));
            }
            delta.dot(q)
        }
        None => delta.clone(),
    };
    let mut loss = 0.0;
    Zip::from(&delta).and(&weighted).for_each(|a, b| loss += a * b);
    loss /= n as f64;

    // Q is symmetric, so d/dδ = (2/n) δ Q.
    let d_delta = weighted * (2.0 / n as f64);
    let (d_new, d_weight) = match &transform.kind {
        TransformKind::Linear(w) => (d_delta.dot(w), Some(row_major(d_delta.t().dot(new_rows)))),
        TransformKind::NoTrans { out_dim, .. } => {
            let mut d = Array2::zeros(new_rows.raw_dim());
            d.slice_mut(s![.., ..*out_dim]).assign(&d_delta);
            (d, None)
        }
    };
    Ok(AlignOutput { loss, d_new, d_weight })
}

/// `(1/|X|) Σ_x ‖B_k(z_k) − z_{k-1}‖²`.
pub fn single_step_alignment_loss(
    transform: &BackwardTransform,
    new_rows: &ArrayView2<f64>,
    old_rows: &ArrayView2<f64>,
) -> Result<AlignOutput> {
    weighted_alignment_loss(transform, new_rows, old_rows, None)
}

/// `Q = (1/k) Σ_{j<k} (W^j_{k-1})ᵀ W^j_{k-1}` with `W^{k-1}_{k-1} = I`, for
/// training `B_k` against a registry that holds `B_1..B_{k-1}`.
pub fn amplification_metric(registry: &TransformRegistry, k: usize, prev_dim: usize) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::range("alignment version", 0, "1.."));
    }
    if registry.latest_version() != k - 1 {
        return Err(Error::State(format!(
            "multi-step loss for B_{k} needs B_1..B_{}, registry holds up to B_{}",
            k - 1,
            registry.latest_version()
        )));
    }
    if k > 1 && registry.dim(k - 1) != Some(prev_dim) {
        return Err(Error::shape("previous version dim", prev_dim, registry.dim(k - 1).unwrap_or(0)));
    }
    let mut q = identity(prev_dim);
    for j in 0..k - 1 {
        let c = registry.compose(j, k - 1)?;
        q += &c.t().dot(c);
    }
    q /= k as f64;
    Ok(q)
}

/// `(1/|X|) Σ_x (1/k) Σ_{j<k} ‖W^j_{k-1} δ_k(x)‖²`.
pub fn multi_step_alignment_loss(
    registry: &TransformRegistry,
    transform: &BackwardTransform,
    new_rows: &ArrayView2<f64>,
    old_rows: &ArrayView2<f64>,
) -> Result<AlignOutput> {
    let q = amplification_metric(registry, transform.version, transform.out_dim())?;
    weighted_alignment_loss(transform, new_rows, old_rows, Some(&q))
}

/// Gathers the alignment set from two tables as row stacks.
pub fn alignment_rows(
    new_table: &EmbeddingTable,
    old_table: &EmbeddingTable,
    nodes: &[NodeId],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if nodes.is_empty() {
        return Err(Error::Validation("empty alignment set".into()));
    }
    Ok((new_table.rows(nodes)?, old_table.rows(nodes)?))
}

/// Mean squared norm of rows, used in logs.
pub fn mean_sq_row_norm(m: &ArrayView2<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.map_axis(Axis(1), |r| r.dot(&r)).mean().unwrap_or(0.0)
}
