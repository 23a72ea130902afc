//! Backward transformations between embedding versions and their
//! composition.
//!
//! `B_k` maps version-`k` vectors (length `D_k`) to version `k-1` (length
//! `D_{k-1}`). The registry keeps `B_1..B_k` and, for every `j < k`, the
//! precomputed product `W^j_k = W_{j+1} ⋯ W_k` so that converting a vector to
//! any historical version is one matrix–vector product.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, NodeId};
use crate::error::{Error, Result};
use crate::persist::{self, ArtifactKind};
use crate::tensor::{identity, truncation, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransformKind {
    /// `W_k ∈ R^{D_{k-1} × D_k}`.
    Linear(Array2<f64>),
    /// Keep the first `out_dim` coordinates.
    NoTrans { in_dim: usize, out_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardTransform {
    pub version: usize,
    pub kind: TransformKind,
}

impl BackwardTransform {
    pub fn linear(version: usize, weight: Array2<f64>) -> Result<Self> {
        if weight.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("B_{version} weight")));
        }
        Ok(BackwardTransform {
            version,
            kind: TransformKind::Linear(weight),
        })
    }

    pub fn no_trans(version: usize, in_dim: usize, out_dim: usize) -> Result<Self> {
        if out_dim > in_dim {
            return Err(Error::Validation(format!(
                "NoTrans B_{version} cannot widen {in_dim} -> {out_dim}"
            )));
        }
        Ok(BackwardTransform {
            version,
            kind: TransformKind::NoTrans { in_dim, out_dim },
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, TransformKind::Linear(_))
    }

    pub fn in_dim(&self) -> usize {
        match &self.kind {
            TransformKind::Linear(w) => w.ncols(),
            TransformKind::NoTrans { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            TransformKind::Linear(w) => w.nrows(),
            TransformKind::NoTrans { out_dim, .. } => *out_dim,
        }
    }

    /// The transform as a `D_{k-1} × D_k` matrix (truncation for NoTrans).
    pub fn matrix(&self) -> Array2<f64> {
        match &self.kind {
            TransformKind::Linear(w) => w.clone(),
            TransformKind::NoTrans { in_dim, out_dim } => truncation(*out_dim, *in_dim),
        }
    }

    pub fn weight(&self) -> Option<&Array2<f64>> {
        match &self.kind {
            TransformKind::Linear(w) => Some(w),
            TransformKind::NoTrans { .. } => None,
        }
    }

    pub fn apply(&self, v: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.in_dim() {
            return Err(Error::shape("backward transform input", self.in_dim(), v.len()));
        }
        Ok(match &self.kind {
            TransformKind::Linear(w) => w.dot(v),
            TransformKind::NoTrans { out_dim, .. } => v.slice(ndarray::s![..*out_dim]).to_owned(),
        })
    }

    /// Row-wise application to a stack of vectors.
    pub fn apply_rows(&self, rows: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.in_dim() {
            return Err(Error::shape("backward transform input", self.in_dim(), rows.ncols()));
        }
        Ok(match &self.kind {
            TransformKind::Linear(w) => rows.dot(&w.t()),
            TransformKind::NoTrans { out_dim, .. } => rows.slice(ndarray::s![.., ..*out_dim]).to_owned(),
        })
    }
}

impl Parameters for BackwardTransform {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        match &self.kind {
            TransformKind::Linear(w) => vec![(format!("B_{}", self.version), w.as_slice().unwrap())],
            TransformKind::NoTrans { .. } => Vec::new(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let name = format!("B_{}", self.version);
        match &mut self.kind {
            TransformKind::Linear(w) => vec![(name, w.as_slice_mut().unwrap())],
            TransformKind::NoTrans { .. } => Vec::new(),
        }
    }
}

/// `B_1..B_k` plus every composite `W^j_k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformRegistry {
    transforms: Vec<BackwardTransform>,
    composites: BTreeMap<(usize, usize), Array2<f64>>,
}

impl TransformRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Newest version reachable through the registry (`0` when empty).
    pub fn latest_version(&self) -> usize {
        self.transforms.len()
    }

    pub fn transforms(&self) -> &[BackwardTransform] {
        &self.transforms
    }

    pub fn transform(&self, k: usize) -> Result<&BackwardTransform> {
        if k == 0 {
            return Err(Error::range("transform version", 0, "1.."));
        }
        self.transforms
            .get(k - 1)
            .ok_or_else(|| Error::State(format!("missing backward transform B_{k}")))
    }

    /// Embedding dimension `D_v` of version `v` as seen by the chain.
    pub fn dim(&self, v: usize) -> Option<usize> {
        if v < self.transforms.len() {
            Some(self.transforms[v].out_dim())
        } else if v == self.transforms.len() {
            self.transforms.last().map(|t| t.in_dim())
        } else {
            None
        }
    }

    /// Appends `B_k` (k = latest + 1) and eagerly extends every composite
    /// `W^j_k = W^j_{k-1} · W_k`.
    pub fn register(&mut self, transform: BackwardTransform) -> Result<()> {
        let k = self.latest_version() + 1;
        if transform.version != k {
            return Err(Error::State(format!(
                "expected B_{k}, got B_{}",
                transform.version
            )));
        }
        if let Some(prev) = self.transforms.last() {
            if transform.out_dim() != prev.in_dim() {
                return Err(Error::shape("chained transform output", prev.in_dim(), transform.out_dim()));
            }
        }
        let w = transform.matrix();
        for j in 0..k - 1 {
            let prev = &self.composites[&(j, k - 1)];
            let next = prev.dot(&w);
            self.composites.insert((j, k), next);
        }
        self.composites.insert((k - 1, k), w);
        self.transforms.push(transform);
        Ok(())
    }

    /// The composite `W^j_k` for `j < k <= latest`.
    pub fn compose(&self, j: usize, k: usize) -> Result<&Array2<f64>> {
        if j >= k {
            return Err(Error::Range {
                what: "source version",
                value: j as i64,
                valid: format!("0..{k}"),
            });
        }
        if k > self.latest_version() {
            return Err(Error::State(format!(
                "no backward chain to version {k} (latest B_{})",
                self.latest_version()
            )));
        }
        Ok(&self.composites[&(j, k)])
    }

    /// `W^j_k`, with `W^k_k = I`.
    pub fn compose_or_identity(&self, j: usize, k: usize) -> Result<Array2<f64>> {
        if j == k {
            let d = self
                .dim(k)
                .ok_or_else(|| Error::State(format!("unknown dimension of version {k}")))?;
            return Ok(identity(d));
        }
        self.compose(j, k).cloned()
    }

    /// Recomputes every composite from the links and compares bitwise.
    pub fn cache_is_coherent(&self) -> bool {
        let mut fresh = TransformRegistry::new();
        for t in &self.transforms {
            if fresh.register(t.clone()).is_err() {
                return false;
            }
        }
        fresh.composites == self.composites
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, ArtifactKind::Registry, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reg: TransformRegistry = persist::load(path, ArtifactKind::Registry)?;
        if !reg.cache_is_coherent() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "composite cache disagrees with stored transforms".into(),
            });
        }
        Ok(reg)
    }
}

/// Converts a version-`k` table into version-`j` compatible vectors
/// `z̃_j = W^j_k z_k`.
pub fn to_version(registry: &TransformRegistry, table: &EmbeddingTable, j: usize) -> Result<EmbeddingTable> {
    let k = table.version;
    if j >= k {
        return Err(Error::Range {
            what: "target version",
            value: j as i64,
            valid: format!("0..{k}"),
        });
    }
    let w = registry.compose(j, k)?;
    if w.ncols() != table.dim() {
        return Err(Error::shape("table dimension", w.ncols(), table.dim()));
    }
    table.map_linear(j, &w.view())
}

/// `δ_k(x) = B_k(z_k) − z_{k-1}`.
pub fn single_step_error(
    transform: &BackwardTransform,
    table_k: &EmbeddingTable,
    table_prev: &EmbeddingTable,
    node: NodeId,
) -> Result<Array1<f64>> {
    let mapped = transform.apply(&table_k.vector(node)?)?;
    let target = table_prev.vector(node)?;
    if mapped.len() != target.len() {
        return Err(Error::shape("previous-version vector", mapped.len(), target.len()));
    }
    Ok(mapped - target)
}

/// Per-node alignment errors between two versions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentErrorRecord {
    pub from_version: usize,
    pub to_version: usize,
    pub per_node: Vec<(NodeId, Array1<f64>)>,
    pub mean_l2: f64,
}

/// Multi-step errors `δ^j_k(x) = W^j_k z_k − z_j` for each node.
pub fn multi_step_errors(
    registry: &TransformRegistry,
    table_k: &EmbeddingTable,
    table_j: &EmbeddingTable,
    nodes: &[NodeId],
) -> Result<AlignmentErrorRecord> {
    let (j, k) = (table_j.version, table_k.version);
    let w = registry.compose(j, k)?;
    let mut per_node = Vec::with_capacity(nodes.len());
    let mut total = 0.0;
    for &node in nodes {
        let err = w.dot(&table_k.vector(node)?) - table_j.vector(node)?;
        total += err.dot(&err).sqrt();
        per_node.push((node, err));
    }
    let mean_l2 = if nodes.is_empty() { 0.0 } else { total / nodes.len() as f64 };
    Ok(AlignmentErrorRecord {
        from_version: k,
        to_version: j,
        per_node,
        mean_l2,
    })
}

/// `δ^j_k(x)` rebuilt from single-step errors, with each amplified term.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    pub total: Array1<f64>,
    /// `W^j_{m-1} δ_m(x)` for `m = j+1..=k`.
    pub terms: Vec<Array1<f64>>,
}

/// `δ^j_k = δ_{j+1} + W^j_{j+1} δ_{j+2} + ⋯ + W^j_{k-1} δ_k`.
///
/// `single_step` holds `δ_{j+1}(x), …, δ_k(x)` in that order.
pub fn error_decomposition(
    registry: &TransformRegistry,
    single_step: &[Array1<f64>],
    j: usize,
    k: usize,
) -> Result<ErrorDecomposition> {
    if j >= k {
        return Err(Error::Range {
            what: "source version",
            value: j as i64,
            valid: format!("0..{k}"),
        });
    }
    if single_step.len() != k - j {
        return Err(Error::Validation(format!(
            "need {} single-step errors for versions {}..={k}, got {}",
            k - j,
            j + 1,
            single_step.len()
        )));
    }
    let mut terms = Vec::with_capacity(k - j);
    for (offset, delta) in single_step.iter().enumerate() {
        let m = j + 1 + offset;
        let term = if m - 1 == j {
            delta.clone()
        } else {
            let w = registry.compose(j, m - 1)?;
            if w.ncols() != delta.len() {
                return Err(Error::shape("single-step error", w.ncols(), delta.len()));
            }
            w.dot(delta)
        };
        terms.push(term);
    }
    let mut total = Array1::zeros(terms[0].len());
    for t in &terms {
        if t.len() != total.len() {
            return Err(Error::shape("amplified error term", total.len(), t.len()));
        }
        total += t;
    }
    Ok(ErrorDecomposition { total, terms })
}

/// Mean multi-step error norm for every version pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTrace {
    /// `(j, k, mean ‖δ^j_k‖)` for all `j < k`, ordered by `(k, j)`.
    pub entries: Vec<(usize, usize, f64)>,
}

impl GrowthTrace {
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|&&(a, b, _)| a == j && b == k)
            .map(|e| e.2)
    }
}

/// Requires every version's table evaluated on the same inputs, so it is
/// only available when all versions were kept.
pub fn error_growth_trace(
    registry: &TransformRegistry,
    tables: &[EmbeddingTable],
    nodes: &[NodeId],
) -> Result<GrowthTrace> {
    let latest = registry.latest_version();
    if tables.len() != latest + 1 {
        return Err(Error::State(format!(
            "growth trace needs tables for versions 0..={latest}, got {}",
            tables.len()
        )));
    }
    for (v, t) in tables.iter().enumerate() {
        if t.version != v {
            return Err(Error::State(format!("table {v} is tagged version {}", t.version)));
        }
    }
    let mut entries = Vec::new();
    for k in 1..=latest {
        for j in 0..k {
            let rec = multi_step_errors(registry, &tables[k], &tables[j], nodes)?;
            entries.push((j, k, rec.mean_l2));
        }
    }
    Ok(GrowthTrace { entries })
}
