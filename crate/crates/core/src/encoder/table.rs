use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::{self, ArtifactKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    User(u32),
    Item(u32),
}

/// Per-version node → vector map. Ids are kept sorted so lookups are
/// binary searches and the on-disk form is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub version: usize,
    users: Vec<u32>,
    user_vectors: Array2<f64>,
    items: Vec<u32>,
    item_vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(
        version: usize,
        users: Vec<u32>,
        user_vectors: Array2<f64>,
        items: Vec<u32>,
        item_vectors: Array2<f64>,
    ) -> Result<Self> {
        if users.len() != user_vectors.nrows() || items.len() != item_vectors.nrows() {
            return Err(Error::shape(
                "embedding table rows",
                format!("{} users, {} items", users.len(), items.len()),
                format!("{} user rows, {} item rows", user_vectors.nrows(), item_vectors.nrows()),
            ));
        }
        if user_vectors.ncols() != item_vectors.ncols() {
            return Err(Error::shape(
                "embedding table dims",
                user_vectors.ncols(),
                item_vectors.ncols(),
            ));
        }
        if users.windows(2).any(|w| w[0] >= w[1]) || items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("table ids must be strictly increasing".into()));
        }
        if user_vectors.iter().chain(item_vectors.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("embedding table v{version}")));
        }
        Ok(EmbeddingTable {
            version,
            users,
            user_vectors,
            items,
            item_vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.user_vectors.ncols()
    }

    pub fn users(&self) -> &[u32] {
        &self.users
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn user_matrix(&self) -> ArrayView2<'_, f64> {
        self.user_vectors.view()
    }

    pub fn item_matrix(&self) -> ArrayView2<'_, f64> {
        self.item_vectors.view()
    }

    pub fn user_row(&self, user: u32) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    pub fn item_row(&self, item: u32) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }

    pub fn get(&self, node: NodeId) -> Option<ArrayView1<'_, f64>> {
        match node {
            NodeId::User(u) => self.user_row(u).map(|r| self.user_vectors.row(r)),
            NodeId::Item(i) => self.item_row(i).map(|r| self.item_vectors.row(r)),
        }
    }

    pub fn vector(&self, node: NodeId) -> Result<ArrayView1<'_, f64>> {
        self.get(node)
            .ok_or_else(|| Error::Lookup(format!("{node:?} in table v{}", self.version)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.users
            .iter()
            .map(|&u| NodeId::User(u))
            .chain(self.items.iter().map(|&i| NodeId::Item(i)))
    }

    pub fn len(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked vectors for `nodes`, one row each.
    pub fn rows(&self, nodes: &[NodeId]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((nodes.len(), self.dim()));
        for (r, &node) in nodes.iter().enumerate() {
            out.row_mut(r).assign(&self.vector(node)?);
        }
        Ok(out)
    }

    /// Every vector mapped through `f` (row-wise: `out = rows · fᵀ`).
    pub fn map_linear(&self, version: usize, matrix: &ArrayView2<f64>) -> Result<EmbeddingTable> {
        if matrix.ncols() != self.dim() {
            return Err(Error::shape("table transform", self.dim(), matrix.ncols()));
        }
        EmbeddingTable::new(
            version,
            self.users.clone(),
            self.user_vectors.dot(&matrix.t()),
            self.items.clone(),
            self.item_vectors.dot(&matrix.t()),
        )
    }

    /// Keeps only the nodes for which `keep` is true.
    pub fn restrict(&self, mut keep: impl FnMut(NodeId) -> bool) -> EmbeddingTable {
        let users: Vec<usize> = (0..self.users.len()).filter(|&r| keep(NodeId::User(self.users[r]))).collect();
        let items: Vec<usize> = (0..self.items.len()).filter(|&r| keep(NodeId::Item(self.items[r]))).collect();
        EmbeddingTable {
            version: self.version,
            users: users.iter().map(|&r| self.users[r]).collect(),
            user_vectors: self.user_vectors.select(Axis(0), &users),
            items: items.iter().map(|&r| self.items[r]).collect(),
            item_vectors: self.item_vectors.select(Axis(0), &items),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, ArtifactKind::Table, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: EmbeddingTable = persist::load(path, ArtifactKind::Table)?;
        EmbeddingTable::new(t.version, t.users, t.user_vectors, t.items, t.item_vectors)
    }
}
