//! Forward and backward passes of the mean-concat message-passing encoder.
//!
//! All nodes of the graph (users first, then items) are stacked into one
//! matrix. A layer computes
//! `H' = act([H ‖ mean_N(H)] W + b) = act(H W_self + A H W_neigh + b)`
//! with `A` the row-normalised adjacency of the snapshot, ReLU on hidden
//! layers and no activation on the last one.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::{EmbeddingTable, EncoderParams, NodeId};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Snapshot};
use crate::tensor::row_major;

/// Snapshot neighbourhoods in CSR form plus the layer-0 input features.
#[derive(Debug, Clone)]
pub struct GraphView {
    num_users: usize,
    num_items: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    /// Item rows: multi-hot features. User rows: mean of neighbour items'
    /// features (zero if isolated). Projection is linear, so this equals the
    /// mean of the projected features.
    mixed_features: Array2<f64>,
    users: Vec<u32>,
    items: Vec<u32>,
}

impl GraphView {
    pub fn new(graph: &InteractionGraph, snapshot: &Snapshot) -> Self {
        let nu = graph.num_users();
        let ni = graph.num_items();
        let mut pairs: Vec<(u32, u32)> = graph.interactions()[snapshot.edge_indices()]
            .iter()
            .map(|e| (e.user, e.item))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();

        let n = nu + ni;
        let mut degree = vec![0usize; n];
        for &(u, i) in &pairs {
            degree[u as usize] += 1;
            degree[nu + i as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0u32; offsets[n]];
        for &(u, i) in &pairs {
            let (ur, ir) = (u as usize, nu + i as usize);
            neighbors[fill[ur]] = ir as u32;
            fill[ur] += 1;
            neighbors[fill[ir]] = ur as u32;
            fill[ir] += 1;
        }

        let features = graph.item_feature_matrix();
        let fdim = features.ncols();
        let mut mixed = Array2::zeros((n, fdim));
        mixed.slice_mut(s![nu.., ..]).assign(&features);
        for u in 0..nu {
            let nb = &neighbors[offsets[u]..offsets[u + 1]];
            if nb.is_empty() {
                continue;
            }
            let mut row = mixed.row_mut(u);
            for &v in nb {
                row += &features.row(v as usize - nu);
            }
            row /= nb.len() as f64;
        }

        GraphView {
            num_users: nu,
            num_items: ni,
            offsets,
            neighbors,
            mixed_features: mixed,
            users: snapshot.users.clone(),
            items: snapshot.items.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn snapshot_users(&self) -> &[u32] {
        &self.users
    }

    pub fn snapshot_items(&self) -> &[u32] {
        &self.items
    }

    /// Row of `node` in the stacked node matrix.
    pub fn node_row(&self, node: NodeId) -> Result<usize> {
        match node {
            NodeId::User(u) if (u as usize) < self.num_users => Ok(u as usize),
            NodeId::Item(i) if (i as usize) < self.num_items => Ok(self.num_users + i as usize),
            other => Err(Error::Lookup(format!("node {other:?}"))),
        }
    }

    /// Stacked rows of every snapshot node: users, then items.
    pub fn snapshot_rows(&self) -> Vec<usize> {
        self.users
            .iter()
            .map(|&u| u as usize)
            .chain(self.items.iter().map(|&i| self.num_users + i as usize))
            .collect()
    }

    pub fn degree(&self, row: usize) -> usize {
        self.offsets[row + 1] - self.offsets[row]
    }

    fn neighbors_of(&self, row: usize) -> &[u32] {
        &self.neighbors[self.offsets[row]..self.offsets[row + 1]]
    }

    /// `A · h`: mean over neighbours, zero for isolated nodes.
    pub fn mean_aggregate(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        let d = h.ncols();
        let h = h.as_standard_layout();
        let src = h.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.num_nodes() * d];
        for (v, row) in out.chunks_exact_mut(d.max(1)).enumerate().take(self.num_nodes()) {
            let nb = self.neighbors_of(v);
            if nb.is_empty() {
                continue;
            }
            for &u in nb {
                let u = u as usize * d;
                for (o, x) in row.iter_mut().zip(&src[u..u + d]) {
                    *o += x;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        Array2::from_shape_vec((self.num_nodes(), d), out).expect("sized above")
    }

    /// `Aᵀ · g`.
    pub fn mean_aggregate_transpose(&self, g: &ArrayView2<f64>) -> Array2<f64> {
        let d = g.ncols();
        let g = g.as_standard_layout();
        let src = g.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.num_nodes() * d];
        for v in 0..self.num_nodes() {
            let nb = self.neighbors_of(v);
            if nb.is_empty() {
                continue;
            }
            let inv = 1.0 / nb.len() as f64;
            let gv = &src[v * d..(v + 1) * d];
            for &u in nb {
                let u = u as usize * d;
                for (o, x) in out[u..u + d].iter_mut().zip(gv) {
                    *o += x * inv;
                }
            }
        }
        Array2::from_shape_vec((self.num_nodes(), d), out).expect("sized above")
    }

    pub(crate) fn table_from_output(&self, version: usize, output: &Array2<f64>) -> EmbeddingTable {
        let user_rows: Vec<usize> = self.users.iter().map(|&u| u as usize).collect();
        let item_rows: Vec<usize> = self.items.iter().map(|&i| self.num_users + i as usize).collect();
        EmbeddingTable::new(
            version,
            self.users.clone(),
            output.select(Axis(0), &user_rows),
            self.items.clone(),
            output.select(Axis(0), &item_rows),
        )
        .expect("rows and ids built together")
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Array2<f64>,
    inputs: Vec<Array2<f64>>,
    aggregates: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

pub fn forward(params: &EncoderParams, view: &GraphView) -> Result<Forward> {
    let fdim = view.mixed_features.ncols();
    if params.projection.nrows() != fdim {
        return Err(Error::shape(
            "encoder input features",
            params.projection.nrows(),
            fdim,
        ));
    }
    let h_dim = params.config.hidden_dim;
    let mut h = view.mixed_features.dot(&params.projection);
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut aggregates = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let agg = view.mean_aggregate(&h.view());
        let mut pre = h.dot(&layer.weight.slice(s![..h_dim, ..]));
        pre += &agg.dot(&layer.weight.slice(s![h_dim.., ..]));
        pre += &layer.bias;
        let next = if l == last {
            pre.clone()
        } else {
            pre.mapv(|x| x.max(0.0))
        };
        inputs.push(std::mem::replace(&mut h, next));
        aggregates.push(agg);
        pre_activations.push(pre);
    }
    Ok(Forward {
        output: h,
        inputs,
        aggregates,
        pre_activations,
    })
}

/// Gradients of all encoder parameters given `d_output = ∂L/∂output`.
pub fn backward(params: &EncoderParams, view: &GraphView, fwd: &Forward, d_output: &Array2<f64>) -> EncoderParams {
    let h_dim = params.config.hidden_dim;
    let mut grads = params.zeros_like();
    let last = params.layers.len() - 1;
    let mut g = d_output.clone();
    for l in (0..params.layers.len()).rev() {
        if l != last {
            ndarray::Zip::from(&mut g)
                .and(&fwd.pre_activations[l])
                .for_each(|g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
        }
        let w = &params.layers[l].weight;
        let gl = &mut grads.layers[l];
        gl.weight
            .slice_mut(s![..h_dim, ..])
            .assign(&fwd.inputs[l].t().dot(&g));
        gl.weight
            .slice_mut(s![h_dim.., ..])
            .assign(&fwd.aggregates[l].t().dot(&g));
        gl.bias = g.sum_axis(Axis(0));

        let mut d_in = g.dot(&w.slice(s![..h_dim, ..]).t());
        let d_agg = g.dot(&w.slice(s![h_dim.., ..]).t());
        d_in += &view.mean_aggregate_transpose(&d_agg.view());
        g = d_in;
    }
    grads.projection = row_major(view.mixed_features.t().dot(&g));
    grads
}
