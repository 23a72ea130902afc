//! The versioned graph encoder: mean-aggregation message passing over the
//! bipartite snapshot, one architecture per version.

mod sage;
mod table;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Snapshot};
use crate::persist::{self, ArtifactKind};
use crate::tensor::Parameters;

pub use sage::{backward, forward, Forward, GraphView};
pub use table::{EmbeddingTable, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub version: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_feature_dim: usize,
}

impl EncoderConfig {
    /// Embedding dimension `D_k`.
    pub fn output_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Validation(format!(
                "encoder needs at least one layer and a positive width, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// How the architecture grows from one version to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthSchedule {
    /// Width added per version.
    pub dim_step: usize,
    /// Last version at which the width still grows; `None` grows forever.
    pub dim_growth_until: Option<usize>,
    /// Version from which `extra_layers` are added.
    pub deepen_at: Option<usize>,
    pub extra_layers: usize,
}

impl Default for GrowthSchedule {
    fn default() -> Self {
        GrowthSchedule {
            dim_step: 64,
            dim_growth_until: None,
            deepen_at: Some(2),
            extra_layers: 1,
        }
    }
}

impl GrowthSchedule {
    /// Width grows only until version 2, as for the smaller grocery models.
    pub fn capped_at_two() -> Self {
        GrowthSchedule {
            dim_growth_until: Some(2),
            ..Default::default()
        }
    }

    /// Architecture stays fixed at the base configuration.
    pub fn frozen() -> Self {
        GrowthSchedule {
            dim_step: 0,
            dim_growth_until: None,
            deepen_at: None,
            extra_layers: 0,
        }
    }

    pub fn config_at(&self, base: &EncoderConfig, k: usize) -> EncoderConfig {
        let steps = self.dim_growth_until.map_or(k, |cap| k.min(cap));
        let deeper = self.deepen_at.is_some_and(|at| k >= at);
        EncoderConfig {
            version: k,
            num_layers: base.num_layers + if deeper { self.extra_layers } else { 0 },
            hidden_dim: base.hidden_dim + self.dim_step * steps,
            input_feature_dim: base.input_feature_dim,
        }
    }
}

/// Base architecture at version 0 plus its growth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSchedule {
    pub base_layers: usize,
    pub base_hidden_dim: usize,
    #[serde(default)]
    pub growth: GrowthSchedule,
}

impl Default for EncoderSchedule {
    fn default() -> Self {
        EncoderSchedule {
            base_layers: 2,
            base_hidden_dim: 256,
            growth: GrowthSchedule::default(),
        }
    }
}

impl EncoderSchedule {
    pub fn base(&self, input_feature_dim: usize) -> EncoderConfig {
        EncoderConfig {
            version: 0,
            num_layers: self.base_layers,
            hidden_dim: self.base_hidden_dim,
            input_feature_dim,
        }
    }

    pub fn config_at(&self, k: usize, input_feature_dim: usize) -> EncoderConfig {
        self.growth.config_at(&self.base(input_feature_dim), k)
    }
}

/// Version-`k` configuration under the default growth schedule.
pub fn schedule_config(base: &EncoderConfig, k: usize) -> EncoderConfig {
    GrowthSchedule::default().config_at(base, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    /// `(2 · in_dim) × out_dim`; the top half acts on the node's own state,
    /// the bottom half on the neighbour mean.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One encoder version `M_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// `input_feature_dim × hidden_dim` projection of item multi-hot features.
    pub projection: Array2<f64>,
    pub layers: Vec<SageLayer>,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Self {
        let h = config.hidden_dim;
        EncoderParams {
            config,
            projection: Array2::zeros((config.input_feature_dim, h)),
            layers: (0..config.num_layers)
                .map(|_| SageLayer {
                    weight: Array2::zeros((2 * h, h)),
                    bias: Array1::zeros(h),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams::zeros(self.config)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        persist::save(path, ArtifactKind::Encoder, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        persist::load(path, ArtifactKind::Encoder)
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("projection".to_string(), self.projection.as_slice().unwrap())];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_slice().unwrap()));
            out.push((format!("layer{l}.bias"), layer.bias.as_slice().unwrap()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("projection".to_string(), self.projection.as_slice_mut().unwrap())];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_slice_mut().unwrap()));
            out.push((format!("layer{l}.bias"), layer.bias.as_slice_mut().unwrap()));
        }
        out
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

/// Glorot-uniform weights (variance `2 / (fan_in + fan_out)`), zero biases.
pub fn init_params(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let projection = glorot_uniform(&mut rng, config.input_feature_dim, h);
    let layers = (0..config.num_layers)
        .map(|_| SageLayer {
            weight: glorot_uniform(&mut rng, 2 * h, h),
            bias: Array1::zeros(h),
        })
        .collect();
    Ok(EncoderParams {
        config,
        projection,
        layers,
    })
}

/// Embedding of a single node, computed on the neighbourhoods of `view`.
pub fn encode(params: &EncoderParams, view: &GraphView, node: NodeId) -> Result<Array1<f64>> {
    let row = view.node_row(node)?;
    let out = forward(params, view)?;
    Ok(out.output.row(row).to_owned())
}

/// Embeddings for every user and item in the snapshot behind `view`.
pub fn encode_all(params: &EncoderParams, view: &GraphView) -> Result<EmbeddingTable> {
    let out = forward(params, view)?;
    Ok(view.table_from_output(params.config.version, &out.output))
}

/// Convenience: build the view for `snapshot` and encode every node in it.
pub fn encode_snapshot(params: &EncoderParams, graph: &InteractionGraph, snapshot: &Snapshot) -> Result<EmbeddingTable> {
    encode_all(params, &GraphView::new(graph, snapshot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(layers: usize, dim: usize) -> EncoderConfig {
        EncoderConfig {
            version: 0,
            num_layers: layers,
            hidden_dim: dim,
            input_feature_dim: 10,
        }
    }

    #[test]
    fn default_schedule_grows_width_and_depth() {
        let b = base(2, 256);
        let cfgs: Vec<_> = (0..5).map(|k| schedule_config(&b, k)).collect();
        let dims: Vec<_> = cfgs.iter().map(|c| c.output_dim()).collect();
        let layers: Vec<_> = cfgs.iter().map(|c| c.num_layers).collect();
        assert_eq!(dims, vec![256, 320, 384, 448, 512]);
        assert_eq!(layers, vec![2, 2, 3, 3, 3]);
        assert_eq!(schedule_config(&b, 0), b);
    }

    #[test]
    fn capped_schedule() {
        let b = base(1, 256);
        let s = GrowthSchedule::capped_at_two();
        let dims: Vec<_> = (0..5).map(|k| s.config_at(&b, k).hidden_dim).collect();
        let layers: Vec<_> = (0..5).map(|k| s.config_at(&b, k).num_layers).collect();
        assert_eq!(dims, vec![256, 320, 384, 384, 384]);
        assert_eq!(layers, vec![1, 1, 2, 2, 2]);
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let cfg = base(2, 16);
        let a = init_params(cfg, 11).unwrap();
        assert_eq!(a, init_params(cfg, 11).unwrap());
        assert_ne!(a, init_params(cfg, 12).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(init_params(base(0, 16), 1).is_err());
    }

    #[test]
    fn init_variance_matches_glorot() {
        // A square 256×256 block; use the projection with a wide input.
        let cfg = EncoderConfig {
            version: 0,
            num_layers: 1,
            hidden_dim: 256,
            input_feature_dim: 256,
        };
        let p = init_params(cfg, 5).unwrap();
        let w = &p.projection;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / 512.0;
        assert!((var - expected).abs() / expected < 0.2, "var {var}");
    }
}
