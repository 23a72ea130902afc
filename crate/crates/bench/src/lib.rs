//! Fixtures shared by the criterion benches.

use bcalign_core::graph::{generate_synthetic, snapshot_at};
use bcalign_core::{BackwardTransform, EmbeddingTable, InteractionGraph, Snapshot, SyntheticSpec, TransformRegistry, VersionSchedule};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The desk-scale synthetic graph and its last snapshot of the standard schedule.
pub fn desk_graph() -> (InteractionGraph, Snapshot) {
    let graph = generate_synthetic(&SyntheticSpec {
        seed: 0,
        num_users: 500,
        num_items: 200,
        num_interactions: 20_000,
        feature_dim: 32,
        latent_dim: 8,
    })
    .expect("valid spec");
    let schedule = VersionSchedule::standard();
    let snapshot = snapshot_at(&graph, &schedule, schedule.last_version()).expect("version exists");
    (graph, snapshot)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Linear chain over versions with the given widths.
pub fn random_chain(dims: &[usize], seed: u64) -> TransformRegistry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = TransformRegistry::new();
    for k in 1..dims.len() {
        let w = uniform(&mut rng, dims[k - 1], dims[k]) / (dims[k] as f64).sqrt();
        reg.register(BackwardTransform::linear(k, w).expect("finite")).expect("consistent dims");
    }
    reg
}

pub fn random_table(version: usize, users: usize, items: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = uniform(&mut rng, users, dim);
    let i = uniform(&mut rng, items, dim);
    EmbeddingTable::new(version, (0..users as u32).collect(), u, (0..items as u32).collect(), i).expect("matching rows")
}
