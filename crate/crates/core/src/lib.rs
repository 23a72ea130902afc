//! Backward-compatible embedding versioning for evolving graph encoders.
//!
//! A sequence of encoders `M_0, M_1, …` is trained on link prediction over a
//! growing interaction graph. Each new version `M_k` comes with a linear
//! backward transform `B_k` so that downstream consumers trained once on
//! `M_0`'s embeddings keep working: `z̃_0 = W^0_k z_k`.

pub mod compat;
pub mod consumer;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod method;
pub mod persist;
pub mod tensor;
pub mod training;

pub use compat::{BackwardTransform, TransformKind, TransformRegistry};
pub use consumer::{ConsumerGrid, ConsumerModel, TaskId};
pub use encoder::{EmbeddingTable, EncoderConfig, EncoderParams, EncoderSchedule, GrowthSchedule, NodeId};
pub use error::{Error, Result};
pub use evaluation::{BenchmarkConfig, MethodRun, Reference, SummaryRow};
pub use graph::{InteractionGraph, Snapshot, SyntheticSpec, VersionSchedule};
pub use method::{Method, MethodSpec};
pub use training::TrainConfig;
