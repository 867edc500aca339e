//! The network: backbone, AU nodes, dynamic graph, graph layer, occurrence
//! head, fusion and pain classifier.

pub mod backbone;
pub mod config;
pub mod fusion;
pub mod gnn;
pub mod graph;
pub mod head;
pub mod network;
pub mod nodes;
pub mod occurrence;
pub mod ops;
pub mod params;

pub use config::{Ablation, BackboneSpec, ModelConfig};
pub use graph::{build_knn_graph, AuGraph};
pub use network::{backward_batch, forward, forward_batch, BatchForward, ForwardOutput};
pub use occurrence::{au_occurrence_probs, Occurrence, OCCURRENCE_THRESHOLD};
pub use params::{Group, ModelParams};

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
