//! Minimal differentiable-computation core shared by the forecaster,
//! density model, and policy: dense tensors, a define-by-run reverse-mode
//! tape, Adam, Glorot init, and finite-difference gradient verification.

pub mod fdcheck;
pub mod graph;
pub mod mlp;
pub mod params;
pub mod tensor;

pub use fdcheck::finite_diff_check;
pub use graph::{sigmoid, softplus, Graph, NodeId};
pub use mlp::{Activation, MlpSpec};
pub use params::{glorot_uniform, AdamState, ModelFile, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

/// Smoothing constant for the differentiable absolute value sqrt(x² + ε).
pub const SMOOTH_ABS_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("io error on {0}: {1}")]
    Io(String, String),
}

/// Collect leaf gradients into a name → tensor map after `Graph::backward`.
pub fn grads_by_name(
    graph: &Graph,
    params: &ParamSet,
    nodes: &[NodeId],
    grads: &[Option<Tensor>],
) -> std::collections::BTreeMap<String, Tensor> {
    let mut out = std::collections::BTreeMap::new();
    for (i, (name, t)) in params.iter().enumerate() {
        let g = grads[nodes[i].0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
        out.insert(name.to_string(), g);
    }
    let _ = graph;
    out
}
