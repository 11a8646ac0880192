//! Plain feed-forward blocks: affine → activation per hidden layer, affine
//! output. One spec drives initialisation, fast inference, and tape forward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{glorot_uniform, ParamSet};
use super::tensor::Tensor;
use super::NumericError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths including input and output, e.g. [2952, 256, 256, 10].
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        MlpSpec { dims, activation }
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.dims.len() - 1 {
            names.push(format!("{prefix}w{l}"));
            names.push(format!("{prefix}b{l}"));
        }
        names
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_into(&self, params: &mut ParamSet, prefix: &str, rng: &mut ChaCha8Rng) {
        for l in 0..self.dims.len() - 1 {
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            params.insert(&format!("{prefix}w{l}"), glorot_uniform(fi, fo, rng));
            params.insert(&format!("{prefix}b{l}"), Tensor::zeros(1, fo));
        }
    }

    pub fn init(&self, seed: u64, prefix: &str) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(seed);
        self.init_into(&mut params, prefix, &mut rng);
        params
    }

    /// Batched inference without a tape: rows of `input` are samples.
    pub fn apply_batch(
        &self,
        params: &ParamSet,
        prefix: &str,
        input: &Tensor,
    ) -> Result<Tensor, NumericError> {
        if input.cols != self.dims[0] {
            return Err(NumericError::ShapeMismatch {
                what: "mlp input",
                expected: self.dims[0],
                got: input.cols,
            });
        }
        let mut h = input.clone();
        let last = self.dims.len() - 2;
        for l in 0..=last {
            let w = params.get(&format!("{prefix}w{l}"));
            let b = params.get(&format!("{prefix}b{l}"));
            let mut z = h.matmul(w);
            for r in 0..z.rows {
                let row = z.row_mut(r);
                for (v, bv) in row.iter_mut().zip(&b.data) {
                    *v += bv;
                }
            }
            if l < last {
                for v in z.data.iter_mut() {
                    *v = match self.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                        Activation::Sigmoid => super::graph::sigmoid(*v),
                    };
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper.
    pub fn apply(
        &self,
        params: &ParamSet,
        prefix: &str,
        input: &[f64],
    ) -> Result<Vec<f64>, NumericError> {
        let t = Tensor::row_vector(input.to_vec());
        Ok(self.apply_batch(params, prefix, &t)?.data)
    }

    /// Tape forward; `param_nodes` must follow `param_names` order.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        param_nodes: &[NodeId],
        input: NodeId,
    ) -> NodeId {
        assert_eq!(param_nodes.len(), 2 * (self.dims.len() - 1));
        let mut h = input;
        let last = self.dims.len() - 2;
        for l in 0..=last {
            let w = param_nodes[2 * l];
            let b = param_nodes[2 * l + 1];
            let z = g.matmul(h, w);
            let z = g.add_row(z, b);
            h = if l < last {
                match self.activation {
                    Activation::Relu => g.relu(z),
                    Activation::Tanh => g.tanh(z),
                    Activation::Sigmoid => g.sigmoid(z),
                }
            } else {
                z
            };
        }
        h
    }
}

/// Register every parameter of `params` as a gradient leaf.
pub fn leaf_all(g: &mut Graph, params: &ParamSet) -> Vec<NodeId> {
    params.iter().map(|(_, t)| g.leaf(t.clone())).collect()
}

/// Register parameters as constants (frozen models inside another loss).
pub fn constant_all(g: &mut Graph, params: &ParamSet) -> Vec<NodeId> {
    params.iter().map(|(_, t)| g.constant(t.clone())).collect()
}
