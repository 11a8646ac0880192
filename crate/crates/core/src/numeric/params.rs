//! Named parameter sets, Glorot initialisation, Adam, and the on-disk
//! model format shared by the forecaster, density model, and policy.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericError;

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub seed: u64,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), seed }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter name {name}");
        assert!(t.is_finite(), "parameter {name} contains non-finite values");
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index_of(name);
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index_of(name);
        &mut self.tensors[i]
    }

    fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Flatten every tensor into one coordinate vector (fixed name order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn coord(&self, mut i: usize) -> f64 {
        for t in &self.tensors {
            if i < t.len() {
                return t.data[i];
            }
            i -= t.len();
        }
        panic!("coordinate out of range");
    }

    pub fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if i < t.len() {
                return &mut t.data[i];
            }
            i -= t.len();
        }
        panic!("coordinate out of range");
    }
}

/// Uniform(−a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor { rows, cols, data }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        let v = params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        AdamState { m, v, step: 0 }
    }

    /// One Adam update with bias correction. Gradients are matched to
    /// parameters by name; missing gradients leave the parameter untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for i in 0..params.tensors.len() {
            let name = &params.names[i];
            let Some(g) = grads.get(name) else { continue };
            let p = &mut params.tensors[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = ADAM_BETA1 * m.data[j] + (1.0 - ADAM_BETA1) * gj;
                v.data[j] = ADAM_BETA2 * v.data[j] + (1.0 - ADAM_BETA2) * gj * gj;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Portable model file: architecture spec, init seed, named parameters as
/// nested arrays, plus free-form training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub arch: serde_json::Value,
    pub seed: u64,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl ModelFile {
    pub fn from_params(arch: serde_json::Value, params: &ParamSet, meta: serde_json::Value) -> Self {
        let mut map = BTreeMap::new();
        for (name, t) in params.iter() {
            let rows = (0..t.rows).map(|r| t.row(r).to_vec()).collect();
            map.insert(name.to_string(), rows);
        }
        ModelFile { arch, seed: params.seed, params: map, meta }
    }

    /// Rebuild a ParamSet; `order` fixes the tensor ordering expected by the
    /// architecture (BTreeMap loses insertion order).
    pub fn to_params(&self, order: &[String]) -> Result<ParamSet, NumericError> {
        let mut ps = ParamSet::new(self.seed);
        for name in order {
            let rows = self
                .params
                .get(name)
                .ok_or_else(|| NumericError::BadModelFile(format!("missing parameter {name}")))?;
            let r = rows.len();
            let c = rows.first().map_or(0, |row| row.len());
            if rows.iter().any(|row| row.len() != c) {
                return Err(NumericError::BadModelFile(format!("ragged parameter {name}")));
            }
            let data: Vec<f64> = rows.iter().flatten().copied().collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(NumericError::BadModelFile(format!("non-finite parameter {name}")));
            }
            ps.insert(name, Tensor::from_vec(r, c, data));
        }
        Ok(ps)
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| NumericError::Io(path.display().to_string(), e.to_string()))?;
        let body = serde_json::to_string(self).expect("model serialization cannot fail");
        f.write_all(body.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| NumericError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NumericError> {
        let mut s = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| NumericError::Io(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| NumericError::BadModelFile(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scalar_params(w: f64) -> ParamSet {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(1, 1, vec![w]));
        p
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = scalar_params(1.5);
        let mut st = AdamState::new(&p);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(1, 1, vec![0.0]));
        st.step(&mut p, &grads, 0.1);
        assert_eq!(p.get("w").data[0], 1.5);
    }

    #[test]
    fn adam_first_step_hand_value() {
        // w=1, g=1, lr=0.1 → w' = 1 − 0.1·(1/(1+1e-8)) ≈ 0.9
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(1, 1, vec![1.0]));
        st.step(&mut p, &grads, 0.1);
        let w = p.get("w").data[0];
        assert!((w - 0.9).abs() < 1e-8, "got {w}");
    }

    #[test]
    fn adam_trajectories_are_deterministic() {
        let run = || {
            let mut p = scalar_params(2.0);
            let mut st = AdamState::new(&p);
            for i in 0..25 {
                let g = 2.0 * p.get("w").data[0] + (i as f64 * 0.01);
                let mut grads = BTreeMap::new();
                grads.insert("w".to_string(), Tensor::from_vec(1, 1, vec![g]));
                st.step(&mut p, &grads, 0.05);
            }
            p.get("w").data[0]
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn model_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamSet::new(9);
        p.insert("w1", glorot_uniform(3, 4, &mut rng));
        p.insert("b1", glorot_uniform(1, 4, &mut rng));
        let mf = ModelFile::from_params(serde_json::json!({"kind": "mlp"}), &p, serde_json::Value::Null);
        let back = mf.to_params(&["w1".into(), "b1".into()]).unwrap();
        assert_eq!(p, back);
    }
}
