//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;

/// Maximum number of coordinates probed per check.
pub const MAX_PROBES: usize = 64;

/// Compare an analytic gradient against central differences of `loss` on up
/// to [`MAX_PROBES`] randomly sampled coordinates. Returns the maximum
/// relative error across probes.
pub fn finite_diff_check(
    loss: impl Fn(&ParamSet) -> f64,
    grad: impl Fn(&ParamSet) -> Vec<f64>,
    params: &ParamSet,
    h: f64,
    seed: u64,
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = grad(params);
    let n = params.n_scalars();
    assert_eq!(analytic.len(), n, "gradient length mismatch");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = n.min(MAX_PROBES);
    let probes = sample(&mut rng, n, count);

    let mut worst: f64 = 0.0;
    for i in probes {
        let mut plus = params.clone();
        *plus.coord_mut(i) += h;
        let mut minus = params.clone();
        *minus.coord_mut(i) -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let ad = analytic[i];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::graph::Graph;
    use crate::numeric::mlp::{leaf_all, Activation, MlpSpec};
    use crate::numeric::tensor::Tensor;
    use std::collections::BTreeMap;

    fn quadratic_loss(p: &ParamSet) -> f64 {
        p.flatten().iter().map(|&w| 0.5 * w * w + 2.0 * w).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::row_vector(vec![1.0, -3.0, 0.25, 7.0]));
        let grad = |p: &ParamSet| p.flatten().iter().map(|&w| w + 2.0).collect::<Vec<_>>();
        let err = finite_diff_check(quadratic_loss, grad, &p, 1e-5, 3);
        assert!(err < 1e-10, "err={err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::row_vector((0..200).map(|i| (i as f64 - 100.0) / 37.0).collect()));
        let grad = |p: &ParamSet| p.flatten().iter().map(|&w| w + 2.0).collect::<Vec<_>>();
        let a = finite_diff_check(quadratic_loss, grad, &p, 1e-5, 11);
        let b = finite_diff_check(quadratic_loss, grad, &p, 1e-5, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn random_two_layer_net_passes() {
        let spec = MlpSpec::new(vec![5, 8, 1], Activation::Tanh);
        let params = spec.init(21, "");
        let input: Vec<f64> = (0..5).map(|i| (i as f64) * 0.2 - 0.5).collect();

        let loss = {
            let spec = spec.clone();
            let input = input.clone();
            move |p: &ParamSet| {
                let out = spec.apply(p, "", &input).unwrap();
                out[0] * out[0]
            }
        };
        let grad = {
            let spec = spec.clone();
            move |p: &ParamSet| {
                let mut g = Graph::new();
                let nodes = leaf_all(&mut g, p);
                let x = g.constant(Tensor::row_vector(input.clone()));
                let y = spec.forward_on(&mut g, &nodes, x);
                let l = g.square(y);
                let l = g.sum_all(l);
                let grads = g.backward(l).unwrap();
                let mut by_name = BTreeMap::new();
                for (i, (name, t)) in p.iter().enumerate() {
                    let gt = grads[nodes[i].0]
                        .clone()
                        .unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
                    by_name.insert(name.to_string(), gt);
                }
                let mut flat = Vec::new();
                for (name, _) in p.iter() {
                    flat.extend_from_slice(&by_name[name].data);
                }
                flat
            }
        };
        for probe_seed in 0..10u64 {
            let err = finite_diff_check(&loss, &grad, &params, 1e-5, probe_seed);
            assert!(err < 1e-4, "probe seed {probe_seed}: err={err}");
        }
    }
}
