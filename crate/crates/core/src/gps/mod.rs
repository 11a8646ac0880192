//! Order propensity density estimation with a conditional spline flow.
//!
//! Binary order vectors are dequantized with Gaussian noise and modeled by a
//! stack of autoregressive rational-quadratic-spline layers whose parameters
//! come from masked linear heads over a shared context embedding. The
//! density direction (data → noise) is parallel across dimensions and runs
//! on the autodiff tape, so it can be differentiated with respect to both
//! the flow parameters (training) and the order vector (policy learning).

pub mod spline;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{
    grads_by_name, AdamState, Graph, MlpSpec, ModelFile, NodeId, NumericError, ParamSet, Tensor,
};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsConfig {
    pub lr: f64,
    /// Learning rates tried by hyperparameter search.
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub layers: usize,
    pub bins: usize,
    /// Spline half-range; identity tails outside [−range, range].
    pub range: f64,
    pub embed_dim: usize,
    /// Dequantization noise standard deviation.
    pub sigma_dq: f64,
    /// Quantile for the reliability threshold.
    pub quantile_q: f64,
}

impl Default for GpsConfig {
    fn default() -> Self {
        GpsConfig {
            lr: 1e-3,
            lr_grid: vec![1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
            batch_size: 512,
            max_epochs: 300,
            patience: 8,
            layers: 3,
            bins: 8,
            range: 4.0,
            embed_dim: 50,
            sigma_dq: 0.1,
            quantile_q: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_nll: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GpsModel {
    pub context_dim: usize,
    pub k: usize,
    pub layers: usize,
    pub bins: usize,
    pub range: f64,
    pub embed_dim: usize,
    pub sigma_dq: f64,
    pub trunk: MlpSpec,
    pub params: ParamSet,
    /// Reliability threshold: a training-set density quantile.
    pub threshold: Option<f64>,
    pub meta: Option<GpsMeta>,
}

#[derive(Debug, Error)]
pub enum GpsError {
    #[error("empty training set")]
    NoData,
    #[error("orders must be {expected}-dimensional, got {got}")]
    BadWidth { expected: usize, got: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Node handles for the flow parameters inside one graph.
pub struct FlowNodes {
    pub heads: Vec<(NodeId, NodeId)>,
}

impl GpsModel {
    fn params_per_dim(&self) -> usize {
        3 * self.bins - 1
    }

    fn head_in(&self) -> usize {
        self.embed_dim + self.k
    }

    fn head_out(&self) -> usize {
        self.k * self.params_per_dim()
    }

    /// Strictly triangular mask: spline parameters of dim i may depend on
    /// the context embedding and on order dims j < i only.
    fn head_mask(&self) -> Tensor {
        let p = self.params_per_dim();
        let mut m = Tensor::zeros(self.head_in(), self.head_out());
        for r in 0..self.head_in() {
            for c in 0..self.head_out() {
                let i = c / p;
                let allowed = if r < self.embed_dim { true } else { (r - self.embed_dim) < i };
                if allowed {
                    m.set(r, c, 1.0);
                }
            }
        }
        m
    }

    fn trunk_names(&self) -> Vec<String> {
        self.trunk.param_names("trunk_")
    }

    /// Fresh model: Glorot trunk, zero heads (identity flow).
    pub fn init(context_dim: usize, k: usize, cfg: &GpsConfig, seed: u64) -> Self {
        let trunk = MlpSpec::new(
            vec![context_dim, cfg.embed_dim, cfg.embed_dim, cfg.embed_dim],
            crate::numeric::Activation::Relu,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(seed);
        trunk.init_into(&mut params, "trunk_", &mut rng);
        let head_in = cfg.embed_dim + k;
        let head_out = k * (3 * cfg.bins - 1);
        for l in 0..cfg.layers {
            params.insert(&format!("head{l}w"), Tensor::zeros(head_in, head_out));
            params.insert(&format!("head{l}b"), Tensor::zeros(1, head_out));
        }
        GpsModel {
            context_dim,
            k,
            layers: cfg.layers,
            bins: cfg.bins,
            range: cfg.range,
            embed_dim: cfg.embed_dim,
            sigma_dq: cfg.sigma_dq,
            trunk,
            params,
            threshold: None,
            meta: None,
        }
    }

    /// Context embedding without a tape.
    pub fn embed_batch(&self, contexts: &Tensor) -> Result<Tensor, GpsError> {
        Ok(self.trunk.apply_batch(&self.params, "trunk_", contexts)?)
    }

    /// Register head parameters on a graph, as leaves (trainable) or
    /// constants (frozen inside another loss).
    pub fn flow_nodes(&self, g: &mut Graph, trainable: bool) -> FlowNodes {
        let mut heads = Vec::new();
        for l in 0..self.layers {
            let w = self.params.get(&format!("head{l}w")).clone();
            let b = self.params.get(&format!("head{l}b")).clone();
            let (wn, bn) = if trainable {
                (g.leaf(w), g.leaf(b))
            } else {
                (g.constant(w), g.constant(b))
            };
            heads.push((wn, bn));
        }
        FlowNodes { heads }
    }

    /// One autoregressive layer in the density direction: u → (z, log|det|).
    fn layer_inverse_on(
        &self,
        g: &mut Graph,
        u: NodeId,
        e: NodeId,
        head: (NodeId, NodeId),
        mask: &Tensor,
    ) -> (NodeId, NodeId) {
        let rows = g.value(u).rows;
        let p = self.params_per_dim();
        let bins = self.bins;
        let range = self.range;
        let shift = spline::deriv_shift();

        let h = g.concat_cols(e, u);
        let wm = g.mul_const(head.0, mask.clone());
        let params = g.matmul(h, wm);
        let params = g.add_row(params, head.1);

        let left_edge = g.constant(Tensor::filled(rows, 1, -range));
        let ones = g.constant(Tensor::filled(rows, 1, 1.0));

        let mut z_cols: Vec<NodeId> = Vec::with_capacity(self.k);
        let mut ld_total: Option<NodeId> = None;
        for i in 0..self.k {
            let raw = g.slice_cols(params, i * p, (i + 1) * p);
            let knots = |g: &mut Graph, lo: usize| {
                let r = g.slice_cols(raw, lo, lo + bins);
                let sm = g.row_softmax(r);
                let sc = g.scale(sm, 2.0 * range);
                let cs = g.row_cumsum(sc);
                let right = g.add_scalar(cs, -range);
                g.concat_cols(left_edge, right)
            };
            let xs = knots(g, 0);
            let ys = knots(g, bins);
            let draw = g.slice_cols(raw, 2 * bins, p);
            let dsh = g.add_scalar(draw, shift);
            let dsp = g.softplus(dsh);
            let dmid = g.add_scalar(dsp, spline::MIN_DERIV);
            let ds = g.concat_cols(ones, dmid);
            let ds = g.concat_cols(ds, ones);

            let u_i = g.slice_cols(u, i, i + 1);

            // build-time bin search; out-of-range rows are clamped to the
            // center, evaluated safely, and masked back to the identity tail
            let ys_val = g.value(ys).clone();
            let u_val = g.value(u_i).clone();
            let mut bins_idx = Vec::with_capacity(rows);
            let mut bins_idx1 = Vec::with_capacity(rows);
            let mut offsets = Tensor::zeros(rows, 1);
            let mut inside = Tensor::zeros(rows, 1);
            let mut outside = Tensor::zeros(rows, 1);
            for r in 0..rows {
                let v = u_val.data[r];
                let is_inside = v > -range && v < range;
                let safe = if is_inside { v } else { 0.0 };
                offsets.data[r] = safe - v;
                inside.data[r] = f64::from(is_inside);
                outside.data[r] = f64::from(!is_inside);
                let b = spline::find_bin(ys_val.row(r), safe);
                bins_idx.push(b);
                bins_idx1.push(b + 1);
            }
            let u_safe = g.add_const(u_i, offsets);

            let xk = g.gather_cols(xs, bins_idx.clone());
            let xk1 = g.gather_cols(xs, bins_idx1.clone());
            let yk = g.gather_cols(ys, bins_idx.clone());
            let yk1 = g.gather_cols(ys, bins_idx1.clone());
            let dk = g.gather_cols(ds, bins_idx);
            let dk1 = g.gather_cols(ds, bins_idx1);

            let w_bin = g.sub(xk1, xk);
            let h_bin = g.sub(yk1, yk);
            let s = g.div(h_bin, w_bin);
            let r_off = g.sub(u_safe, yk);
            let dsum = g.add(dk1, dk);
            let s2 = g.scale(s, 2.0);
            let dd = g.sub(dsum, s2);

            let s_minus_dk = g.sub(s, dk);
            let a1 = g.mul(h_bin, s_minus_dk);
            let a2 = g.mul(r_off, dd);
            let aa = g.add(a1, a2);
            let b1 = g.mul(h_bin, dk);
            let bb = g.sub(b1, a2);
            let sr = g.mul(s, r_off);
            let cc = g.neg(sr);

            let b_sq = g.square(bb);
            let ac = g.mul(aa, cc);
            let ac4 = g.scale(ac, 4.0);
            let disc = g.sub(b_sq, ac4);
            let disc = g.clamp_min(disc, 0.0);
            let sq = g.sqrt(disc);
            let nb = g.neg(bb);
            let denom = g.sub(nb, sq);
            let c2 = g.scale(cc, 2.0);
            let theta = g.div(c2, denom);

            // spline value and derivative at θ
            let at = |g: &mut Graph, theta: NodeId| {
                let nth = g.neg(theta);
                let one_m = g.add_scalar(nth, 1.0);
                let t1m = g.mul(theta, one_m);
                let dd_t1m = g.mul(dd, t1m);
                let den = g.add(s, dd_t1m);
                let th2 = g.square(theta);
                let s_th2 = g.mul(s, th2);
                let dk_t1m = g.mul(dk, t1m);
                let y_num_inner = g.add(s_th2, dk_t1m);
                let y_num = g.mul(h_bin, y_num_inner);
                let y_frac = g.div(y_num, den);
                let yhat = g.add(yk, y_frac);
                let den2 = g.square(den);
                let om2 = g.square(one_m);
                let n1 = g.mul(dk1, th2);
                let st1m = g.mul(s, t1m);
                let n2 = g.scale(st1m, 2.0);
                let n3 = g.mul(dk, om2);
                let n12 = g.add(n1, n2);
                let num_inner = g.add(n12, n3);
                let ss = g.square(s);
                let num = g.mul(ss, num_inner);
                let deriv = g.div(num, den2);
                (yhat, deriv)
            };
            // Newton polish matches the scalar inverse path
            let mut theta = theta;
            for _ in 0..2 {
                let (yhat, deriv0) = at(g, theta);
                let resid = g.sub(yhat, u_safe);
                let step = g.div(resid, deriv0);
                theta = g.sub(theta, step);
            }
            let (_, deriv) = at(g, theta);

            let th_w = g.mul(theta, w_bin);
            let x_spline = g.add(xk, th_w);
            let x_in = g.mul_const(x_spline, inside.clone());
            let x_out = g.mul_const(u_i, outside);
            let z_i = g.add(x_in, x_out);
            z_cols.push(z_i);

            let ld_raw = g.log(deriv);
            let ld_masked = g.mul_const(ld_raw, inside);
            let ld_i = g.neg(ld_masked);
            ld_total = Some(match ld_total {
                Some(acc) => g.add(acc, ld_i),
                None => ld_i,
            });
        }

        let mut z = z_cols[0];
        for &c in &z_cols[1..] {
            z = g.concat_cols(z, c);
        }
        (z, ld_total.expect("k ≥ 1"))
    }

    /// log f̂(t | x) on the tape: standard-normal base plus the inverse
    /// log-determinant, one scalar per batch row (B×1).
    pub fn log_density_on(
        &self,
        g: &mut Graph,
        t: NodeId,
        e: NodeId,
        nodes: &FlowNodes,
    ) -> NodeId {
        let mask = self.head_mask();
        let mut u = t;
        let mut ld_acc: Option<NodeId> = None;
        for l in 0..self.layers {
            let (z, ld) = self.layer_inverse_on(g, u, e, nodes.heads[l], &mask);
            u = z;
            ld_acc = Some(match ld_acc {
                Some(acc) => g.add(acc, ld),
                None => ld,
            });
        }
        let z_sq = g.square(u);
        let ss = g.sum_rows(z_sq);
        let base = g.scale(ss, -0.5);
        let base = g.add_scalar(base, -0.5 * self.k as f64 * LN_2PI);
        match ld_acc {
            Some(ld) => g.add(base, ld),
            None => base,
        }
    }

    /// Batched log-density for raw contexts (no gradients).
    pub fn log_density_batch(
        &self,
        orders: &Tensor,
        contexts: &Tensor,
    ) -> Result<Vec<f64>, GpsError> {
        if orders.cols != self.k {
            return Err(GpsError::BadWidth { expected: self.k, got: orders.cols });
        }
        let e = self.embed_batch(contexts)?;
        self.log_density_embedded(orders, &e)
    }

    /// Batched log-density against precomputed embeddings.
    pub fn log_density_embedded(
        &self,
        orders: &Tensor,
        embeds: &Tensor,
    ) -> Result<Vec<f64>, GpsError> {
        let mut g = Graph::new();
        let nodes = self.flow_nodes(&mut g, false);
        let t = g.constant(orders.clone());
        let e = g.constant(embeds.clone());
        let ld = self.log_density_on(&mut g, t, e, &nodes);
        let out = g.value(ld);
        if !out.is_finite() {
            return Err(GpsError::Numeric(NumericError::NonFinite { op: "log_density" }));
        }
        Ok(out.data.clone())
    }

    /// Single-pair log-density.
    pub fn log_density(&self, t: &[f64], context: &[f64]) -> Result<f64, GpsError> {
        let orders = Tensor::row_vector(t.to_vec());
        let ctx = Tensor::row_vector(context.to_vec());
        Ok(self.log_density_batch(&orders, &ctx)?[0])
    }

    fn masked_head_matvec(&self, l: usize, e: &[f64], t_prefix: &[f64]) -> Vec<f64> {
        let w = self.params.get(&format!("head{l}w"));
        let b = self.params.get(&format!("head{l}b"));
        let p = self.params_per_dim();
        let mut out = b.data.clone();
        for (c, o) in out.iter_mut().enumerate() {
            let dim = c / p;
            for (r, &ev) in e.iter().enumerate() {
                *o += ev * w.at(r, c);
            }
            for j in 0..dim.min(t_prefix.len()) {
                *o += t_prefix[j] * w.at(self.embed_dim + j, c);
            }
        }
        out
    }

    /// Generation direction z → (t, log|det ∂t/∂z|); sequential per dim.
    pub fn flow_forward(&self, z: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64), GpsError> {
        if z.len() != self.k {
            return Err(GpsError::BadWidth { expected: self.k, got: z.len() });
        }
        let ctx = Tensor::row_vector(context.to_vec());
        let e = self.embed_batch(&ctx)?.data;
        let p = self.params_per_dim();
        let mut v = z.to_vec();
        let mut log_det = 0.0;
        for l in (0..self.layers).rev() {
            let mut out = vec![0.0; self.k];
            for i in 0..self.k {
                let raw_all = self.masked_head_matvec(l, &e, &out);
                let raw = &raw_all[i * p..(i + 1) * p];
                let knots = spline::decode(raw, self.bins, self.range);
                let (y, dy) = spline::forward(&knots, v[i]);
                out[i] = y;
                log_det += dy.ln();
            }
            v = out;
        }
        Ok((v, log_det))
    }

    /// Density direction t → (z, log|det ∂z/∂t|) without a tape.
    pub fn flow_inverse(&self, t: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64), GpsError> {
        if t.len() != self.k {
            return Err(GpsError::BadWidth { expected: self.k, got: t.len() });
        }
        let ctx = Tensor::row_vector(context.to_vec());
        let e = self.embed_batch(&ctx)?.data;
        let p = self.params_per_dim();
        let mut u = t.to_vec();
        let mut log_det = 0.0;
        for l in 0..self.layers {
            let raw_all = self.masked_head_matvec(l, &e, &u);
            let mut z = vec![0.0; self.k];
            for i in 0..self.k {
                let raw = &raw_all[i * p..(i + 1) * p];
                let knots = spline::decode(raw, self.bins, self.range);
                let (x, dy) = spline::inverse(&knots, u[i]);
                z[i] = x;
                log_det -= dy.ln();
            }
            u = z;
        }
        Ok((u, log_det))
    }

    /// Nearest-rank q-quantile of the training densities exp(log f̂).
    pub fn reliability_threshold(
        &self,
        orders: &Tensor,
        contexts: &Tensor,
        q: f64,
    ) -> Result<f64, GpsError> {
        let n = orders.rows;
        if n == 0 {
            return Err(GpsError::NoData);
        }
        let mut densities = Vec::with_capacity(n);
        for chunk_start in (0..n).step_by(2048) {
            let end = (chunk_start + 2048).min(n);
            let t = slice_rows(orders, chunk_start, end);
            let x = slice_rows(contexts, chunk_start, end);
            for ld in self.log_density_batch(&t, &x)? {
                densities.push(ld.exp());
            }
        }
        densities.sort_by(|a, b| a.partial_cmp(b).expect("finite densities"));
        let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
        Ok(densities[rank - 1])
    }

    pub fn save(&self, path: &Path) -> Result<(), GpsError> {
        let arch = serde_json::json!({
            "kind": "spline_flow",
            "context_dim": self.context_dim,
            "k": self.k,
            "layers": self.layers,
            "bins": self.bins,
            "range": self.range,
            "embed_dim": self.embed_dim,
            "sigma_dq": self.sigma_dq,
            "threshold": self.threshold,
        });
        let meta = serde_json::to_value(&self.meta).expect("meta serialization");
        ModelFile::from_params(arch, &self.params, meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GpsError> {
        let file = ModelFile::load(path)?;
        let get = |k: &str| file.arch[k].as_u64().unwrap_or(0) as usize;
        let getf = |k: &str| file.arch[k].as_f64().unwrap_or(0.0);
        let (context_dim, k) = (get("context_dim"), get("k"));
        let (layers, bins, embed_dim) = (get("layers"), get("bins"), get("embed_dim"));
        let trunk = MlpSpec::new(
            vec![context_dim, embed_dim, embed_dim, embed_dim],
            crate::numeric::Activation::Relu,
        );
        let mut order = trunk.param_names("trunk_");
        for l in 0..layers {
            order.push(format!("head{l}w"));
            order.push(format!("head{l}b"));
        }
        let params = file.to_params(&order)?;
        Ok(GpsModel {
            context_dim,
            k,
            layers,
            bins,
            range: getf("range"),
            embed_dim,
            sigma_dq: getf("sigma_dq"),
            trunk,
            params,
            threshold: file.arch["threshold"].as_f64(),
            meta: serde_json::from_value(file.meta.clone()).ok(),
        })
    }
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(end - start, t.cols);
    for r in start..end {
        out.row_mut(r - start).copy_from_slice(t.row(r));
    }
    out
}

/// Train the flow by minimizing the dequantized negative log-likelihood,
/// early-stopping on validation NLL (fixed validation noise) and returning
/// the best snapshot with the reliability threshold set.
#[allow(clippy::too_many_arguments)]
pub fn train_gps(
    train_orders: &Tensor,
    train_ctx: &Tensor,
    val_orders: &Tensor,
    val_ctx: &Tensor,
    cfg: &GpsConfig,
    seed: u64,
) -> Result<GpsModel, GpsError> {
    let n = train_orders.rows;
    if n == 0 {
        return Err(GpsError::NoData);
    }
    let k = train_orders.cols;
    let mut model = GpsModel::init(train_ctx.cols, k, cfg, seed);
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517c_c1b7);
    let noise = Normal::new(0.0, cfg.sigma_dq).expect("positive sigma");

    // fixed dequantization noise keeps validation comparable across epochs
    let mut val_noisy = val_orders.clone();
    {
        let mut vrng = ChaCha8Rng::seed_from_u64(seed ^ 0x2545_f491);
        for v in val_noisy.data.iter_mut() {
            *v += noise.sample(&mut vrng);
        }
    }

    let val_nll = |m: &GpsModel| -> Result<f64, GpsError> {
        let lds = m.log_density_batch(&val_noisy, val_ctx)?;
        Ok(-lds.iter().sum::<f64>() / lds.len() as f64)
    };

    let mut best = model.params.clone();
    let mut best_nll = val_nll(&model)?;
    let mut best_epoch = 0usize;
    let mut bad = 0usize;
    let mut epochs_run = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut t = Tensor::zeros(chunk.len(), k);
            let mut x = Tensor::zeros(chunk.len(), train_ctx.cols);
            for (row, &i) in chunk.iter().enumerate() {
                for c in 0..k {
                    t.set(row, c, train_orders.at(i, c) + noise.sample(&mut rng));
                }
                x.row_mut(row).copy_from_slice(train_ctx.row(i));
            }
            let mut g = Graph::new();
            let trunk_nodes: Vec<NodeId> = model
                .trunk_names()
                .iter()
                .map(|name| g.leaf(model.params.get(name).clone()))
                .collect();
            let flow_nodes = model.flow_nodes(&mut g, true);
            let xc = g.constant(x);
            let e = model.trunk.forward_on(&mut g, &trunk_nodes, xc);
            let tc = g.constant(t);
            let ld = model.log_density_on(&mut g, tc, e, &flow_nodes);
            let mean_ld = g.mean_all(ld);
            let nll = g.neg(mean_ld);
            let grads = g.backward(nll)?;

            let mut all_nodes = trunk_nodes;
            for (w, b) in &flow_nodes.heads {
                all_nodes.push(*w);
                all_nodes.push(*b);
            }
            let by_name = grads_by_name(&g, &model.params, &all_nodes, &grads);
            adam.step(&mut model.params, &by_name, cfg.lr);
        }
        let nll = val_nll(&model)?;
        if nll < best_nll {
            best_nll = nll;
            best = model.params.clone();
            best_epoch = epoch;
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience {
                break;
            }
        }
    }
    model.params = best;
    model.meta = Some(GpsMeta { epochs_run, best_epoch, val_nll: best_nll, seed });
    let threshold = model.reliability_threshold(train_orders, train_ctx, cfg.quantile_q)?;
    model.threshold = Some(threshold);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> GpsConfig {
        GpsConfig {
            embed_dim: 8,
            layers: 3,
            bins: 8,
            batch_size: 16,
            max_epochs: 6,
            patience: 3,
            ..Default::default()
        }
    }

    fn randomize_heads(model: &mut GpsModel, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..model.layers {
            let w = model.params.get_mut(&format!("head{l}w"));
            for v in w.data.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
            let b = model.params.get_mut(&format!("head{l}b"));
            for v in b.data.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }

    #[test]
    fn identity_flow_log_density_is_standard_normal() {
        // zero-initialized heads give t = z and log_det = 0
        let cfg = tiny_cfg();
        let m2 = GpsModel::init(4, 2, &cfg, 3);
        let ld = m2.log_density(&[0.0, 0.0], &[0.1, -0.2, 0.3, 0.5]).unwrap();
        assert!((ld - (-LN_2PI)).abs() < 1e-12, "K=2 at origin: {ld}");
        let m10 = GpsModel::init(4, 10, &cfg, 3);
        let ld = m10.log_density(&vec![0.0; 10], &[0.1, -0.2, 0.3, 0.5]).unwrap();
        assert!((ld - (-5.0 * LN_2PI)).abs() < 1e-12, "K=10 at origin: {ld}");
    }

    #[test]
    fn identity_flow_forward_is_identity() {
        let cfg = tiny_cfg();
        let m = GpsModel::init(3, 4, &cfg, 1);
        let z = vec![0.3, -1.2, 0.0, 2.5];
        let (t, ld) = m.flow_forward(&z, &[0.5, 0.1, -0.4]).unwrap();
        for (a, b) in t.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ld.abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_logdet_antisymmetry_random_model() {
        let cfg = tiny_cfg();
        let mut m = GpsModel::init(3, 4, &cfg, 7);
        randomize_heads(&mut m, 11, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = [0.4, -0.2, 1.0];
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (t, ld_f) = m.flow_forward(&z, &ctx).unwrap();
            let (z2, ld_i) = m.flow_inverse(&t, &ctx).unwrap();
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() < 1e-6, "roundtrip {a} vs {b}");
            }
            assert!((ld_f + ld_i).abs() < 1e-8, "antisymmetry {ld_f} vs {ld_i}");
        }
    }

    #[test]
    fn tape_and_plain_inverse_agree() {
        let cfg = tiny_cfg();
        let mut m = GpsModel::init(3, 4, &cfg, 9);
        randomize_heads(&mut m, 21, 0.35);
        let ctx = [0.2, 0.9, -0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let t: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.8)).collect();
            let (z, ld) = m.flow_inverse(&t, &ctx).unwrap();
            let ld_tape = m.log_density(&t, &ctx).unwrap();
            let base: f64 =
                -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * 4.0 * LN_2PI;
            assert!((ld_tape - (base + ld)).abs() < 1e-9);
        }
    }

    #[test]
    fn density_is_deterministic() {
        let cfg = tiny_cfg();
        let mut m = GpsModel::init(5, 3, &cfg, 2);
        randomize_heads(&mut m, 3, 0.35);
        let t = [0.9, 0.1, 1.05];
        let x = [0.0, 0.5, -0.5, 1.0, 0.2];
        assert_eq!(m.log_density(&t, &x).unwrap(), m.log_density(&t, &x).unwrap());
    }

    #[test]
    fn quantile_convention() {
        let cfg = tiny_cfg();
        let m = GpsModel::init(2, 2, &cfg, 1);
        // identity flow: density depends only on ‖t‖; build 10 pairs with
        // strictly increasing norms so densities are strictly decreasing
        let mut orders = Tensor::zeros(10, 2);
        for i in 0..10 {
            orders.set(i, 0, i as f64 * 0.3);
        }
        let ctx = Tensor::zeros(10, 2);
        // q=0.05 over 10 samples → nearest rank 1 → the smallest density
        let eps = m.reliability_threshold(&orders, &ctx, 0.05).unwrap();
        let lds = m.log_density_batch(&orders, &ctx).unwrap();
        let min_density = lds.iter().map(|l| l.exp()).fold(f64::INFINITY, f64::min);
        assert!((eps - min_density).abs() < 1e-15);
        // q=1.0 → maximum
        let eps = m.reliability_threshold(&orders, &ctx, 1.0).unwrap();
        let max_density = lds.iter().map(|l| l.exp()).fold(0.0f64, f64::max);
        assert!((eps - max_density).abs() < 1e-15);
    }

    #[test]
    fn training_concentrates_on_a_constant_vector() {
        // degenerate data: t* is always the same vector; after training the
        // log-density at that vector should clearly exceed its complement
        let k = 3;
        let n = 64;
        let target = [1.0, 0.0, 1.0];
        let complement = [0.0, 1.0, 0.0];
        let mut orders = Tensor::zeros(n, k);
        for r in 0..n {
            orders.row_mut(r).copy_from_slice(&target);
        }
        let ctx = Tensor::filled(n, 2, 0.5);
        let cfg = GpsConfig {
            embed_dim: 8,
            batch_size: 32,
            max_epochs: 60,
            patience: 60,
            lr: 5e-3,
            ..Default::default()
        };
        let m = train_gps(&orders, &ctx, &orders, &ctx, &cfg, 4).unwrap();
        let ld_t = m.log_density(&target, &[0.5, 0.5]).unwrap();
        let ld_c = m.log_density(&complement, &[0.5, 0.5]).unwrap();
        assert!(ld_t - ld_c >= 2.0, "separation {ld_t} vs {ld_c}");
        assert!(m.threshold.is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let k = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut orders = Tensor::zeros(40, k);
        for v in orders.data.iter_mut() {
            *v = f64::from(rng.gen::<bool>());
        }
        let ctx = Tensor::filled(40, 3, 0.1);
        let cfg = GpsConfig {
            embed_dim: 6,
            batch_size: 20,
            max_epochs: 3,
            patience: 3,
            ..Default::default()
        };
        let a = train_gps(&orders, &ctx, &orders, &ctx, &cfg, 12).unwrap();
        let b = train_gps(&orders, &ctx, &orders, &ctx, &cfg, 12).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.threshold, b.threshold);
    }
}
