//! Order policy learning by Lagrangian gradient descent-ascent.
//!
//! The policy is an MLP over the flattened standardized 72h context
//! (history plus forecast) ending in a sigmoid, trained to maximize the
//! smooth order utility subject to a density (overlap) constraint enforced
//! through per-sample multipliers: descent on the network, ascent on λ,
//! λ clamped at zero. Restarts are resolved by the constrained validation
//! objective. Random/lower/upper/physician baselines share the policy
//! interface for benchmarking.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureCatalog, StayWindow, K};
use crate::forecast::{ForecastError, ForecastModel};
use crate::gps::{GpsError, GpsModel};
use crate::numeric::{
    grads_by_name, Activation, AdamState, Graph, MlpSpec, ModelFile, NumericError, ParamSet,
    Tensor,
};
use crate::outcome::{panel_deltas, OutcomeConfig};
use crate::rules::OrderBounds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Bound-term weight during training.
    pub beta1: f64,
    /// Cost-term weight during training.
    pub beta2: f64,
    pub beta1_grid: Vec<f64>,
    pub beta2_grid: Vec<f64>,
    pub lambda_init: f64,
    pub lambda_grid: Vec<f64>,
    pub eta_lambda: f64,
    pub lr: f64,
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub restarts: usize,
    pub use_gps: bool,
    /// Overrides the model's stored reliability threshold when set.
    pub epsilon_override: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![256, 256],
            beta1: 10.0,
            beta2: 10.0,
            beta1_grid: vec![0.0, 1.0, 10.0, 100.0],
            beta2_grid: vec![0.0, 1.0, 10.0, 100.0],
            lambda_init: 1.0,
            lambda_grid: vec![1.0, 5.0, 10.0],
            eta_lambda: 0.01,
            lr: 1e-3,
            lr_grid: vec![5e-3, 1e-3, 5e-4, 1e-4],
            batch_size: 512,
            max_epochs: 50,
            patience: 7,
            restarts: 2,
            use_gps: true,
            epsilon_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub restart: usize,
    pub val_objective: f64,
    pub epochs_run: usize,
    pub seed: u64,
    pub used_gps: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub context_dim: usize,
    pub meta: Option<PolicyMeta>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("bernoulli probability {0} outside [0, 1]")]
    BadP(f64),
    #[error("no candidate policies to select from")]
    NoCandidates,
    #[error("no training samples")]
    NoSamples,
    #[error("non-finite loss in batch {batch}: utility {g_term}, constraint {gps_term}")]
    NonFiniteLoss { batch: usize, g_term: f64, gps_term: f64 },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Gps(#[from] GpsError),
}

/// Everything policy training and evaluation need for one stay.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub stay_id: String,
    /// Flattened [history; forecast] context, length 72·d.
    pub context: Vec<f64>,
    /// Cached density-model context embedding.
    pub embed: Option<Vec<f64>>,
    /// Per-test informativeness coefficients.
    pub deltas: Vec<f64>,
    pub t_min: Vec<f64>,
    pub t_max: Vec<f64>,
    /// 1 where t_min = t_max (the bound-loss support).
    pub eq_mask: Vec<f64>,
    pub t_star: Vec<f64>,
}

/// Flatten history and forecast into the policy/density context vector.
pub fn context_vector(window: &StayWindow, x_post_hat: &Tensor) -> Vec<f64> {
    let mut ctx = Vec::with_capacity(window.x_prev.len() + x_post_hat.len());
    ctx.extend_from_slice(&window.x_prev.data);
    ctx.extend_from_slice(&x_post_hat.data);
    ctx
}

/// Build per-stay samples: run the forecaster, pick the ΔX future (predicted
/// by default, observed when `oracle_future`), and cache density embeddings.
pub fn build_samples(
    windows: &[StayWindow],
    bounds: &[OrderBounds],
    t_stars: &[Vec<u8>],
    forecaster: &ForecastModel,
    catalog: &FeatureCatalog,
    outcome_cfg: &OutcomeConfig,
    gps: Option<&GpsModel>,
    oracle_future: bool,
) -> Result<Vec<PolicySample>, PolicyError> {
    assert_eq!(windows.len(), bounds.len());
    assert_eq!(windows.len(), t_stars.len());
    let mut samples = Vec::with_capacity(windows.len());
    for ((w, b), t_star) in windows.iter().zip(bounds).zip(t_stars) {
        let x_hat = forecaster.predict(&w.x_prev)?;
        let future = if oracle_future {
            w.x_post_true.as_ref().unwrap_or(&x_hat)
        } else {
            &x_hat
        };
        let deltas = panel_deltas(w, future, catalog, outcome_cfg.panel_agg);
        let context = context_vector(w, &x_hat);
        samples.push(PolicySample {
            stay_id: w.stay_id.clone(),
            context,
            embed: None,
            deltas,
            t_min: b.t_min.iter().map(|&v| f64::from(v)).collect(),
            t_max: b.t_max.iter().map(|&v| f64::from(v)).collect(),
            eq_mask: b
                .t_min
                .iter()
                .zip(&b.t_max)
                .map(|(&lo, &hi)| f64::from(lo == hi))
                .collect(),
            t_star: t_star.iter().map(|&v| f64::from(v)).collect(),
        });
    }
    if let Some(model) = gps {
        for chunk in samples.chunks_mut(1024) {
            let mut ctx = Tensor::zeros(chunk.len(), chunk[0].context.len());
            for (r, s) in chunk.iter().enumerate() {
                ctx.row_mut(r).copy_from_slice(&s.context);
            }
            let e = model.embed_batch(&ctx)?;
            for (r, s) in chunk.iter_mut().enumerate() {
                s.embed = Some(e.row(r).to_vec());
            }
        }
    }
    Ok(samples)
}

impl PolicyModel {
    pub fn init(context_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut dims = vec![context_dim];
        dims.extend_from_slice(hidden);
        dims.push(K);
        let spec = MlpSpec::new(dims, Activation::Relu);
        let params = spec.init(seed, "pi_");
        PolicyModel { spec, params, context_dim, meta: None }
    }

    /// Order probabilities for a batch of contexts (rows).
    pub fn act_batch(&self, contexts: &Tensor) -> Result<Tensor, PolicyError> {
        let logits = self.spec.apply_batch(&self.params, "pi_", contexts)?;
        let mut t = logits;
        for v in t.data.iter_mut() {
            *v = crate::numeric::sigmoid(*v);
        }
        Ok(t)
    }

    /// Order probabilities for one stay context.
    pub fn act_context(&self, context: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let ctx = Tensor::row_vector(context.to_vec());
        Ok(self.act_batch(&ctx)?.data)
    }

    /// Forecast then act on a raw window.
    pub fn act(
        &self,
        window: &StayWindow,
        forecaster: &ForecastModel,
    ) -> Result<Vec<f64>, PolicyError> {
        let x_hat = forecaster.predict(&window.x_prev)?;
        self.act_context(&context_vector(window, &x_hat))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        let arch = serde_json::json!({
            "kind": "mlp_policy",
            "dims": self.spec.dims,
            "context_dim": self.context_dim,
        });
        let meta = serde_json::to_value(&self.meta).expect("meta serialization");
        ModelFile::from_params(arch, &self.params, meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        let file = ModelFile::load(path)?;
        let dims: Vec<usize> = serde_json::from_value(file.arch["dims"].clone())
            .map_err(|e| NumericError::BadModelFile(e.to_string()))?;
        let spec = MlpSpec::new(dims.clone(), Activation::Relu);
        let params = file.to_params(&spec.param_names("pi_"))?;
        Ok(PolicyModel {
            spec,
            params,
            context_dim: dims[0],
            meta: serde_json::from_value(file.meta.clone()).ok(),
        })
    }
}

/// Strict 0.5 threshold.
pub fn binarize(t: &[f64]) -> Vec<f64> {
    t.iter().map(|&v| f64::from(v > 0.5)).collect()
}

/// Projected ascent on the per-sample multipliers:
/// λ_i ← max(0, λ_i + η·(ε̄ − f̂_i)).
pub fn update_lambdas(lambdas: &mut [f64], f_hats: &[f64], epsilon: f64, eta: f64) {
    for (l, &f) in lambdas.iter_mut().zip(f_hats) {
        *l = (*l + eta * (epsilon - f)).max(0.0);
    }
}

/// One epoch of a training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub restart: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_objective: f64,
    pub mean_lambda: f64,
    pub frac_violating: f64,
}

struct BatchTensors {
    contexts: Tensor,
    deltas: Tensor,
    t_min: Tensor,
    eq_mask: Tensor,
    alpha: Tensor,
    embeds: Option<Tensor>,
}

fn batch_tensors(samples: &[PolicySample], idx: &[usize], alpha: &[f64], gps: bool) -> BatchTensors {
    let b = idx.len();
    let ctx_dim = samples[0].context.len();
    let mut contexts = Tensor::zeros(b, ctx_dim);
    let mut deltas = Tensor::zeros(b, K);
    let mut t_min = Tensor::zeros(b, K);
    let mut eq_mask = Tensor::zeros(b, K);
    let mut alpha_m = Tensor::zeros(b, K);
    let mut embeds = gps.then(|| {
        let e_dim = samples[idx[0]].embed.as_ref().expect("embeddings cached").len();
        Tensor::zeros(b, e_dim)
    });
    for (r, &i) in idx.iter().enumerate() {
        let s = &samples[i];
        contexts.row_mut(r).copy_from_slice(&s.context);
        deltas.row_mut(r).copy_from_slice(&s.deltas);
        t_min.row_mut(r).copy_from_slice(&s.t_min);
        eq_mask.row_mut(r).copy_from_slice(&s.eq_mask);
        alpha_m.row_mut(r).copy_from_slice(alpha);
        if let Some(e) = embeds.as_mut() {
            e.row_mut(r).copy_from_slice(s.embed.as_ref().expect("embeddings cached"));
        }
    }
    BatchTensors { contexts, deltas, t_min, eq_mask, alpha: alpha_m, embeds }
}

/// One pass of simultaneous descent (θ) / ascent (λ) over shuffled batches.
/// Returns the mean training loss.
#[allow(clippy::too_many_arguments)]
pub fn gda_epoch(
    policy: &mut PolicyModel,
    adam: &mut AdamState,
    lambdas: &mut [f64],
    samples: &[PolicySample],
    gps: Option<&GpsModel>,
    epsilon: f64,
    outcome_cfg: &OutcomeConfig,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, PolicyError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut total_loss = 0.0;
    let mut batches = 0usize;
    for (batch_no, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
        let bt = batch_tensors(samples, chunk, &outcome_cfg.alpha, gps.is_some());
        let mut g = Graph::new();
        let param_nodes = crate::numeric::mlp::leaf_all(&mut g, &policy.params);
        let x = g.constant(bt.contexts);
        let logits = policy.spec.forward_on(&mut g, &param_nodes, x);
        let t = g.sigmoid(logits);

        // smooth utility
        let shifted = g.add_scalar(t, -0.5);
        let scaled = g.scale(shifted, outcome_cfg.sharpness);
        let ind = g.sigmoid(scaled);
        let dx_terms = g.mul_const(ind, bt.deltas);
        let dx = g.sum_rows(dx_terms);
        let cost_terms = g.mul_const(ind, bt.alpha);
        let cost = g.sum_rows(cost_terms);
        let tmin = g.constant(bt.t_min);
        let diff = g.sub(tmin, t);
        let sabs = g.smooth_abs(diff, crate::numeric::SMOOTH_ABS_EPS);
        let bounded = g.mul_const(sabs, bt.eq_mask);
        let lb = g.sum_rows(bounded);
        let lb_w = g.scale(lb, cfg.beta1);
        let cost_w = g.scale(cost, cfg.beta2);
        let penalties = g.add(lb_w, cost_w);
        let g_col = g.sub(dx, penalties);

        let (objective, f_hat_node) = match gps {
            Some(model) => {
                let e = g.constant(bt.embeds.expect("gps embeddings"));
                let nodes = model.flow_nodes(&mut g, false);
                let ld = model.log_density_on(&mut g, t, e, &nodes);
                let f_hat = g.exp(ld);
                let slack = g.add_scalar(f_hat, -epsilon);
                let lam = Tensor::col_vector(chunk.iter().map(|&i| lambdas[i]).collect());
                let lam_term = g.mul_const(slack, lam);
                (g.add(g_col, lam_term), Some(f_hat))
            }
            None => (g_col, None),
        };
        let mean_obj = g.mean_all(objective);
        let loss = g.neg(mean_obj);

        let loss_val = g.scalar(loss);
        let grads = g.backward(loss).map_err(|e| match e {
            NumericError::NonFinite { .. } => PolicyError::NonFiniteLoss {
                batch: batch_no,
                g_term: mean_finite(g.value(g_col)),
                gps_term: f_hat_node.map(|n| mean_finite(g.value(n))).unwrap_or(0.0),
            },
            other => PolicyError::Numeric(other),
        })?;
        let by_name = grads_by_name(&g, &policy.params, &param_nodes, &grads);
        adam.step(&mut policy.params, &by_name, cfg.lr);

        if let Some(f_node) = f_hat_node {
            let f_vals = &g.value(f_node).data;
            for (pos, &i) in chunk.iter().enumerate() {
                update_lambdas(
                    &mut lambdas[i..=i],
                    &f_vals[pos..=pos],
                    epsilon,
                    cfg.eta_lambda,
                );
            }
        }
        total_loss += loss_val;
        batches += 1;
    }
    Ok(total_loss / batches.max(1) as f64)
}

fn mean_finite(t: &Tensor) -> f64 {
    let finite: Vec<f64> = t.data.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Σ g(π(x), x)·1{f̂(π(x), x) > ε̄} over a split, hard-mode g with the
/// training betas; the indicator is 1 everywhere without a density model.
pub fn constrained_objective(
    policy: &PolicyModel,
    samples: &[PolicySample],
    gps: Option<&GpsModel>,
    epsilon: f64,
    outcome_cfg: &OutcomeConfig,
    cfg: &PolicyConfig,
) -> Result<f64, PolicyError> {
    let hard = OutcomeConfig {
        mode: crate::outcome::Mode::Hard,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..outcome_cfg.clone()
    };
    let mut total = 0.0;
    for chunk in samples.chunks(1024) {
        let mut ctx = Tensor::zeros(chunk.len(), chunk[0].context.len());
        for (r, s) in chunk.iter().enumerate() {
            ctx.row_mut(r).copy_from_slice(&s.context);
        }
        let acts = policy.act_batch(&ctx)?;
        let f_hats = match gps {
            Some(model) => {
                let mut e = Tensor::zeros(
                    chunk.len(),
                    chunk[0].embed.as_ref().expect("embeddings cached").len(),
                );
                for (r, s) in chunk.iter().enumerate() {
                    e.row_mut(r).copy_from_slice(s.embed.as_ref().expect("embeddings cached"));
                }
                let lds = model.log_density_embedded(&acts, &e)?;
                Some(lds.iter().map(|l| l.exp()).collect::<Vec<f64>>())
            }
            None => None,
        };
        for (r, s) in chunk.iter().enumerate() {
            let t = acts.row(r);
            let ok = match &f_hats {
                Some(f) => f[r] > epsilon,
                None => true,
            };
            if ok {
                let b = OrderBounds {
                    stay_id: s.stay_id.clone(),
                    t_min: s.t_min.iter().map(|&v| v as u8).collect(),
                    t_max: s.t_max.iter().map(|&v| v as u8).collect(),
                    fired_rules: vec![],
                };
                total += crate::outcome::utility(t, &s.deltas, &b, &hard);
            }
        }
    }
    Ok(total)
}

/// Train with restarts and early stopping on the constrained validation
/// objective, returning the winner plus per-epoch logs.
pub fn train_policy(
    train: &[PolicySample],
    val: &[PolicySample],
    gps: Option<&GpsModel>,
    outcome_cfg: &OutcomeConfig,
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<(PolicyModel, Vec<EpochLog>), PolicyError> {
    if train.is_empty() {
        return Err(PolicyError::NoSamples);
    }
    let epsilon = cfg
        .epsilon_override
        .or_else(|| gps.and_then(|m| m.threshold))
        .unwrap_or(0.0);
    let ctx_dim = train[0].context.len();
    let mut logs = Vec::new();
    let mut candidates: Vec<PolicyModel> = Vec::new();

    for restart in 0..cfg.restarts.max(1) {
        let restart_seed = seed.wrapping_add(restart as u64);
        let mut policy = PolicyModel::init(ctx_dim, &cfg.hidden, restart_seed);
        let mut adam = AdamState::new(&policy.params);
        let mut lambdas = vec![cfg.lambda_init; train.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed ^ 0x6a09_e667);

        let mut best_obj =
            constrained_objective(&policy, val, gps, epsilon, outcome_cfg, cfg)?;
        let mut best_params = policy.params.clone();
        let mut best_epoch = 0usize;
        let mut bad = 0usize;
        let mut epochs_run = 0usize;

        for epoch in 1..=cfg.max_epochs {
            epochs_run = epoch;
            let train_loss = gda_epoch(
                &mut policy,
                &mut adam,
                &mut lambdas,
                train,
                gps,
                epsilon,
                outcome_cfg,
                cfg,
                &mut rng,
            )?;
            let val_obj = constrained_objective(&policy, val, gps, epsilon, outcome_cfg, cfg)?;
            let mean_lambda = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
            let frac_violating = match gps {
                Some(model) => frac_below(&policy, train, model, epsilon)?,
                None => 0.0,
            };
            logs.push(EpochLog {
                restart,
                epoch,
                train_loss,
                val_objective: val_obj,
                mean_lambda,
                frac_violating,
            });
            if val_obj > best_obj {
                best_obj = val_obj;
                best_params = policy.params.clone();
                best_epoch = epoch;
                bad = 0;
            } else {
                bad += 1;
                if bad >= cfg.patience {
                    break;
                }
            }
        }
        let _ = best_epoch;
        policy.params = best_params;
        policy.meta = Some(PolicyMeta {
            restart,
            val_objective: best_obj,
            epochs_run,
            seed: restart_seed,
            used_gps: gps.is_some(),
        });
        candidates.push(policy);
    }
    let winner = select_model(candidates, val, gps, epsilon, outcome_cfg, cfg)?;
    Ok((winner, logs))
}

fn frac_below(
    policy: &PolicyModel,
    samples: &[PolicySample],
    gps: &GpsModel,
    epsilon: f64,
) -> Result<f64, PolicyError> {
    let mut below = 0usize;
    for chunk in samples.chunks(2048) {
        let mut ctx = Tensor::zeros(chunk.len(), chunk[0].context.len());
        let mut e = Tensor::zeros(
            chunk.len(),
            chunk[0].embed.as_ref().expect("embeddings cached").len(),
        );
        for (r, s) in chunk.iter().enumerate() {
            ctx.row_mut(r).copy_from_slice(&s.context);
            e.row_mut(r).copy_from_slice(s.embed.as_ref().expect("embeddings cached"));
        }
        let acts = policy.act_batch(&ctx)?;
        for ld in gps.log_density_embedded(&acts, &e)? {
            if ld.exp() < epsilon {
                below += 1;
            }
        }
    }
    Ok(below as f64 / samples.len() as f64)
}

/// Pick the candidate maximizing the constrained validation objective;
/// ties go to the earliest restart.
pub fn select_model(
    candidates: Vec<PolicyModel>,
    val: &[PolicySample],
    gps: Option<&GpsModel>,
    epsilon: f64,
    outcome_cfg: &OutcomeConfig,
    cfg: &PolicyConfig,
) -> Result<PolicyModel, PolicyError> {
    if candidates.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let mut best_idx = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, cand) in candidates.iter().enumerate() {
        let score = constrained_objective(cand, val, gps, epsilon, outcome_cfg, cfg)?;
        if score > best_score {
            best_score = score;
            best_idx = i;
        }
    }
    let mut winner = candidates.into_iter().nth(best_idx).expect("index in range");
    if let Some(meta) = winner.meta.as_mut() {
        meta.val_objective = best_score;
    }
    Ok(winner)
}

/// Benchmark baselines sharing the policy surface.
#[derive(Debug, Clone)]
pub enum BaselinePolicy {
    Random { p: f64, seed: u64 },
    Lower,
    Upper,
    Physician,
}

impl BaselinePolicy {
    pub fn random(p: f64, seed: u64) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PolicyError::BadP(p));
        }
        Ok(BaselinePolicy::Random { p, seed })
    }

    pub fn name(&self) -> String {
        match self {
            BaselinePolicy::Random { p, .. } => format!("random_{p}"),
            BaselinePolicy::Lower => "lower_bound".into(),
            BaselinePolicy::Upper => "upper_bound".into(),
            BaselinePolicy::Physician => "physician".into(),
        }
    }

    /// Binary action for one stay; deterministic in (seed, stay_id).
    pub fn act(&self, sample: &PolicySample) -> Vec<f64> {
        match self {
            BaselinePolicy::Random { p, seed } => {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for b in sample.stay_id.as_bytes() {
                    h ^= u64::from(*b);
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed);
                (0..K).map(|_| f64::from(rng.gen::<f64>() < *p)).collect()
            }
            BaselinePolicy::Lower => sample.t_min.clone(),
            BaselinePolicy::Upper => sample.t_max.clone(),
            BaselinePolicy::Physician => sample.t_star.clone(),
        }
    }
}
