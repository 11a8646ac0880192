//! Next-day patient status forecasting: a carry-forward baseline and a
//! channel-shared patch MLP mapping each feature's 48h history to its next
//! 24h, trained on mean squared error with early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{StayWindow, POST_HOURS, PREV_HOURS};
use crate::numeric::{
    grads_by_name, AdamState, Graph, ModelFile, NumericError, ParamSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    CarryForward,
    PatchMlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub kind: ForecastKind,
    /// Patch length; must divide 48.
    pub patch_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    /// Learning rates tried by hyperparameter search.
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Restrict the loss to truly observed future cells.
    pub masked_loss: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            kind: ForecastKind::PatchMlp,
            patch_len: 8,
            embed_dim: 16,
            hidden_dim: 64,
            lr: 1e-3,
            lr_grid: vec![5e-3, 1e-3, 5e-4, 1e-4],
            batch_size: 256,
            max_epochs: 25,
            patience: 5,
            masked_loss: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub kind: ForecastKind,
    pub patch_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub d: usize,
    pub params: Option<ParamSet>,
    pub meta: Option<ForecastMeta>,
}

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no stay in the training split has an observed future window")]
    NoFutureData,
    #[error("48 must be divisible by the patch length, got {0}")]
    BadPatchLen(usize),
    #[error("prediction input must be 48×d, got {rows}×{cols}")]
    BadInput { rows: usize, cols: usize },
    #[error("mse operands differ in shape")]
    MseShape,
    #[error("mse mask selects no cells")]
    EmptyMask,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

impl ForecastModel {
    pub fn carry_forward(d: usize) -> Self {
        ForecastModel {
            kind: ForecastKind::CarryForward,
            patch_len: 0,
            embed_dim: 0,
            hidden_dim: 0,
            d,
            params: None,
            meta: None,
        }
    }

    fn param_names() -> Vec<String> {
        ["embw", "embb", "hw", "hb", "ow", "ob"].iter().map(|s| s.to_string()).collect()
    }

    fn init_params(cfg: &ForecastConfig, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new(seed);
        let n_patch = PREV_HOURS / cfg.patch_len;
        p.insert("embw", crate::numeric::glorot_uniform(cfg.patch_len, cfg.embed_dim, &mut rng));
        p.insert("embb", Tensor::zeros(1, cfg.embed_dim));
        p.insert(
            "hw",
            crate::numeric::glorot_uniform(n_patch * cfg.embed_dim, cfg.hidden_dim, &mut rng),
        );
        p.insert("hb", Tensor::zeros(1, cfg.hidden_dim));
        p.insert("ow", crate::numeric::glorot_uniform(cfg.hidden_dim, POST_HOURS, &mut rng));
        p.insert("ob", Tensor::zeros(1, POST_HOURS));
        p
    }

    /// Forward on the tape. `channels` is (n·d)×48, one row per feature
    /// series; output is (n·d)×24.
    fn forward_channels(
        &self,
        g: &mut Graph,
        params: &[crate::numeric::NodeId],
        channels: crate::numeric::NodeId,
        rows: usize,
    ) -> crate::numeric::NodeId {
        let n_patch = PREV_HOURS / self.patch_len;
        let x = g.reshape(channels, rows * n_patch, self.patch_len);
        let e = g.matmul(x, params[0]);
        let e = g.add_row(e, params[1]);
        let e = g.relu(e);
        let e = g.reshape(e, rows, n_patch * self.embed_dim);
        let h = g.matmul(e, params[2]);
        let h = g.add_row(h, params[3]);
        let h = g.relu(h);
        let o = g.matmul(h, params[4]);
        g.add_row(o, params[5])
    }

    /// Predict the next 24h matrix from a 48×d standardized history.
    pub fn predict(&self, x_prev: &Tensor) -> Result<Tensor, ForecastError> {
        if x_prev.rows != PREV_HOURS || x_prev.cols != self.d {
            return Err(ForecastError::BadInput { rows: x_prev.rows, cols: x_prev.cols });
        }
        match self.kind {
            ForecastKind::CarryForward => {
                let last = x_prev.row(PREV_HOURS - 1);
                let mut out = Tensor::zeros(POST_HOURS, self.d);
                for r in 0..POST_HOURS {
                    out.row_mut(r).copy_from_slice(last);
                }
                Ok(out)
            }
            ForecastKind::PatchMlp => {
                let params = self.params.as_ref().expect("trained patch model has params");
                let channels = to_channels(&[x_prev]);
                let mut g = Graph::new();
                let nodes = crate::numeric::mlp::constant_all(&mut g, params);
                let x = g.constant(channels);
                let y = self.forward_channels(&mut g, &nodes, x, self.d);
                let y = g.value(y);
                // y is d×24; transpose back to 24×d
                let mut out = Tensor::zeros(POST_HOURS, self.d);
                for f in 0..self.d {
                    for h in 0..POST_HOURS {
                        out.set(h, f, y.at(f, h));
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let arch = serde_json::json!({
            "kind": self.kind,
            "patch_len": self.patch_len,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "d": self.d,
        });
        let meta = serde_json::to_value(&self.meta).expect("meta serialization");
        let file = match &self.params {
            Some(p) => ModelFile::from_params(arch, p, meta),
            None => ModelFile { arch, seed: 0, params: Default::default(), meta },
        };
        file.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let file = ModelFile::load(path)?;
        let kind: ForecastKind = serde_json::from_value(file.arch["kind"].clone())
            .map_err(|e| NumericError::BadModelFile(e.to_string()))?;
        let get = |k: &str| file.arch[k].as_u64().unwrap_or(0) as usize;
        let meta = serde_json::from_value(file.meta.clone()).ok();
        let params = match kind {
            ForecastKind::CarryForward => None,
            ForecastKind::PatchMlp => Some(file.to_params(&Self::param_names())?),
        };
        Ok(ForecastModel {
            kind,
            patch_len: get("patch_len"),
            embed_dim: get("embed_dim"),
            hidden_dim: get("hidden_dim"),
            d: get("d"),
            params,
            meta,
        })
    }
}

/// Mean squared error over all cells, or over masked cells only.
pub fn mse(pred: &Tensor, truth: &Tensor, mask: Option<&Tensor>) -> Result<f64, ForecastError> {
    if !pred.same_shape(truth) {
        return Err(ForecastError::MseShape);
    }
    match mask {
        None => {
            let s: f64 =
                pred.data.iter().zip(&truth.data).map(|(&a, &b)| (a - b) * (a - b)).sum();
            Ok(s / pred.len() as f64)
        }
        Some(m) => {
            if !m.same_shape(pred) {
                return Err(ForecastError::MseShape);
            }
            let mut n = 0usize;
            let mut s = 0.0;
            for i in 0..pred.len() {
                if m.data[i] != 0.0 {
                    n += 1;
                    let d = pred.data[i] - truth.data[i];
                    s += d * d;
                }
            }
            if n == 0 {
                return Err(ForecastError::EmptyMask);
            }
            Ok(s / n as f64)
        }
    }
}

/// Stack windows' x_prev into channel rows: (n·d)×48, transposed per stay.
fn to_channels(mats: &[&Tensor]) -> Tensor {
    let d = mats[0].cols;
    let mut out = Tensor::zeros(mats.len() * d, PREV_HOURS);
    for (i, m) in mats.iter().enumerate() {
        for f in 0..d {
            for h in 0..PREV_HOURS {
                out.set(i * d + f, h, m.at(h, f));
            }
        }
    }
    out
}

fn to_channel_targets(mats: &[&Tensor]) -> Tensor {
    let d = mats[0].cols;
    let mut out = Tensor::zeros(mats.len() * d, POST_HOURS);
    for (i, m) in mats.iter().enumerate() {
        for f in 0..d {
            for h in 0..POST_HOURS {
                out.set(i * d + f, h, m.at(h, f));
            }
        }
    }
    out
}

/// Mean MSE of a model across stays with an observed future window.
pub fn eval_mse(model: &ForecastModel, windows: &[StayWindow]) -> Result<f64, ForecastError> {
    let mut total = 0.0;
    let mut cells = 0usize;
    for w in windows {
        let Some(truth) = &w.x_post_true else { continue };
        let pred = model.predict(&w.x_prev)?;
        for (a, b) in pred.data.iter().zip(&truth.data) {
            total += (a - b) * (a - b);
        }
        cells += pred.len();
    }
    if cells == 0 {
        return Err(ForecastError::NoFutureData);
    }
    Ok(total / cells as f64)
}

/// Train the patch MLP with Adam and early stopping on validation MSE;
/// returns the best-validation snapshot.
pub fn train_forecaster(
    train: &[StayWindow],
    val: &[StayWindow],
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<ForecastModel, ForecastError> {
    if cfg.kind == ForecastKind::CarryForward {
        let d = train.first().map(|w| w.x_prev.cols).unwrap_or(0);
        return Ok(ForecastModel::carry_forward(d));
    }
    if PREV_HOURS % cfg.patch_len != 0 {
        return Err(ForecastError::BadPatchLen(cfg.patch_len));
    }
    let usable: Vec<&StayWindow> = train.iter().filter(|w| w.x_post_true.is_some()).collect();
    if usable.is_empty() {
        return Err(ForecastError::NoFutureData);
    }
    let d = usable[0].x_prev.cols;

    let mut model = ForecastModel {
        kind: ForecastKind::PatchMlp,
        patch_len: cfg.patch_len,
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        d,
        params: Some(ForecastModel::init_params(cfg, seed)),
        meta: None,
    };
    let mut adam = AdamState::new(model.params.as_ref().expect("initialized"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfefe_1234);

    let mut best_params = model.params.clone().expect("initialized");
    let mut best_val = eval_mse(&model, val)?;
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&Tensor> = chunk.iter().map(|&i| &usable[i].x_prev).collect();
            let ys: Vec<&Tensor> =
                chunk.iter().map(|&i| usable[i].x_post_true.as_ref().expect("filtered")).collect();
            let inputs = to_channels(&xs);
            let targets = to_channel_targets(&ys);
            let rows = chunk.len() * d;

            let params = model.params.as_ref().expect("training model");
            let mut g = Graph::new();
            let nodes = crate::numeric::mlp::leaf_all(&mut g, params);
            let x = g.constant(inputs);
            let t = g.constant(targets);
            let pred = model.forward_channels(&mut g, &nodes, x, rows);
            let diff = g.sub(pred, t);
            let sq = g.square(diff);
            let loss = if cfg.masked_loss {
                let masks: Vec<&Tensor> = chunk
                    .iter()
                    .map(|&i| usable[i].obs_mask_post.as_ref().expect("post mask present"))
                    .collect();
                let mask = to_channel_targets(&masks);
                let count: f64 = mask.data.iter().sum();
                if count == 0.0 {
                    return Err(ForecastError::EmptyMask);
                }
                let masked = g.mul_const(sq, mask);
                let s = g.sum_all(masked);
                g.scale(s, 1.0 / count)
            } else {
                g.mean_all(sq)
            };
            let grads = g.backward(loss)?;
            let by_name = grads_by_name(&g, params, &nodes, &grads);
            adam.step(model.params.as_mut().expect("training model"), &by_name, cfg.lr);
        }
        let val_mse = eval_mse(&model, val)?;
        if val_mse < best_val {
            best_val = val_mse;
            best_params = model.params.clone().expect("training model");
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    model.params = Some(best_params);
    model.meta = Some(ForecastMeta { epochs_run, best_epoch, val_mse: best_val, seed });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_from(x_prev: Tensor, x_post: Option<Tensor>) -> StayWindow {
        let mask_prev = Tensor::filled(PREV_HOURS, x_prev.cols, 1.0);
        let mask_post = x_post.as_ref().map(|t| Tensor::filled(t.rows, t.cols, 1.0));
        StayWindow {
            stay_id: "t".into(),
            anchor_hour: 48.0,
            obs_mask_prev: mask_prev,
            x_post_true: x_post,
            obs_mask_post: mask_post,
            raw_prev: vec![],
            x_prev,
        }
    }

    #[test]
    fn carry_forward_repeats_last_row() {
        let d = 5;
        let mut x = Tensor::filled(PREV_HOURS, d, 3.25);
        for f in 0..d {
            x.set(PREV_HOURS - 1, f, f as f64);
        }
        let m = ForecastModel::carry_forward(d);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.rows, POST_HOURS);
        for r in 0..POST_HOURS {
            for f in 0..d {
                assert_eq!(y.at(r, f), f as f64);
            }
        }
        // constant matrix stays constant
        let c = Tensor::filled(PREV_HOURS, d, 7.0);
        let y = m.predict(&c).unwrap();
        assert!(y.data.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let d = 3;
        let cfg = ForecastConfig { embed_dim: 4, hidden_dim: 6, ..Default::default() };
        let mut params = ParamSet::new(0);
        let n_patch = PREV_HOURS / cfg.patch_len;
        params.insert("embw", Tensor::zeros(cfg.patch_len, cfg.embed_dim));
        params.insert("embb", Tensor::zeros(1, cfg.embed_dim));
        params.insert("hw", Tensor::zeros(n_patch * cfg.embed_dim, cfg.hidden_dim));
        params.insert("hb", Tensor::zeros(1, cfg.hidden_dim));
        params.insert("ow", Tensor::zeros(cfg.hidden_dim, POST_HOURS));
        params.insert("ob", Tensor::zeros(1, POST_HOURS));
        let model = ForecastModel {
            kind: ForecastKind::PatchMlp,
            patch_len: cfg.patch_len,
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            d,
            params: Some(params),
            meta: None,
        };
        let x = Tensor::filled(PREV_HOURS, d, 1.5);
        let y = model.predict(&x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_values() {
        let a = Tensor::row_vector(vec![0.0, 2.0]);
        let b = Tensor::row_vector(vec![0.0, 0.0]);
        assert_eq!(mse(&a, &a, None).unwrap(), 0.0);
        assert_eq!(mse(&a, &b, None).unwrap(), 2.0);
        let ones = Tensor::row_vector(vec![1.0, 1.0]);
        let zeros = Tensor::row_vector(vec![0.0, 0.0]);
        assert_eq!(mse(&ones, &zeros, None).unwrap(), 1.0);
        // masked
        let m = Tensor::row_vector(vec![0.0, 1.0]);
        assert_eq!(mse(&a, &b, Some(&m)).unwrap(), 4.0);
        let empty = Tensor::row_vector(vec![0.0, 0.0]);
        assert!(matches!(mse(&a, &b, Some(&empty)), Err(ForecastError::EmptyMask)));
    }

    #[test]
    fn training_learns_zero_variance_cohort() {
        // all-zero windows: the model should reach (near-)zero val MSE
        let d = 4;
        let mk = || window_from(Tensor::zeros(PREV_HOURS, d), Some(Tensor::zeros(POST_HOURS, d)));
        let train: Vec<StayWindow> = (0..8).map(|_| mk()).collect();
        let val: Vec<StayWindow> = (0..3).map(|_| mk()).collect();
        let cfg = ForecastConfig { max_epochs: 3, batch_size: 4, ..Default::default() };
        let model = train_forecaster(&train, &val, &cfg, 5).unwrap();
        let v = eval_mse(&model, &val).unwrap();
        assert!(v < 1e-6, "val mse {v}");
    }

    #[test]
    fn training_without_futures_errors() {
        let d = 4;
        let train = vec![window_from(Tensor::zeros(PREV_HOURS, d), None)];
        let cfg = ForecastConfig::default();
        assert!(matches!(
            train_forecaster(&train, &[], &cfg, 1),
            Err(ForecastError::NoFutureData)
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let d = 3;
        let mk = || {
            window_from(
                Tensor::filled(PREV_HOURS, d, 0.5),
                Some(Tensor::filled(POST_HOURS, d, 0.25)),
            )
        };
        let train: Vec<StayWindow> = (0..4).map(|_| mk()).collect();
        let cfg = ForecastConfig { max_epochs: 2, batch_size: 2, ..Default::default() };
        let model = train_forecaster(&train, &train, &cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        model.save(&p).unwrap();
        let back = ForecastModel::load(&p).unwrap();
        let x = Tensor::filled(PREV_HOURS, d, 0.4);
        assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
    }
}
