//! Lab-order utility: informativeness of ordered panels, deviation from the
//! per-stay order bounds, and normalized test cost, combined as
//! `g(t, x) = ΔX(t, x) − β1·L_b(t, x) − β2·C(t)`.
//!
//! Smooth mode replaces the step indicator with a sharp sigmoid and the
//! absolute value inside the bound term with sqrt(u²+ε) so g is
//! differentiable in t; hard mode is the discrete evaluation form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureCatalog, StayWindow, K};
use crate::numeric::{sigmoid, Tensor, SMOOTH_ABS_EPS};
use crate::rules::OrderBounds;

/// Per-test clinical costs in USD; normalized into the cost vector α.
pub const REAL_COSTS_USD: [f64; K] = [12.0, 5.0, 12.36, 18.0, 9.1, 10.0, 18.62, 1.5, 18.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Smooth,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Uniform,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelAgg {
    Mean,
    Sum,
}

pub fn uniform_alpha() -> Vec<f64> {
    vec![1.0 / K as f64; K]
}

pub fn real_alpha() -> Vec<f64> {
    let total: f64 = REAL_COSTS_USD.iter().sum();
    REAL_COSTS_USD.iter().map(|c| c / total).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Normalized cost vector, Σα = 1.
    pub alpha: Vec<f64>,
    /// Sigmoid sharpness for the smooth step approximation.
    pub sharpness: f64,
    pub mode: Mode,
    pub panel_agg: PanelAgg,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            beta1: 1.0,
            beta2: 1.0,
            alpha: real_alpha(),
            sharpness: 50.0,
            mode: Mode::Hard,
            panel_agg: PanelAgg::Mean,
        }
    }
}

impl OutcomeConfig {
    pub fn validate(&self) -> Result<(), OutcomeError> {
        if self.alpha.len() != K {
            return Err(OutcomeError::BadAlpha("alpha must have one entry per test".into()));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(OutcomeError::BadAlpha(format!("alpha sums to {sum}, expected 1")));
        }
        if self.alpha.iter().any(|&a| a < 0.0) {
            return Err(OutcomeError::BadAlpha("alpha entries must be non-negative".into()));
        }
        if !(self.sharpness > 0.0) {
            return Err(OutcomeError::BadAlpha("sharpness must be positive".into()));
        }
        if self.beta1 < 0.0 || self.beta2 < 0.0 {
            return Err(OutcomeError::BadAlpha("betas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: Mode) -> OutcomeConfig {
        OutcomeConfig { mode, ..self.clone() }
    }
}

#[derive(Debug, Error)]
pub enum OutcomeError {
    #[error("test metrics need a binary order vector, got {0}")]
    NonBinary(f64),
    #[error("bad outcome config: {0}")]
    BadAlpha(String),
}

/// Discrete evaluation metrics for one stay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub delta_x: f64,
    pub cost: f64,
    pub l_b_test: f64,
    pub l_low: f64,
    pub l_up: f64,
}

/// Step indicator 1(t > 0.5), smooth mode σ(k·(t − 0.5)).
pub fn indicator(t: f64, sharpness: f64, mode: Mode) -> f64 {
    match mode {
        Mode::Hard => f64::from(t > 0.5),
        Mode::Smooth => sigmoid(sharpness * (t - 0.5)),
    }
}

struct ColStats {
    mean: f64,
    min: f64,
    max: f64,
}

fn col_stats(x: &Tensor, col: usize, mask: Option<&Tensor>) -> Option<ColStats> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for r in 0..x.rows {
        if let Some(m) = mask {
            if m.at(r, col) == 0.0 {
                continue;
            }
        }
        let v = x.at(r, col);
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    (n > 0).then(|| ColStats { mean: sum / n as f64, min, max })
}

/// Per-test informativeness coefficients Δ_avg,j + Δ_range,j between the
/// observed history and a (predicted or observed) future matrix. History
/// statistics use only truly observed cells, falling back to the imputed
/// matrix for features never observed in the window.
pub fn panel_deltas(
    window: &StayWindow,
    x_post: &Tensor,
    catalog: &FeatureCatalog,
    agg: PanelAgg,
) -> Vec<f64> {
    assert_eq!(x_post.cols, window.x_prev.cols, "future matrix width mismatch");
    let mut out = vec![0.0; K];
    for (t, d) in out.iter_mut().enumerate() {
        let panel = catalog.panel(t);
        let mut avg_part = 0.0;
        let mut range_part = 0.0;
        for &f in panel {
            let prev = col_stats(&window.x_prev, f, Some(&window.obs_mask_prev))
                .or_else(|| col_stats(&window.x_prev, f, None))
                .expect("x_prev is dense");
            let post = col_stats(x_post, f, None).expect("future matrix is dense");
            avg_part += (prev.mean - post.mean).abs();
            let d_max = (prev.max - post.max).abs();
            let d_min = (prev.min - post.min).abs();
            range_part += d_max.max(d_min);
        }
        let denom = match agg {
            PanelAgg::Mean => panel.len() as f64,
            PanelAgg::Sum => 1.0,
        };
        *d = (avg_part + range_part) / denom;
    }
    out
}

/// ΔX(t, x) = Σ_j 1(t_j > 0.5)·(Δ_avg,j + Δ_range,j) with precomputed
/// per-test coefficients.
pub fn delta_x_from(t: &[f64], deltas: &[f64], cfg: &OutcomeConfig) -> f64 {
    assert_eq!(t.len(), K);
    t.iter()
        .zip(deltas)
        .map(|(&tj, &dj)| indicator(tj, cfg.sharpness, cfg.mode) * dj)
        .sum()
}

/// ΔX computed directly from a window and future matrix.
pub fn delta_x(
    t: &[f64],
    window: &StayWindow,
    x_post: &Tensor,
    catalog: &FeatureCatalog,
    cfg: &OutcomeConfig,
) -> f64 {
    let deltas = panel_deltas(window, x_post, catalog, cfg.panel_agg);
    delta_x_from(t, &deltas, cfg)
}

/// Σ over indices with t_min = t_max of |t_min − t|; the equality mask is
/// data-dependent and treated as a constant under differentiation.
pub fn bound_loss(t: &[f64], bounds: &OrderBounds, cfg: &OutcomeConfig) -> f64 {
    assert_eq!(t.len(), K);
    let mut total = 0.0;
    for j in 0..K {
        if bounds.t_min[j] == bounds.t_max[j] {
            let u = f64::from(bounds.t_min[j]) - t[j];
            total += match cfg.mode {
                Mode::Hard => u.abs(),
                Mode::Smooth => (u * u + SMOOTH_ABS_EPS).sqrt(),
            };
        }
    }
    total
}

/// C(t) = Σ α_j·1(t_j > 0.5).
pub fn cost(t: &[f64], cfg: &OutcomeConfig) -> f64 {
    assert_eq!(t.len(), K);
    t.iter()
        .zip(&cfg.alpha)
        .map(|(&tj, &aj)| aj * indicator(tj, cfg.sharpness, cfg.mode))
        .sum()
}

/// g(t, x) = ΔX − β1·L_b − β2·C, all in the config's mode.
pub fn utility(t: &[f64], deltas: &[f64], bounds: &OrderBounds, cfg: &OutcomeConfig) -> f64 {
    delta_x_from(t, deltas, cfg) - cfg.beta1 * bound_loss(t, bounds, cfg)
        - cfg.beta2 * cost(t, cfg)
}

/// Discrete evaluation metrics for a binary order vector:
/// L_low counts required tests missed, L_up redundant tests ordered.
pub fn test_metrics(
    t: &[f64],
    bounds: &OrderBounds,
    deltas: &[f64],
    cfg: &OutcomeConfig,
) -> Result<Metrics, OutcomeError> {
    assert_eq!(t.len(), K);
    if let Some(&bad) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(OutcomeError::NonBinary(bad));
    }
    let hard = cfg.with_mode(Mode::Hard);
    let mut l_low = 0.0;
    let mut l_up = 0.0;
    for j in 0..K {
        if t[j] < 0.5 && bounds.t_min[j] == 1 {
            l_low += 1.0;
        }
        if t[j] > 0.5 && bounds.t_max[j] == 0 {
            l_up += 1.0;
        }
    }
    Ok(Metrics {
        delta_x: delta_x_from(t, deltas, &hard),
        cost: cost(t, &hard),
        l_b_test: l_low + l_up,
        l_low,
        l_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_catalog, fit_stats, make_window, Obs, PatientStay};

    fn bounds(t_min: [u8; 3], t_max: [u8; 3]) -> OrderBounds {
        let mut bmin = vec![0u8; K];
        let mut bmax = vec![0u8; K];
        bmin[..3].copy_from_slice(&t_min);
        bmax[..3].copy_from_slice(&t_max);
        OrderBounds { stay_id: "t".into(), t_min: bmin, t_max: bmax, fired_rules: vec![] }
    }

    fn padded(t: [f64; 3]) -> Vec<f64> {
        let mut v = vec![0.0; K];
        v[..3].copy_from_slice(&t);
        v
    }

    #[test]
    fn indicator_values() {
        assert_eq!(indicator(0.5, 50.0, Mode::Smooth), 0.5);
        assert_eq!(indicator(0.49, 50.0, Mode::Hard), 0.0);
        // σ(20) = 1 − 2.06e-9
        let v = indicator(0.9, 50.0, Mode::Smooth);
        assert!((v - (1.0 - 2.0611536181902037e-9)).abs() < 1e-15, "got {v:.17}");
    }

    #[test]
    fn bound_loss_hand_value() {
        let b = bounds([1, 0, 0], [1, 0, 1]);
        let t = padded([0.2, 0.7, 0.9]);
        let cfg = OutcomeConfig { mode: Mode::Hard, ..OutcomeConfig::default() };
        assert!((bound_loss(&t, &b, &cfg) - 1.5).abs() < 1e-12);
        // t at the bounds → 0
        let t0 = padded([1.0, 0.0, 0.0]);
        assert_eq!(bound_loss(&t0, &b, &cfg), 0.0);
    }

    #[test]
    fn cost_values() {
        let mut cfg = OutcomeConfig {
            alpha: uniform_alpha(),
            mode: Mode::Hard,
            ..OutcomeConfig::default()
        };
        let mut t = vec![0.0; K];
        t[0] = 1.0;
        t[4] = 1.0;
        t[9] = 1.0;
        assert!((cost(&t, &cfg) - 0.3).abs() < 1e-12);
        // real costs: CBC alone is 12/106.08
        cfg.alpha = real_alpha();
        let mut t = vec![0.0; K];
        t[0] = 1.0;
        assert!((cost(&t, &cfg) - 12.0 / 106.08).abs() < 1e-12);
        // ordering everything costs exactly 1 (α is normalized)
        let t = vec![1.0; K];
        assert!((cost(&t, &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_x_single_feature_panel() {
        // one panel feature: prev mean 7.0 / post mean 5.5, prev max 9 post 6,
        // prev min 5 post 5 → Δavg = 1.5, Δrange = max(3, 0) = 3 → 4.5
        let cat = default_catalog();
        // INR is a single-feature panel (test index 3, feature id 8)
        let f = cat.feature_id("INR").unwrap();
        let obs = vec![
            Obs { hour: 1.5, feature: f, value: 7.0 },
            Obs { hour: 10.5, feature: f, value: 9.0 },
            Obs { hour: 20.5, feature: f, value: 5.0 },
        ];
        let stay = PatientStay::new("d".into(), 48.0, obs, vec![0; K], &cat).unwrap();
        // identity standardization keeps the clinical values
        let mut stats = fit_stats(&[], cat.d());
        stats.std = vec![1.0; cat.d()];
        let w = make_window(&stay, &stats, &cat).unwrap();
        let mut post = Tensor::zeros(24, cat.d());
        for r in 0..24 {
            // post mean 5.5, max 6, min 5
            post.set(r, f, if r % 2 == 0 { 6.0 } else { 5.0 });
        }
        let cfg = OutcomeConfig { mode: Mode::Hard, ..OutcomeConfig::default() };
        let deltas = panel_deltas(&w, &post, &cat, PanelAgg::Mean);
        assert!((deltas[3] - 4.5).abs() < 1e-12, "got {}", deltas[3]);
        let mut t = vec![0.0; K];
        t[3] = 1.0;
        assert!((delta_x_from(&t, &deltas, &cfg) - 4.5).abs() < 1e-12);
        // zero order vector → ΔX = 0
        assert_eq!(delta_x_from(&vec![0.0; K], &deltas, &cfg), 0.0);
    }

    #[test]
    fn identical_windows_have_zero_delta() {
        let cat = default_catalog();
        let f = cat.feature_id("Lactate").unwrap();
        let obs = vec![Obs { hour: 5.0, feature: f, value: 2.0 }];
        let stay = PatientStay::new("d".into(), 48.0, obs, vec![0; K], &cat).unwrap();
        let mut stats = fit_stats(&[], cat.d());
        stats.std = vec![1.0; cat.d()];
        let w = make_window(&stay, &stats, &cat).unwrap();
        // future equal to the prev statistics for every feature: mean of
        // observed Lactate is 2.0; everything else imputed at 0
        let mut post = Tensor::zeros(24, cat.d());
        for r in 0..24 {
            post.set(r, f, 2.0);
        }
        let deltas = panel_deltas(&w, &post, &cat, PanelAgg::Mean);
        let t = vec![1.0; K];
        let cfg = OutcomeConfig { mode: Mode::Hard, ..OutcomeConfig::default() };
        assert!(delta_x_from(&t, &deltas, &cfg).abs() < 1e-12);
    }

    #[test]
    fn utility_composition() {
        let b = bounds([1, 0, 0], [1, 0, 1]);
        let deltas: Vec<f64> = (0..K).map(|j| if j == 0 { 4.5 } else { 0.0 }).collect();
        let t = padded([1.0, 1.0, 0.0]);
        let mut cfg = OutcomeConfig {
            alpha: uniform_alpha(),
            mode: Mode::Hard,
            beta1: 0.0,
            beta2: 0.0,
            ..OutcomeConfig::default()
        };
        // β1 = β2 = 0 → utility is ΔX alone
        assert!((utility(&t, &deltas, &b, &cfg) - 4.5).abs() < 1e-12);
        // β1 = β2 = 1, L_b = |0 − 1| = 1 (index 1), C = 0.2 → 4.5 − 1 − 0.2
        cfg.beta1 = 1.0;
        cfg.beta2 = 1.0;
        assert!((utility(&t, &deltas, &b, &cfg) - 3.3).abs() < 1e-12);
        // all-zero order with zero t_min → 0
        let b0 = bounds([0, 0, 0], [0, 0, 0]);
        assert_eq!(utility(&vec![0.0; K], &deltas, &b0, &cfg), 0.0);
    }

    #[test]
    fn test_metrics_hand_case() {
        let b = bounds([1, 0, 0], [1, 0, 1]);
        let t = padded([0.0, 1.0, 1.0]);
        let cfg = OutcomeConfig { alpha: uniform_alpha(), ..OutcomeConfig::default() };
        let m = test_metrics(&t, &b, &vec![0.0; K], &cfg).unwrap();
        assert_eq!(m.l_low, 1.0);
        assert_eq!(m.l_up, 1.0);
        assert_eq!(m.l_b_test, 2.0);
        // non-binary input is rejected
        assert!(test_metrics(&padded([0.5, 0.0, 0.0]), &b, &vec![0.0; K], &cfg).is_err());
    }

    #[test]
    fn binary_bound_loss_equals_low_plus_up() {
        // randomized identity check over all binary t and random bounds
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let cfg = OutcomeConfig {
            alpha: uniform_alpha(),
            mode: Mode::Hard,
            ..OutcomeConfig::default()
        };
        for _ in 0..1000 {
            let t: Vec<f64> = (0..K).map(|_| f64::from(rng.gen::<bool>())).collect();
            let t_min: Vec<u8> = (0..K).map(|_| rng.gen_range(0..2u8)).collect();
            let t_max: Vec<u8> =
                t_min.iter().map(|&lo| if lo == 1 { 1 } else { rng.gen_range(0..2u8) }).collect();
            let b = OrderBounds { stay_id: "p".into(), t_min, t_max, fired_rules: vec![] };
            let lb = bound_loss(&t, &b, &cfg);
            let m = test_metrics(&t, &b, &vec![0.0; K], &cfg).unwrap();
            assert_eq!(lb, m.l_low + m.l_up);
        }
    }

    #[test]
    fn more_beta2_never_helps() {
        let b = bounds([1, 0, 0], [1, 0, 1]);
        let deltas = vec![1.0; K];
        let t = padded([1.0, 1.0, 1.0]);
        let base = OutcomeConfig { alpha: uniform_alpha(), mode: Mode::Hard, ..Default::default() };
        let mut last = f64::INFINITY;
        for beta2 in [0.0, 0.5, 1.0, 5.0] {
            let cfg = OutcomeConfig { beta2, ..base.clone() };
            let u = utility(&t, &deltas, &b, &cfg);
            assert!(u <= last);
            last = u;
        }
    }

    #[test]
    fn smooth_approaches_hard_as_sharpness_grows() {
        let t: Vec<f64> = (0..K).map(|j| f64::from(j % 2 == 0)).collect();
        let deltas = vec![0.7; K];
        let alpha = uniform_alpha();
        let hard = OutcomeConfig { alpha: alpha.clone(), mode: Mode::Hard, ..Default::default() };
        let hard_dx = delta_x_from(&t, &deltas, &hard);
        let hard_c = cost(&t, &hard);
        let mut prev_gap = f64::INFINITY;
        for k in [10.0, 50.0, 200.0] {
            let s = OutcomeConfig {
                alpha: alpha.clone(),
                mode: Mode::Smooth,
                sharpness: k,
                ..Default::default()
            };
            let gap = (delta_x_from(&t, &deltas, &s) - hard_dx).abs()
                + (cost(&t, &s) - hard_c).abs();
            // non-strict once the gap saturates at floating-point noise
            assert!(gap <= prev_gap + 1e-12, "gap {gap} grew at k={k}");
            prev_gap = gap;
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = OutcomeConfig::default();
        cfg.validate().unwrap();
        cfg.alpha[0] += 0.01;
        assert!(cfg.validate().is_err());
    }
}
