//! Hour-binned, imputed, standardized context windows around the decision
//! anchor: 48 hours of history and (when observed) 24 hours of future.

use crate::numeric::Tensor;

use super::catalog::FeatureCatalog;
use super::stay::{Obs, PatientStay};
use super::DataError;

pub const PREV_HOURS: usize = 48;
pub const POST_HOURS: usize = 24;

/// Minimum standard deviation; also the std assigned to unseen features.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn standardize(&self, feature: usize, raw: f64) -> f64 {
        (raw - self.mean[feature]) / self.std[feature]
    }

    pub fn unstandardize(&self, feature: usize, z: f64) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }
}

/// Per-feature mean and population standard deviation over every raw
/// observation in the training split, std floored at [`STD_FLOOR`].
pub fn fit_stats(train: &[PatientStay], d: usize) -> FeatureStats {
    let mut n = vec![0u64; d];
    let mut sum = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    for stay in train {
        for o in &stay.observations {
            n[o.feature] += 1;
            sum[o.feature] += o.value;
            sumsq[o.feature] += o.value * o.value;
        }
    }
    let mut mean = vec![0.0; d];
    let mut std = vec![STD_FLOOR; d];
    for f in 0..d {
        if n[f] > 0 {
            let m = sum[f] / n[f] as f64;
            let var = (sumsq[f] / n[f] as f64 - m * m).max(0.0);
            mean[f] = m;
            std[f] = var.sqrt().max(STD_FLOOR);
        }
    }
    FeatureStats { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StayWindow {
    pub stay_id: String,
    pub anchor_hour: f64,
    /// 48×d standardized, hour-binned, imputed history.
    pub x_prev: Tensor,
    /// 48×d 0/1; 1 marks cells with at least one raw observation.
    pub obs_mask_prev: Tensor,
    /// 24×d standardized future, present iff the post interval has data.
    pub x_post_true: Option<Tensor>,
    pub obs_mask_post: Option<Tensor>,
    /// Raw observations in [anchor−48, anchor), clinical units.
    pub raw_prev: Vec<Obs>,
}

fn bin_matrix(
    obs: &[Obs],
    window_start: f64,
    hours: usize,
    d: usize,
    stats: &FeatureStats,
) -> (Tensor, Tensor) {
    let mut sum = vec![0.0f64; hours * d];
    let mut count = vec![0u32; hours * d];
    for o in obs {
        let mut bin = (o.hour - window_start).floor() as usize;
        if bin >= hours {
            bin = hours - 1; // guards hour == window end under fp rounding
        }
        sum[bin * d + o.feature] += o.value;
        count[bin * d + o.feature] += 1;
    }
    let mut x = Tensor::zeros(hours, d);
    let mut mask = Tensor::zeros(hours, d);
    for f in 0..d {
        let mut carry = 0.0; // standardized training mean
        for h in 0..hours {
            let idx = h * d + f;
            if count[idx] > 0 {
                let avg = sum[idx] / count[idx] as f64;
                carry = stats.standardize(f, avg);
                mask.data[idx] = 1.0;
            }
            x.data[idx] = carry;
        }
    }
    (x, mask)
}

/// Build the context window for one stay. Cells with multiple observations
/// are averaged before standardization; empty cells carry the last observed
/// standardized value forward within the window, else 0.
pub fn make_window(
    stay: &PatientStay,
    stats: &FeatureStats,
    catalog: &FeatureCatalog,
) -> Result<StayWindow, DataError> {
    let d = catalog.d();
    let a = stay.anchor_hour;
    let prev_start = a - PREV_HOURS as f64;
    let raw_prev: Vec<Obs> = stay.obs_in(prev_start, a).copied().collect();
    if raw_prev.is_empty() {
        return Err(DataError::EmptyWindow { stay_id: stay.stay_id.clone() });
    }
    let (x_prev, obs_mask_prev) = bin_matrix(&raw_prev, prev_start, PREV_HOURS, d, stats);

    let raw_post: Vec<Obs> = stay.obs_in(a, a + POST_HOURS as f64).copied().collect();
    let (x_post_true, obs_mask_post) = if raw_post.is_empty() {
        (None, None)
    } else {
        let (x, m) = bin_matrix(&raw_post, a, POST_HOURS, d, stats);
        (Some(x), Some(m))
    };

    Ok(StayWindow {
        stay_id: stay.stay_id.clone(),
        anchor_hour: a,
        x_prev,
        obs_mask_prev,
        x_post_true,
        obs_mask_post,
        raw_prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::catalog::default_catalog;
    use crate::data::catalog::K;

    fn stats_with(feature: usize, mean: f64, std: f64, d: usize) -> FeatureStats {
        let mut s = FeatureStats { mean: vec![0.0; d], std: vec![1.0; d] };
        s.mean[feature] = mean;
        s.std[feature] = std;
        s
    }

    fn stay(obs: Vec<Obs>) -> PatientStay {
        let cat = default_catalog();
        PatientStay::new("w".into(), 48.0, obs, vec![0; K], &cat).unwrap()
    }

    #[test]
    fn bin_average_then_standardize() {
        // feature 0 observed at hours 1.2 and 1.8, values 4 and 6; mean 5 std 1
        // → cell (1, 0) is the z-score of the bin average 5, i.e. 0.
        let cat = default_catalog();
        let st = stay(vec![
            Obs { hour: 1.2, feature: 0, value: 4.0 },
            Obs { hour: 1.8, feature: 0, value: 6.0 },
        ]);
        let stats = stats_with(0, 5.0, 1.0, cat.d());
        let w = make_window(&st, &stats, &cat).unwrap();
        assert_eq!(w.x_prev.at(1, 0), 0.0);
        assert_eq!(w.obs_mask_prev.at(1, 0), 1.0);
        // carry-forward fills later bins with the same standardized value
        assert_eq!(w.x_prev.at(40, 0), 0.0);
        assert_eq!(w.obs_mask_prev.at(40, 0), 0.0);
    }

    #[test]
    fn unobserved_feature_is_standardized_zero() {
        let cat = default_catalog();
        let st = stay(vec![Obs { hour: 3.0, feature: 1, value: 9.0 }]);
        let stats = stats_with(0, 5.0, 1.0, cat.d());
        let w = make_window(&st, &stats, &cat).unwrap();
        for h in 0..PREV_HOURS {
            assert_eq!(w.x_prev.at(h, 0), 0.0);
            assert_eq!(w.obs_mask_prev.at(h, 0), 0.0);
        }
    }

    #[test]
    fn anchor_observation_belongs_to_post_window() {
        let cat = default_catalog();
        let st = stay(vec![
            Obs { hour: 10.0, feature: 0, value: 1.0 },
            Obs { hour: 48.0, feature: 0, value: 2.0 },
        ]);
        let stats = stats_with(0, 0.0, 1.0, cat.d());
        let w = make_window(&st, &stats, &cat).unwrap();
        assert_eq!(w.raw_prev.len(), 1);
        let post = w.x_post_true.unwrap();
        assert_eq!(post.at(0, 0), 2.0);
        assert_eq!(w.obs_mask_post.unwrap().at(0, 0), 1.0);
    }

    #[test]
    fn empty_prev_window_is_an_error() {
        let cat = default_catalog();
        let st = stay(vec![Obs { hour: 50.0, feature: 0, value: 1.0 }]);
        let stats = stats_with(0, 0.0, 1.0, cat.d());
        assert!(matches!(
            make_window(&st, &stats, &cat),
            Err(DataError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn fit_stats_population_convention() {
        let cat = default_catalog();
        let st = stay(vec![
            Obs { hour: 1.0, feature: 0, value: 4.0 },
            Obs { hour: 2.0, feature: 0, value: 6.0 },
            Obs { hour: 1.0, feature: 1, value: 3.0 },
        ]);
        let stats = fit_stats(&[st], cat.d());
        assert_eq!(stats.mean[0], 5.0);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);
        // constant feature floors at 1e-6
        assert_eq!(stats.mean[1], 3.0);
        assert_eq!(stats.std[1], STD_FLOOR);
        // unseen feature defaults
        assert_eq!(stats.mean[2], 0.0);
        assert_eq!(stats.std[2], STD_FLOOR);
    }

    #[test]
    fn make_window_is_pure() {
        let cat = default_catalog();
        let st = stay(vec![
            Obs { hour: 1.0, feature: 0, value: 4.0 },
            Obs { hour: 30.5, feature: 5, value: 2.2 },
        ]);
        let stats = fit_stats(&[st.clone()], cat.d());
        let a = make_window(&st, &stats, &cat).unwrap();
        let b = make_window(&st, &stats, &cat).unwrap();
        assert_eq!(a, b);
    }
}
