//! One ICU stay: sparse irregular observations plus the logged next-day
//! order vector and the decision anchor.

use super::catalog::{FeatureCatalog, K};
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    pub hour: f64,
    pub feature: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientStay {
    pub stay_id: String,
    /// Decision time; the context window is [anchor−48, anchor).
    pub anchor_hour: f64,
    /// Canonically sorted by (hour, feature).
    pub observations: Vec<Obs>,
    /// Logged next-day order, length K, entries 0/1.
    pub observed_order: Vec<u8>,
}

impl PatientStay {
    pub fn new(
        stay_id: String,
        anchor_hour: f64,
        mut observations: Vec<Obs>,
        observed_order: Vec<u8>,
        catalog: &FeatureCatalog,
    ) -> Result<Self, DataError> {
        if observed_order.len() != K {
            return Err(DataError::OrderLength { stay_id, got: observed_order.len() });
        }
        if observed_order.iter().any(|&b| b > 1) {
            return Err(DataError::Invalid {
                stay_id,
                what: "observed_order entries must be 0 or 1".into(),
            });
        }
        if !anchor_hour.is_finite() || anchor_hour < 0.0 {
            return Err(DataError::Invalid {
                stay_id,
                what: "anchor_hour must be finite and non-negative".into(),
            });
        }
        for o in &observations {
            if !o.hour.is_finite() || o.hour < 0.0 {
                return Err(DataError::Invalid {
                    stay_id,
                    what: "observation hours must be finite and non-negative".into(),
                });
            }
            if !o.value.is_finite() {
                return Err(DataError::Invalid {
                    stay_id,
                    what: "observation values must be finite".into(),
                });
            }
            if o.feature >= catalog.d() {
                return Err(DataError::Invalid {
                    stay_id,
                    what: format!("feature id {} out of range", o.feature),
                });
            }
        }
        // canonical sort: (hour, feature); hours validated finite above
        observations.sort_by(|a, b| {
            a.hour
                .partial_cmp(&b.hour)
                .unwrap()
                .then(a.feature.cmp(&b.feature))
        });
        Ok(PatientStay { stay_id, anchor_hour, observations, observed_order })
    }

    /// Observations with hour in [lo, hi).
    pub fn obs_in(&self, lo: f64, hi: f64) -> impl Iterator<Item = &Obs> {
        self.observations.iter().filter(move |o| o.hour >= lo && o.hour < hi)
    }
}
