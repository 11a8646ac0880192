//! Canonical data model: feature catalog, stays, context windows,
//! standardization statistics, splits, and the on-disk cohort format.

pub mod catalog;
pub mod io;
pub mod stay;
pub mod window;

pub use catalog::{default_catalog, test_index, FeatureCatalog, FeatureDef, FeatureKind, K, TEST_NAMES};
pub use io::{load_cohort, save_cohort, stay_to_json};
pub use stay::{Obs, PatientStay};
pub use window::{fit_stats, make_window, FeatureStats, StayWindow, POST_HOURS, PREV_HOURS, STD_FLOOR};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {0}: {1}")]
    Io(String, String),
    #[error("malformed line {line}: {why}")]
    Malformed { line: usize, why: String },
    #[error("unknown feature \"{name}\" at line {line}")]
    UnknownFeature { name: String, line: usize },
    #[error("observed_order has length {got}, expected {expected} (line {line})", expected = K)]
    OrderLengthAt { line: usize, got: usize },
    #[error("stay {stay_id}: observed_order has length {got}, expected {expected}", expected = K)]
    OrderLength { stay_id: String, got: usize },
    #[error("stay {stay_id}: {what}")]
    Invalid { stay_id: String, what: String },
    #[error("stay {stay_id} has no observation in the 48h context window")]
    EmptyWindow { stay_id: String },
    #[error("bad catalog: {0}")]
    BadCatalog(String),
    #[error("split ratios must sum to 1")]
    BadRatios,
    #[error("cannot split an empty collection")]
    EmptyCollection,
}

/// Seeded shuffle split. Val and test sizes are floored; the remainder
/// goes to train. The result is an exact partition of the input.
pub fn split(
    stays: Vec<PatientStay>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<PatientStay>, Vec<PatientStay>, Vec<PatientStay>), DataError> {
    let (r_train, r_val, r_test) = ratios;
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios);
    }
    if stays.is_empty() {
        return Err(DataError::EmptyCollection);
    }
    let n = stays.len();
    let n_val = (n as f64 * r_val).floor() as usize;
    let n_test = (n as f64 * r_test).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<PatientStay>> = stays.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<PatientStay>>, idx: &[usize]| {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect::<Vec<_>>()
    };
    let train = take(&mut slots, &order[..n_train]);
    let val = take(&mut slots, &order[n_train..n_train + n_val]);
    let test = take(&mut slots, &order[n_train + n_val..]);
    Ok((train, val, test))
}
