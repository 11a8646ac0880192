//! Cohort file format: JSONL, one stay per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::{FeatureCatalog, K};
use super::stay::{Obs, PatientStay};
use super::DataError;

#[derive(Serialize, Deserialize)]
struct StayRecord {
    stay_id: String,
    anchor_hour: f64,
    observations: Vec<(f64, String, f64)>,
    observed_order: Vec<u8>,
}

/// Load a JSONL cohort, validating every line against the catalog.
/// Stays come back in file order.
pub fn load_cohort(path: &Path, catalog: &FeatureCatalog) -> Result<Vec<PatientStay>, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    let reader = BufReader::new(file);
    let mut stays = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StayRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Malformed { line: line_no, why: e.to_string() })?;
        if rec.observed_order.len() != K {
            return Err(DataError::OrderLengthAt { line: line_no, got: rec.observed_order.len() });
        }
        let mut obs = Vec::with_capacity(rec.observations.len());
        for (hour, name, value) in rec.observations {
            let feature = catalog.feature_id(&name).ok_or(DataError::UnknownFeature {
                name: name.clone(),
                line: line_no,
            })?;
            obs.push(Obs { hour, feature, value });
        }
        let stay = PatientStay::new(rec.stay_id, rec.anchor_hour, obs, rec.observed_order, catalog)
            .map_err(|e| DataError::Malformed { line: line_no, why: e.to_string() })?;
        stays.push(stay);
    }
    Ok(stays)
}

pub fn stay_to_json(stay: &PatientStay, catalog: &FeatureCatalog) -> String {
    let rec = StayRecord {
        stay_id: stay.stay_id.clone(),
        anchor_hour: stay.anchor_hour,
        observations: stay
            .observations
            .iter()
            .map(|o| (o.hour, catalog.feature(o.feature).name.clone(), o.value))
            .collect(),
        observed_order: stay.observed_order.clone(),
    };
    serde_json::to_string(&rec).expect("stay serialization")
}

pub fn save_cohort(
    path: &Path,
    stays: &[PatientStay],
    catalog: &FeatureCatalog,
) -> Result<(), DataError> {
    let file = std::fs::File::create(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    for stay in stays {
        writeln!(w, "{}", stay_to_json(stay, catalog))
            .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
}
