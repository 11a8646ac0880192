//! Feature catalog: the K orderable tests in fixed order and the feature
//! table (labs with their panel test, vitals, treatments).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Number of orderable tests.
pub const K: usize = 10;

/// Orderable tests, fixed order.
pub const TEST_NAMES: [&str; K] = [
    "CBC",
    "Electrolytes",
    "CalciumProfile",
    "INR",
    "LiverProfile",
    "Lactate",
    "ABG",
    "Creatinine",
    "Troponin",
    "CK",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Lab,
    Vital,
    Treatment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub id: usize,
    pub name: String,
    pub kind: FeatureKind,
    /// Index into [`TEST_NAMES`] for lab features; None otherwise.
    pub panel: Option<usize>,
    pub unit: String,
}

#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    features: Vec<FeatureDef>,
    by_name: BTreeMap<String, usize>,
    /// Per test, the ids of its constituent lab features.
    panels: Vec<Vec<usize>>,
}

impl FeatureCatalog {
    pub fn new(defs: Vec<(&str, FeatureKind, Option<&str>, &str)>) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(defs.len());
        let mut by_name = BTreeMap::new();
        let mut panels = vec![Vec::new(); K];
        for (id, (name, kind, panel, unit)) in defs.into_iter().enumerate() {
            if by_name.insert(name.to_string(), id).is_some() {
                return Err(DataError::BadCatalog(format!("duplicate feature name {name}")));
            }
            let panel_idx = match (kind, panel) {
                (FeatureKind::Lab, Some(test)) => {
                    let t = test_index(test)
                        .ok_or_else(|| DataError::BadCatalog(format!("unknown panel test {test}")))?;
                    panels[t].push(id);
                    Some(t)
                }
                (FeatureKind::Lab, None) => {
                    return Err(DataError::BadCatalog(format!("lab feature {name} lacks a panel")))
                }
                (_, Some(_)) => {
                    return Err(DataError::BadCatalog(format!(
                        "non-lab feature {name} cannot carry a panel"
                    )))
                }
                (_, None) => None,
            };
            features.push(FeatureDef {
                id,
                name: name.to_string(),
                kind,
                panel: panel_idx,
                unit: unit.to_string(),
            });
        }
        if panels.iter().any(|p| p.is_empty()) {
            return Err(DataError::BadCatalog("every test needs at least one lab feature".into()));
        }
        Ok(FeatureCatalog { features, by_name, panels })
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, id: usize) -> &FeatureDef {
        &self.features[id]
    }

    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn feature_id(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Lab feature ids belonging to test `t`.
    pub fn panel(&self, t: usize) -> &[usize] {
        &self.panels[t]
    }
}

pub fn test_index(name: &str) -> Option<usize> {
    TEST_NAMES.iter().position(|&t| t == name)
}

/// The default catalog: 21 panel-linked labs, 6 vitals, 14 treatments.
pub fn default_catalog() -> FeatureCatalog {
    use FeatureKind::*;
    FeatureCatalog::new(vec![
        ("Hemoglobin", Lab, Some("CBC"), "g/dL"),
        ("WBC", Lab, Some("CBC"), "1e9/L"),
        ("Platelets", Lab, Some("CBC"), "1e9/L"),
        ("Sodium", Lab, Some("Electrolytes"), "mmol/L"),
        ("Potassium", Lab, Some("Electrolytes"), "mmol/L"),
        ("Calcium", Lab, Some("CalciumProfile"), "mmol/L"),
        ("Phosphate", Lab, Some("CalciumProfile"), "mmol/L"),
        ("Magnesium", Lab, Some("CalciumProfile"), "mmol/L"),
        ("INR", Lab, Some("INR"), "ratio"),
        ("ALP", Lab, Some("LiverProfile"), "U/L"),
        ("Bilirubin", Lab, Some("LiverProfile"), "umol/L"),
        ("ALT", Lab, Some("LiverProfile"), "U/L"),
        ("Lactate", Lab, Some("Lactate"), "mmol/L"),
        ("PaCO2", Lab, Some("ABG"), "mmHg"),
        ("PaO2", Lab, Some("ABG"), "mmHg"),
        ("pH", Lab, Some("ABG"), "pH"),
        ("Bicarbonate", Lab, Some("ABG"), "mmol/L"),
        ("Creatinine", Lab, Some("Creatinine"), "umol/L"),
        ("BloodUreaNitrogen", Lab, Some("Creatinine"), "mmol/L"),
        ("Troponin", Lab, Some("Troponin"), "ng/L"),
        ("CreatinineKinase", Lab, Some("CK"), "U/L"),
        ("Temperature", Vital, None, "C"),
        ("Fever", Vital, None, "flag"),
        ("UrineOutput", Vital, None, "mL"),
        ("MinuteVentilation", Vital, None, "L/min"),
        ("AirwayPressure", Vital, None, "cmH2O"),
        ("PEEP", Vital, None, "cmH2O"),
        ("Transfusions", Treatment, None, "units"),
        ("Vasopressors", Treatment, None, "ug/kg/min"),
        ("Dialysis", Treatment, None, "flag"),
        ("Antibiotics", Treatment, None, "flag"),
        ("Antiarrhythmics", Treatment, None, "flag"),
        ("Anticoagulants", Treatment, None, "flag"),
        ("Propofol", Treatment, None, "flag"),
        ("ICPMonitor", Treatment, None, "flag"),
        ("KReplacement", Treatment, None, "flag"),
        ("CaReplacement", Treatment, None, "flag"),
        ("PReplacement", Treatment, None, "flag"),
        ("MgReplacement", Treatment, None, "flag"),
        ("HepatotoxicDrugs", Treatment, None, "flag"),
        ("Diuretics", Treatment, None, "flag"),
    ])
    .expect("default catalog is well-formed")
}

// On-disk representation.
#[derive(Serialize, Deserialize)]
struct CatalogFile {
    tests: Vec<String>,
    features: Vec<CatalogFeature>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFeature {
    name: String,
    kind: FeatureKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    panel: Option<String>,
    unit: String,
}

impl FeatureCatalog {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let file = CatalogFile {
            tests: TEST_NAMES.iter().map(|s| s.to_string()).collect(),
            features: self
                .features
                .iter()
                .map(|f| CatalogFeature {
                    name: f.name.clone(),
                    kind: f.kind,
                    panel: f.panel.map(|t| TEST_NAMES[t].to_string()),
                    unit: f.unit.clone(),
                })
                .collect(),
        };
        let body = serde_json::to_string_pretty(&file).expect("catalog serialization");
        std::fs::write(path, body + "\n")
            .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
        let file: CatalogFile =
            serde_json::from_str(&body).map_err(|e| DataError::BadCatalog(e.to_string()))?;
        if file.tests.len() != K || file.tests.iter().zip(TEST_NAMES).any(|(a, b)| a != b) {
            return Err(DataError::BadCatalog(
                "catalog test list must match the fixed test order".into(),
            ));
        }
        let defs: Vec<(&str, FeatureKind, Option<&str>, &str)> = file
            .features
            .iter()
            .map(|f| (f.name.as_str(), f.kind, f.panel.as_deref(), f.unit.as_str()))
            .collect();
        FeatureCatalog::new(defs)
    }
}
