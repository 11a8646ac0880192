//! Golden suite for the shipped rule set: every rule has at least one
//! constructed stay that fires it and one that does not.

use laborder_core::data::{default_catalog, FeatureCatalog, Obs};
use laborder_core::rules::{default_ruleset, eval_rule, RawWindow, RuleSet};

struct Case {
    rule: &'static str,
    /// (hour, feature name, value)
    positive: Vec<(f64, &'static str, f64)>,
    negative: Vec<(f64, &'static str, f64)>,
}

fn obs(catalog: &FeatureCatalog, spec: &[(f64, &str, f64)]) -> Vec<Obs> {
    let mut v: Vec<Obs> = spec
        .iter()
        .map(|&(hour, name, value)| Obs {
            hour,
            feature: catalog.feature_id(name).unwrap_or_else(|| panic!("unknown {name}")),
            value,
        })
        .collect();
    v.sort_by(|a, b| a.hour.partial_cmp(&b.hour).unwrap().then(a.feature.cmp(&b.feature)));
    v
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            rule: "transfusion",
            positive: vec![(30.0, "Transfusions", 1.0)],
            negative: vec![(30.0, "Transfusions", 0.0), (31.0, "Dialysis", 1.0)],
        },
        Case {
            rule: "urine-low",
            // 24 hourly readings of 30 mL sum to 720 < 1000
            positive: (24..48).map(|h| (h as f64, "UrineOutput", 30.0)).collect(),
            negative: (24..48).map(|h| (h as f64, "UrineOutput", 80.0)).collect(),
        },
        Case {
            rule: "urine-high",
            positive: (24..48).map(|h| (h as f64, "UrineOutput", 180.0)).collect(),
            negative: (24..48).map(|h| (h as f64, "UrineOutput", 80.0)).collect(),
        },
        Case {
            rule: "vaso-up",
            // 0.10 → 0.14 inside the last 24h is a 40% rise
            positive: vec![(27.0, "Vasopressors", 0.10), (45.0, "Vasopressors", 0.14)],
            negative: vec![(27.0, "Vasopressors", 0.10), (45.0, "Vasopressors", 0.11)],
        },
        Case {
            rule: "vaso-new",
            positive: vec![(30.0, "Vasopressors", 0.10)],
            // already on pressors in the prior day → not new
            negative: vec![(10.0, "Vasopressors", 0.10), (30.0, "Vasopressors", 0.10)],
        },
        Case {
            rule: "dialysis",
            positive: vec![(12.0, "Dialysis", 1.0)],
            negative: vec![(12.0, "Antibiotics", 1.0)],
        },
        Case {
            rule: "new-fever",
            positive: vec![(40.0, "Fever", 1.0)],
            negative: vec![(10.0, "Fever", 1.0), (40.0, "Fever", 1.0)],
        },
        Case {
            rule: "minvent-up",
            positive: vec![(5.0, "MinuteVentilation", 6.0), (46.0, "MinuteVentilation", 8.0)],
            negative: vec![(5.0, "MinuteVentilation", 6.0), (46.0, "MinuteVentilation", 6.5)],
        },
        Case {
            rule: "minvent-down",
            positive: vec![(5.0, "MinuteVentilation", 8.0), (46.0, "MinuteVentilation", 5.5)],
            negative: vec![(5.0, "MinuteVentilation", 8.0), (46.0, "MinuteVentilation", 7.5)],
        },
        Case {
            rule: "airway-up",
            positive: vec![(5.0, "AirwayPressure", 16.0), (46.0, "AirwayPressure", 21.0)],
            negative: vec![(5.0, "AirwayPressure", 16.0), (46.0, "AirwayPressure", 17.0)],
        },
        Case {
            rule: "antibiotics",
            positive: vec![(20.0, "Antibiotics", 1.0)],
            negative: vec![(20.0, "Propofol", 1.0)],
        },
        Case {
            rule: "antiarrhythmics",
            positive: vec![(20.0, "Antiarrhythmics", 1.0)],
            negative: vec![(20.0, "Anticoagulants", 1.0)],
        },
        Case {
            rule: "anticoagulants",
            positive: vec![(20.0, "Anticoagulants", 1.0)],
            negative: vec![(20.0, "Antibiotics", 1.0)],
        },
        Case {
            rule: "propofol",
            positive: vec![(20.0, "Propofol", 1.0)],
            negative: vec![(20.0, "Antibiotics", 1.0)],
        },
        Case {
            rule: "icp-monitor",
            positive: vec![(20.0, "ICPMonitor", 1.0)],
            negative: vec![(20.0, "Dialysis", 1.0)],
        },
        Case {
            rule: "wbc-low",
            positive: vec![(40.0, "WBC", 0.7)],
            negative: vec![(40.0, "WBC", 5.0)],
        },
        Case {
            rule: "wbc-high",
            positive: vec![(40.0, "WBC", 14.0)],
            negative: vec![(40.0, "WBC", 11.0)],
        },
        Case {
            rule: "wbc-swing",
            positive: vec![(30.0, "WBC", 4.0), (44.0, "WBC", 10.0)],
            // same swing but outside the 24h window
            negative: vec![(10.0, "WBC", 4.0), (44.0, "WBC", 7.0)],
        },
        Case {
            rule: "creat-high",
            positive: vec![(40.0, "Creatinine", 180.0)],
            negative: vec![(40.0, "Creatinine", 120.0)],
        },
        Case {
            rule: "creat-rise",
            positive: vec![(6.0, "Creatinine", 90.0), (44.0, "Creatinine", 145.0)],
            negative: vec![(6.0, "Creatinine", 90.0), (44.0, "Creatinine", 120.0)],
        },
        Case {
            rule: "ck-high",
            positive: vec![(40.0, "CreatinineKinase", 6200.0)],
            negative: vec![(40.0, "CreatinineKinase", 1500.0)],
        },
        Case {
            rule: "peep-up",
            positive: vec![(6.0, "PEEP", 5.0), (44.0, "PEEP", 8.0)],
            negative: vec![(6.0, "PEEP", 5.0), (44.0, "PEEP", 6.0)],
        },
        Case {
            rule: "ph-low",
            positive: vec![(40.0, "pH", 7.25)],
            negative: vec![(40.0, "pH", 7.36)],
        },
        Case {
            rule: "hgb-low",
            positive: vec![(18.0, "Hemoglobin", 8.1), (46.0, "Hemoglobin", 6.5)],
            negative: vec![(18.0, "Hemoglobin", 8.1), (46.0, "Hemoglobin", 7.4)],
        },
        Case {
            rule: "hgb-drop",
            positive: vec![(26.0, "Hemoglobin", 10.0), (46.0, "Hemoglobin", 7.5)],
            // the big drop is outside the last 24 hours
            negative: vec![(10.0, "Hemoglobin", 10.0), (46.0, "Hemoglobin", 7.5)],
        },
        Case {
            rule: "plt-low",
            positive: vec![(40.0, "Platelets", 22.0)],
            negative: vec![(40.0, "Platelets", 120.0)],
        },
        Case {
            rule: "plt-high",
            positive: vec![(40.0, "Platelets", 700.0)],
            negative: vec![(40.0, "Platelets", 400.0)],
        },
        Case {
            rule: "plt-drop",
            positive: vec![(6.0, "Platelets", 300.0), (44.0, "Platelets", 190.0)],
            negative: vec![(6.0, "Platelets", 300.0), (44.0, "Platelets", 260.0)],
        },
        Case {
            rule: "k-replacement",
            positive: vec![(40.0, "KReplacement", 1.0)],
            // outside the 12h replacement window
            negative: vec![(20.0, "KReplacement", 1.0)],
        },
        Case {
            rule: "ca-replacement",
            positive: vec![(40.0, "CaReplacement", 1.0)],
            negative: vec![(20.0, "CaReplacement", 1.0)],
        },
        Case {
            rule: "p-replacement",
            positive: vec![(40.0, "PReplacement", 1.0)],
            negative: vec![(20.0, "PReplacement", 1.0)],
        },
        Case {
            rule: "mg-replacement",
            positive: vec![(40.0, "MgReplacement", 1.0)],
            negative: vec![(20.0, "MgReplacement", 1.0)],
        },
        Case {
            rule: "na-swing",
            positive: vec![(30.0, "Sodium", 136.0), (44.0, "Sodium", 143.0)],
            negative: vec![(30.0, "Sodium", 139.0), (44.0, "Sodium", 142.0)],
        },
        Case {
            rule: "na-high",
            positive: vec![(40.0, "Sodium", 152.0)],
            negative: vec![(40.0, "Sodium", 144.0)],
        },
        Case {
            rule: "na-low",
            positive: vec![(40.0, "Sodium", 131.0)],
            negative: vec![(40.0, "Sodium", 138.0)],
        },
        Case {
            rule: "k-high",
            positive: vec![(40.0, "Potassium", 5.4)],
            negative: vec![(40.0, "Potassium", 4.2)],
        },
        Case {
            rule: "k-low",
            positive: vec![(40.0, "Potassium", 3.1)],
            negative: vec![(40.0, "Potassium", 4.2)],
        },
        Case {
            rule: "k-elevated",
            positive: vec![(40.0, "Potassium", 4.8)],
            negative: vec![(40.0, "Potassium", 4.2)],
        },
        Case {
            rule: "ca-high",
            positive: vec![(40.0, "Calcium", 3.2)],
            negative: vec![(40.0, "Calcium", 2.4)],
        },
        Case {
            rule: "ca-low",
            positive: vec![(40.0, "Calcium", 1.8)],
            negative: vec![(40.0, "Calcium", 2.4)],
        },
        Case {
            rule: "phos-low",
            positive: vec![(40.0, "Phosphate", 0.5)],
            negative: vec![(40.0, "Phosphate", 1.1)],
        },
        Case {
            rule: "phos-high",
            positive: vec![(40.0, "Phosphate", 2.0)],
            negative: vec![(40.0, "Phosphate", 1.1)],
        },
        Case {
            rule: "mg-low",
            positive: vec![(40.0, "Magnesium", 0.7)],
            negative: vec![(40.0, "Magnesium", 0.95)],
        },
        Case {
            rule: "inr-high",
            positive: vec![(40.0, "INR", 1.9)],
            negative: vec![(40.0, "INR", 1.2)],
        },
        Case {
            rule: "alt-high",
            positive: vec![(40.0, "ALT", 140.0)],
            negative: vec![(40.0, "ALT", 60.0)],
        },
        Case {
            rule: "bili-high",
            positive: vec![(40.0, "Bilirubin", 62.0)],
            negative: vec![(40.0, "Bilirubin", 20.0)],
        },
        Case {
            rule: "hepatotoxic",
            positive: vec![(20.0, "HepatotoxicDrugs", 1.0)],
            negative: vec![(20.0, "Antibiotics", 1.0)],
        },
        Case {
            rule: "arrhythmia",
            positive: vec![(20.0, "Antiarrhythmics", 1.0)],
            negative: vec![(20.0, "Anticoagulants", 1.0)],
        },
        Case {
            rule: "diuretics",
            positive: vec![(20.0, "Diuretics", 1.0)],
            negative: vec![(20.0, "Antibiotics", 1.0)],
        },
    ]
}

fn check(catalog: &FeatureCatalog, ruleset: &RuleSet, case: &Case) {
    let rule = ruleset
        .get(case.rule)
        .unwrap_or_else(|| panic!("rule {} missing from the shipped set", case.rule));
    let pos = obs(catalog, &case.positive);
    let w = RawWindow { anchor_hour: 48.0, obs: &pos, horizon: 0.0 };
    let (fired, values) = eval_rule(rule, &w);
    assert!(fired, "rule {} should fire on its positive stay ({values:?})", case.rule);
    let neg = obs(catalog, &case.negative);
    let w = RawWindow { anchor_hour: 48.0, obs: &neg, horizon: 0.0 };
    let (fired, values) = eval_rule(rule, &w);
    assert!(!fired, "rule {} must not fire on its negative stay ({values:?})", case.rule);
}

#[test]
fn every_shipped_rule_has_positive_and_negative_golden_cases() {
    let catalog = default_catalog();
    let ruleset = default_ruleset(&catalog);
    let cases = cases();
    // complete coverage of the shipped file
    for rule in &ruleset.rules {
        assert!(
            cases.iter().any(|c| c.rule == rule.name),
            "no golden case for shipped rule {}",
            rule.name
        );
    }
    assert_eq!(cases.len(), ruleset.len(), "one case per rule");
    for case in &cases {
        check(&catalog, &ruleset, case);
    }
    // empty stay fires nothing
    let w = RawWindow { anchor_hour: 48.0, obs: &[], horizon: 0.0 };
    for rule in &ruleset.rules {
        assert!(!eval_rule(rule, &w).0, "rule {} fired on an empty stay", rule.name);
    }
}
