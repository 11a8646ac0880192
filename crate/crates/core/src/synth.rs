//! Synthetic ICU cohort generator.
//!
//! A latent per-stay severity path (AR(1) plus a per-stay offset) drives lab
//! values, vitals, and treatment events. The logged order vector is built
//! from the rule-generated minimal order: each required test is dropped with
//! probability `miss_r` and each remaining test is added with probability
//! `over_order_q`, reproducing a conservative-guideline / over-ordering
//! logging policy.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureCatalog, FeatureKind, Obs, PatientStay, K};
use crate::rules::{compute_bounds, OrderBounds, RawWindow, RuleSet};

pub const STAY_HOURS: f64 = 72.0;
pub const ANCHOR_HOUR: f64 = 48.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_stays: usize,
    /// Severity AR(1) coefficient.
    pub rho: f64,
    /// Severity AR(1) innovation standard deviation.
    pub sigma_s: f64,
    /// Per-stay severity offset standard deviation.
    pub stay_offset_sd: f64,
    /// Expected observations per 24h per lab feature (scales the per-feature rates).
    pub lab_rate: f64,
    /// Multiplier on vital sampling rates.
    pub vital_rate: f64,
    /// Multiplier on treatment trigger probabilities.
    pub treatment_scale: f64,
    /// Multiplier on per-feature severity loadings.
    pub severity_loading_scale: f64,
    /// Probability a non-required test is added to the logged order.
    pub over_order_q: f64,
    /// Probability a required test is missing from the logged order.
    pub miss_r: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_stays: 5000,
            rho: 0.92,
            sigma_s: 0.392,
            stay_offset_sd: 0.6,
            lab_rate: 1.2,
            vital_rate: 1.0,
            treatment_scale: 1.0,
            severity_loading_scale: 1.0,
            over_order_q: 0.65,
            miss_r: 0.10,
            seed: 17,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_stays == 0 {
            return Err(SynthError::BadConfig("n_stays must be at least 1".into()));
        }
        if !unit(self.over_order_q) || !unit(self.miss_r) {
            return Err(SynthError::BadConfig("q and r must lie in [0, 1]".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(SynthError::BadConfig("rho must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("sigma_s", self.sigma_s),
            ("lab_rate", self.lab_rate),
            ("vital_rate", self.vital_rate),
            ("treatment_scale", self.treatment_scale),
            ("stay_offset_sd", self.stay_offset_sd),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SynthError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("undefined {0}: zero denominator")]
    UndefinedRatio(&'static str),
    #[error("{0}")]
    Data(#[from] crate::data::DataError),
}

/// Cohort-level calibration of the logging policy against the rules.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationStats {
    /// Σ t_min bits / Σ t* bits.
    pub guideline_to_observed_ratio: f64,
    /// Fraction of required tests absent from the logged order.
    pub miss_rate: f64,
    pub rule_fire_counts: BTreeMap<String, u64>,
}

struct LabProfile {
    name: &'static str,
    base: f64,
    load: f64,
    noise: f64,
    rate_mult: f64,
}

// Baselines sit so that each threshold rule has natural positive examples
// under the default severity spread.
const LAB_PROFILES: [LabProfile; 21] = [
    LabProfile { name: "Hemoglobin", base: 10.5, load: -1.25, noise: 0.70, rate_mult: 1.0 },
    LabProfile { name: "WBC", base: 8.4, load: 1.9, noise: 1.2, rate_mult: 1.0 },
    LabProfile { name: "Platelets", base: 230.0, load: -40.0, noise: 20.0, rate_mult: 0.9 },
    LabProfile { name: "Sodium", base: 140.5, load: 2.8, noise: 1.8, rate_mult: 1.2 },
    LabProfile { name: "Potassium", base: 3.95, load: 0.28, noise: 0.25, rate_mult: 1.2 },
    LabProfile { name: "Calcium", base: 2.32, load: -0.17, noise: 0.10, rate_mult: 0.9 },
    LabProfile { name: "Phosphate", base: 1.10, load: 0.24, noise: 0.15, rate_mult: 0.9 },
    LabProfile { name: "Magnesium", base: 0.97, load: -0.06, noise: 0.08, rate_mult: 0.9 },
    LabProfile { name: "INR", base: 1.22, load: 0.18, noise: 0.13, rate_mult: 0.9 },
    LabProfile { name: "ALP", base: 95.0, load: 19.0, noise: 24.0, rate_mult: 0.7 },
    LabProfile { name: "Bilirubin", base: 14.0, load: 13.0, noise: 8.0, rate_mult: 0.7 },
    LabProfile { name: "ALT", base: 46.0, load: 24.0, noise: 16.0, rate_mult: 0.7 },
    LabProfile { name: "Lactate", base: 1.6, load: 0.85, noise: 0.45, rate_mult: 1.1 },
    LabProfile { name: "PaCO2", base: 41.0, load: 4.2, noise: 3.6, rate_mult: 1.1 },
    LabProfile { name: "PaO2", base: 95.0, load: -13.0, noise: 11.0, rate_mult: 1.1 },
    LabProfile { name: "pH", base: 7.385, load: -0.040, noise: 0.025, rate_mult: 1.1 },
    LabProfile { name: "Bicarbonate", base: 24.0, load: -2.5, noise: 1.9, rate_mult: 1.1 },
    LabProfile { name: "Creatinine", base: 92.0, load: 24.0, noise: 11.0, rate_mult: 1.0 },
    LabProfile { name: "BloodUreaNitrogen", base: 8.5, load: 3.2, noise: 2.1, rate_mult: 1.0 },
    LabProfile { name: "Troponin", base: 18.0, load: 15.0, noise: 12.0, rate_mult: 0.6 },
    LabProfile { name: "CreatinineKinase", base: 900.0, load: 1350.0, noise: 750.0, rate_mult: 0.6 },
];

struct TreatProfile {
    name: &'static str,
    p0: f64,
    p1: f64,
}

// Daily Bernoulli treatments; probability rises with the day's mean severity.
const DAILY_TREATMENTS: [TreatProfile; 12] = [
    TreatProfile { name: "Transfusions", p0: 0.010, p1: 0.050 },
    TreatProfile { name: "Dialysis", p0: 0.010, p1: 0.050 },
    TreatProfile { name: "Antibiotics", p0: 0.025, p1: 0.045 },
    TreatProfile { name: "Antiarrhythmics", p0: 0.012, p1: 0.040 },
    TreatProfile { name: "Anticoagulants", p0: 0.025, p1: 0.042 },
    TreatProfile { name: "Propofol", p0: 0.025, p1: 0.050 },
    TreatProfile { name: "KReplacement", p0: 0.020, p1: 0.045 },
    TreatProfile { name: "CaReplacement", p0: 0.018, p1: 0.042 },
    TreatProfile { name: "PReplacement", p0: 0.018, p1: 0.042 },
    TreatProfile { name: "MgReplacement", p0: 0.020, p1: 0.045 },
    TreatProfile { name: "HepatotoxicDrugs", p0: 0.020, p1: 0.040 },
    TreatProfile { name: "Diuretics", p0: 0.025, p1: 0.042 },
];

fn logistic(x: f64) -> f64 {
    crate::numeric::sigmoid(x)
}

/// Independent RNG stream per (seed, stay, lane) so conditional draws in one
/// lane never shift another; generation is order-independent across stays.
fn lane_rng(seed: u64, stay: u64, lane: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&stay.to_le_bytes());
    bytes[16..24].copy_from_slice(&lane.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn severity_path(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let offset = n.sample(rng) * cfg.stay_offset_sd;
    let stationary_sd = cfg.sigma_s / (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut x = n.sample(rng) * stationary_sd;
    let hours = STAY_HOURS as usize;
    let mut s = Vec::with_capacity(hours);
    for _ in 0..hours {
        s.push(offset + x);
        x = cfg.rho * x + cfg.sigma_s * n.sample(rng);
    }
    s
}

fn gen_labs(
    cfg: &GenConfig,
    catalog: &FeatureCatalog,
    s: &[f64],
    rng: &mut ChaCha8Rng,
    obs: &mut Vec<Obs>,
) {
    let n: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    // rare hematology phenotypes so the extreme platelet rules have
    // natural positive examples
    let u = rng.gen::<f64>();
    let platelet_scale = if u < 0.02 {
        0.12
    } else if u > 0.985 {
        2.8
    } else {
        1.0
    };
    for p in &LAB_PROFILES {
        let f = catalog.feature_id(p.name).expect("profile names match catalog");
        let hourly = (cfg.lab_rate * p.rate_mult / 24.0).min(1.0);
        let scale = if p.name == "Platelets" { platelet_scale } else { 1.0 };
        for (h, &sev) in s.iter().enumerate() {
            if rng.gen::<f64>() < hourly {
                let hour = h as f64 + rng.gen::<f64>();
                let value = scale
                    * (p.base + p.load * cfg.severity_loading_scale * sev
                        + p.noise * n.sample(rng));
                obs.push(Obs { hour, feature: f, value });
            }
        }
    }
}

fn gen_vitals(
    cfg: &GenConfig,
    catalog: &FeatureCatalog,
    s: &[f64],
    rng: &mut ChaCha8Rng,
    obs: &mut Vec<Obs>,
) {
    let n: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let id = |name: &str| catalog.feature_id(name).expect("vital in catalog");
    let (temp, fever) = (id("Temperature"), id("Fever"));
    let (urine, minvent) = (id("UrineOutput"), id("MinuteVentilation"));
    let (airway, peep) = (id("AirwayPressure"), id("PEEP"));
    // per-stay urine output scale; the right tail produces polyuria
    let urine_scale = (n.sample(rng) * 0.35).exp();
    let ls = cfg.severity_loading_scale;
    for (h, &sev) in s.iter().enumerate() {
        if rng.gen::<f64>() < (8.0 * cfg.vital_rate / 24.0).min(1.0) {
            let hour = h as f64 + rng.gen::<f64>();
            let t = 37.0 + 0.40 * ls * sev + 0.28 * n.sample(rng);
            obs.push(Obs { hour, feature: temp, value: t });
            if t > 38.3 {
                obs.push(Obs { hour, feature: fever, value: 1.0 });
            }
        }
        if rng.gen::<f64>() < (20.0 * cfg.vital_rate / 24.0).min(1.0) {
            let v = (90.0 * urine_scale - 12.0 * ls * sev + 12.0 * n.sample(rng)).max(0.0);
            let hour = h as f64 + rng.gen::<f64>();
            obs.push(Obs { hour, feature: urine, value: v });
        }
        // ventilator numbers track severity with little measurement noise
        if rng.gen::<f64>() < (4.0 * cfg.vital_rate / 24.0).min(1.0) {
            let v = (7.5 + 0.50 * ls * sev + 0.30 * n.sample(rng)).max(2.0);
            let hour = h as f64 + rng.gen::<f64>();
            obs.push(Obs { hour, feature: minvent, value: v });
        }
        if rng.gen::<f64>() < (4.0 * cfg.vital_rate / 24.0).min(1.0) {
            let v = (17.0 + 1.05 * ls * sev + 0.8 * n.sample(rng)).max(5.0);
            let hour = h as f64 + rng.gen::<f64>();
            obs.push(Obs { hour, feature: airway, value: v });
        }
        if rng.gen::<f64>() < (4.0 * cfg.vital_rate / 24.0).min(1.0) {
            let v = (6.0 + 0.75 * ls * sev + 0.15 * n.sample(rng)).max(3.0);
            let hour = h as f64 + rng.gen::<f64>();
            obs.push(Obs { hour, feature: peep, value: v });
        }
    }
}

fn gen_treatments(
    cfg: &GenConfig,
    catalog: &FeatureCatalog,
    s: &[f64],
    offset: f64,
    rng: &mut ChaCha8Rng,
    obs: &mut Vec<Obs>,
) {
    let n: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let days = (STAY_HOURS as usize) / 24;
    for day in 0..days {
        let day_sev: f64 = s[day * 24..(day + 1) * 24].iter().sum::<f64>() / 24.0;
        for t in &DAILY_TREATMENTS {
            let f = catalog.feature_id(t.name).expect("treatment in catalog");
            let p = (cfg.treatment_scale * (t.p0 + t.p1 * logistic(1.2 * day_sev)))
                .clamp(0.0, 0.95);
            if rng.gen::<f64>() < p {
                let count = 1 + rng.gen_range(0..2usize);
                for _ in 0..count {
                    let hour = day as f64 * 24.0 + rng.gen::<f64>() * 24.0;
                    obs.push(Obs { hour, feature: f, value: 1.0 });
                }
            }
        }
        // ICP monitoring persists across the stay; decided on day 0
        if day == 0 {
            let icp = catalog.feature_id("ICPMonitor").expect("in catalog");
            if rng.gen::<f64>() < (cfg.treatment_scale * 0.015).clamp(0.0, 0.95) {
                for d in 0..days {
                    let hour = d as f64 * 24.0 + rng.gen::<f64>() * 24.0;
                    obs.push(Obs { hour, feature: icp, value: 1.0 });
                }
            }
        }
    }
    // vasopressors: severity-gated onset with a dose random walk
    let vaso = catalog.feature_id("Vasopressors").expect("in catalog");
    if rng.gen::<f64>() < logistic(1.1 * (offset - 1.35)) {
        let start = rng.gen::<f64>() * 60.0;
        let mut dose = 0.08 * (n.sample(rng) * 0.4).exp();
        let mut hour = start;
        while hour < STAY_HOURS {
            obs.push(Obs { hour, feature: vaso, value: dose });
            dose *= (0.10 * n.sample(rng)).exp();
            hour += 3.0;
        }
    }
}

fn gen_stay(
    cfg: &GenConfig,
    catalog: &FeatureCatalog,
    ruleset: &RuleSet,
    index: usize,
) -> PatientStay {
    let mut rng_sev = lane_rng(cfg.seed, index as u64, 0);
    let mut rng_lab = lane_rng(cfg.seed, index as u64, 1);
    let mut rng_vit = lane_rng(cfg.seed, index as u64, 2);
    let mut rng_trt = lane_rng(cfg.seed, index as u64, 3);
    let mut rng_pol = lane_rng(cfg.seed, index as u64, 4);

    let n: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let s = severity_path(cfg, &mut rng_sev);
    let offset = s.iter().sum::<f64>() / s.len() as f64;

    let mut obs = Vec::new();
    gen_labs(cfg, catalog, &s, &mut rng_lab, &mut obs);
    gen_vitals(cfg, catalog, &s, &mut rng_vit, &mut obs);
    gen_treatments(cfg, catalog, &s, offset, &mut rng_trt, &mut obs);

    // the context window must never be empty of labs
    if !obs
        .iter()
        .any(|o| o.hour < ANCHOR_HOUR && catalog.feature(o.feature).kind == FeatureKind::Lab)
    {
        let p = &LAB_PROFILES[0];
        let f = catalog.feature_id(p.name).expect("in catalog");
        let hour = rng_lab.gen::<f64>() * ANCHOR_HOUR;
        let h = hour as usize;
        let value =
            p.base + p.load * cfg.severity_loading_scale * s[h] + p.noise * n.sample(&mut rng_lab);
        obs.push(Obs { hour, feature: f, value });
    }

    obs.sort_by(|a, b| a.hour.partial_cmp(&b.hour).unwrap().then(a.feature.cmp(&b.feature)));
    let prev: Vec<Obs> = obs.iter().filter(|o| o.hour < ANCHOR_HOUR).copied().collect();
    let window = RawWindow { anchor_hour: ANCHOR_HOUR, obs: &prev, horizon: 0.0 };
    let bounds = compute_bounds(ruleset, &window, &vec![0; K], "tmp");

    // logging policy: required bits dropped w.p. r, others added w.p. q.
    // Both uniforms are always drawn so the stream is identical across q/r.
    let mut observed_order = vec![0u8; K];
    for j in 0..K {
        let u_drop = rng_pol.gen::<f64>();
        let u_add = rng_pol.gen::<f64>();
        observed_order[j] = if bounds.t_min[j] == 1 {
            u8::from(u_drop >= cfg.miss_r)
        } else {
            u8::from(u_add < cfg.over_order_q)
        };
    }

    PatientStay::new(format!("s{index:05}"), ANCHOR_HOUR, obs, observed_order, catalog)
        .expect("generated stay is valid")
}

/// Generate a cohort. Deterministic given the config seed; stays are
/// independent and derive their randomness from (seed, index).
pub fn generate(
    cfg: &GenConfig,
    catalog: &FeatureCatalog,
    ruleset: &RuleSet,
) -> Result<Vec<PatientStay>, SynthError> {
    cfg.validate()?;
    Ok((0..cfg.n_stays).map(|i| gen_stay(cfg, catalog, ruleset, i)).collect())
}

/// Ratio and miss-rate of the rule-generated orders against the logged ones.
pub fn calibration_report(
    stays: &[PatientStay],
    bounds: &[OrderBounds],
) -> Result<CalibrationStats, SynthError> {
    assert_eq!(stays.len(), bounds.len(), "bounds must align with stays");
    let mut min_bits = 0u64;
    let mut star_bits = 0u64;
    let mut missed = 0u64;
    let mut rule_fire_counts: BTreeMap<String, u64> = BTreeMap::new();
    for (stay, b) in stays.iter().zip(bounds) {
        for j in 0..K {
            min_bits += u64::from(b.t_min[j]);
            star_bits += u64::from(stay.observed_order[j]);
            if b.t_min[j] == 1 && stay.observed_order[j] == 0 {
                missed += 1;
            }
        }
        for r in &b.fired_rules {
            *rule_fire_counts.entry(r.clone()).or_default() += 1;
        }
    }
    if star_bits == 0 {
        return Err(SynthError::UndefinedRatio("guideline-to-observed ratio"));
    }
    if min_bits == 0 {
        return Err(SynthError::UndefinedRatio("miss rate"));
    }
    Ok(CalibrationStats {
        guideline_to_observed_ratio: min_bits as f64 / star_bits as f64,
        miss_rate: missed as f64 / min_bits as f64,
        rule_fire_counts,
    })
}

/// Recompute order bounds for a cohort with the stay's own logged order.
pub fn bounds_for(stays: &[PatientStay], ruleset: &RuleSet) -> Vec<OrderBounds> {
    stays
        .iter()
        .map(|stay| {
            let prev: Vec<Obs> =
                stay.obs_in(stay.anchor_hour - 48.0, stay.anchor_hour).copied().collect();
            let w = RawWindow { anchor_hour: stay.anchor_hour, obs: &prev, horizon: 0.0 };
            compute_bounds(ruleset, &w, &stay.observed_order, &stay.stay_id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_catalog;
    use crate::rules::default_ruleset;

    fn small_cfg(n: usize, q: f64, r: f64, seed: u64) -> GenConfig {
        GenConfig { n_stays: n, over_order_q: q, miss_r: r, seed, ..GenConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        let cfg = small_cfg(100, 0.65, 0.1, 1);
        let a = generate(&cfg, &cat, &rs).unwrap();
        let b = generate(&cfg, &cat, &rs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_logging_policies() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        // q=0, r=0: logged order equals the rule-generated minimum
        let stays = generate(&small_cfg(60, 0.0, 0.0, 3), &cat, &rs).unwrap();
        let bounds = bounds_for(&stays, &rs);
        for (s, b) in stays.iter().zip(&bounds) {
            assert_eq!(s.observed_order, b.t_min);
            assert_eq!(b.t_max, b.t_min);
        }
        // q=1, r=0: everything is ordered
        let stays = generate(&small_cfg(60, 1.0, 0.0, 3), &cat, &rs).unwrap();
        for s in &stays {
            assert_eq!(s.observed_order, vec![1u8; K]);
        }
    }

    #[test]
    fn r_zero_implies_t_star_covers_t_min() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        let stays = generate(&small_cfg(80, 0.4, 0.0, 5), &cat, &rs).unwrap();
        let bounds = bounds_for(&stays, &rs);
        for (s, b) in stays.iter().zip(&bounds) {
            for j in 0..K {
                assert!(s.observed_order[j] >= b.t_min[j]);
            }
        }
    }

    #[test]
    fn increasing_q_increases_orders() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        for seed in [11u64, 12, 13] {
            let mut totals = Vec::new();
            for q in [0.2, 0.5, 0.8] {
                let stays = generate(&small_cfg(120, q, 0.1, seed), &cat, &rs).unwrap();
                let total: u64 = stays
                    .iter()
                    .map(|s| s.observed_order.iter().map(|&b| u64::from(b)).sum::<u64>())
                    .sum();
                totals.push(total);
            }
            assert!(totals[0] < totals[1] && totals[1] < totals[2], "totals {totals:?}");
        }
    }

    #[test]
    fn every_stay_has_prev_lab_observation() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        let stays = generate(&small_cfg(200, 0.65, 0.1, 7), &cat, &rs).unwrap();
        for s in &stays {
            assert!(s
                .obs_in(0.0, ANCHOR_HOUR)
                .any(|o| cat.feature(o.feature).kind == FeatureKind::Lab));
        }
    }

    #[test]
    fn calibration_arithmetic() {
        let cat = default_catalog();
        let mut stays = Vec::new();
        let mut bounds = Vec::new();
        // every stay: 3 required bits all kept, 10 logged bits, no misses
        for i in 0..4 {
            let t_star = vec![1u8; K];
            let mut t_min = vec![0u8; K];
            t_min[0] = 1;
            t_min[1] = 1;
            t_min[2] = 1;
            stays.push(
                PatientStay::new(
                    format!("c{i}"),
                    48.0,
                    vec![Obs { hour: 1.0, feature: 0, value: 1.0 }],
                    t_star.clone(),
                    &cat,
                )
                .unwrap(),
            );
            bounds.push(OrderBounds {
                stay_id: format!("c{i}"),
                t_max: t_star,
                t_min,
                fired_rules: vec!["x".into()],
            });
        }
        let c = calibration_report(&stays, &bounds).unwrap();
        assert!((c.guideline_to_observed_ratio - 0.3).abs() < 1e-12);
        assert_eq!(c.miss_rate, 0.0);
        assert_eq!(c.rule_fire_counts["x"], 4);
    }

    #[test]
    fn zero_denominator_is_an_error() {
        let cat = default_catalog();
        let stay = PatientStay::new(
            "z".into(),
            48.0,
            vec![Obs { hour: 1.0, feature: 0, value: 1.0 }],
            vec![0; K],
            &cat,
        )
        .unwrap();
        let b = OrderBounds {
            stay_id: "z".into(),
            t_min: vec![0; K],
            t_max: vec![0; K],
            fired_rules: vec![],
        };
        assert!(calibration_report(&[stay], &[b]).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cat = default_catalog();
        let rs = default_ruleset(&cat);
        let cfg = GenConfig { over_order_q: 1.5, ..GenConfig::default() };
        assert!(generate(&cfg, &cat, &rs).is_err());
        let cfg = GenConfig { n_stays: 0, ..GenConfig::default() };
        assert!(generate(&cfg, &cat, &rs).is_err());
    }
}
