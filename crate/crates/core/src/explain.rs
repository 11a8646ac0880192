//! Machine-readable explanations for one stay's recommended order: fired
//! rules with their triggering clause values, and per-ordered-test panel
//! summaries comparing the observed history to the forecasted next day.

use serde::Serialize;

use crate::data::{FeatureCatalog, FeatureStats, PatientStay, StayWindow, K, TEST_NAMES};
use crate::forecast::ForecastModel;
use crate::numeric::Tensor;
use crate::policy::{binarize, PolicyError, PolicyModel};
use crate::rules::{eval_rule, ClauseValue, RawWindow, RuleSet};

#[derive(Debug, Clone, Serialize)]
pub struct ClauseReport {
    pub metric: String,
    pub feature: String,
    pub window_hours: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub value: ClauseValue,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiredRule {
    pub name: String,
    pub ordered_tests: Vec<String>,
    pub clauses: Vec<ClauseReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsTriple {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub unit: String,
    /// Raw clinical units over the observed 48h window.
    pub observed: StatsTriple,
    /// Raw clinical units over the forecasted 24h window.
    pub predicted: StatsTriple,
    /// Hourly forecasted values (raw units) for plotting.
    pub predicted_series: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestExplanation {
    pub test: String,
    /// Fired rules that require this test.
    pub supporting_rules: Vec<String>,
    pub panel: Vec<FeatureSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub stay_id: String,
    pub recommended_order: Vec<u8>,
    pub probabilities: Vec<f64>,
    pub fired_rules: Vec<FiredRule>,
    pub ordered_tests: Vec<TestExplanation>,
}

fn raw_stats(
    x: &Tensor,
    mask: Option<&Tensor>,
    col: usize,
    stats: &FeatureStats,
) -> Option<StatsTriple> {
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
        let v = stats.unstandardize(col, x.at(r, col));
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    (n > 0).then(|| StatsTriple { mean: sum / n as f64, min, max })
}

/// Build the explanation for one stay. Values come from the same window the
/// policy saw, mapped back to clinical units.
pub fn explain(
    policy: &PolicyModel,
    stay: &PatientStay,
    window: &StayWindow,
    forecaster: &ForecastModel,
    ruleset: &RuleSet,
    catalog: &FeatureCatalog,
    stats: &FeatureStats,
) -> Result<Explanation, PolicyError> {
    let x_hat = forecaster.predict(&window.x_prev)?;
    let probabilities = policy.act_context(&crate::policy::context_vector(window, &x_hat))?;
    let recommended: Vec<u8> = binarize(&probabilities).iter().map(|&v| v as u8).collect();

    let raw = RawWindow { anchor_hour: window.anchor_hour, obs: &window.raw_prev, horizon: 0.0 };
    let mut fired_rules = Vec::new();
    for rule in &ruleset.rules {
        let (fired, values) = eval_rule(rule, &raw);
        if !fired {
            continue;
        }
        fired_rules.push(FiredRule {
            name: rule.name.clone(),
            ordered_tests: rule.ordered_tests.iter().map(|&t| TEST_NAMES[t].to_string()).collect(),
            clauses: rule
                .clauses
                .iter()
                .zip(values)
                .map(|(c, value)| ClauseReport {
                    metric: c.metric.name().to_string(),
                    feature: c.feature_name.clone(),
                    window_hours: c.window_hours,
                    comparator: c.cmp.map(|(op, _)| op.symbol().to_string()),
                    threshold: c.cmp.map(|(_, th)| th),
                    value,
                })
                .collect(),
        });
    }

    let mut ordered_tests = Vec::new();
    for t in 0..K {
        if recommended[t] == 0 {
            continue;
        }
        let supporting_rules: Vec<String> = fired_rules
            .iter()
            .filter(|fr| fr.ordered_tests.iter().any(|n| n == TEST_NAMES[t]))
            .map(|fr| fr.name.clone())
            .collect();
        let mut panel = Vec::new();
        for &f in catalog.panel(t) {
            let observed = raw_stats(&window.x_prev, Some(&window.obs_mask_prev), f, stats)
                .or_else(|| raw_stats(&window.x_prev, None, f, stats))
                .expect("x_prev is dense");
            let predicted = raw_stats(&x_hat, None, f, stats).expect("forecast is dense");
            let predicted_series: Vec<f64> =
                (0..x_hat.rows).map(|h| stats.unstandardize(f, x_hat.at(h, f))).collect();
            panel.push(FeatureSummary {
                feature: catalog.feature(f).name.clone(),
                unit: catalog.feature(f).unit.clone(),
                observed,
                predicted,
                predicted_series,
            });
        }
        ordered_tests.push(TestExplanation {
            test: TEST_NAMES[t].to_string(),
            supporting_rules,
            panel,
        });
    }

    Ok(Explanation {
        stay_id: stay.stay_id.clone(),
        recommended_order: recommended,
        probabilities,
        fired_rules,
        ordered_tests,
    })
}
