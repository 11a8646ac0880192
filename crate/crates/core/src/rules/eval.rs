//! Rule evaluation on raw observations.
//!
//! Clauses see only truly observed values (imputed cells never satisfy a
//! clause); a clause over a feature with no observations in its window is
//! false. Percent metrics need a positive reference value.

use crate::data::Obs;

use super::{Clause, Metric, Rule};

/// Raw observations around a decision anchor. `obs` must be canonically
/// sorted; `horizon` extends every clause window past the anchor (used when
/// bound generation is allowed to see forecasted values), normally 0.
#[derive(Debug, Clone, Copy)]
pub struct RawWindow<'a> {
    pub anchor_hour: f64,
    pub obs: &'a [Obs],
    pub horizon: f64,
}

/// Value a clause evaluated to, kept for explanations.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClauseValue {
    Number { value: f64 },
    Event { present: bool },
    Missing,
}

fn values_in<'a>(
    w: &'a RawWindow<'_>,
    feature: usize,
    lo: f64,
    hi: f64,
) -> impl Iterator<Item = f64> + 'a {
    w.obs
        .iter()
        .filter(move |o| o.feature == feature && o.hour >= lo && o.hour < hi)
        .map(|o| o.value)
}

fn eval_clause(clause: &Clause, w: &RawWindow<'_>) -> (bool, ClauseValue) {
    let hi = w.anchor_hour + w.horizon;
    let lo = w.anchor_hour - clause.window_hours;
    match clause.metric {
        Metric::Event => {
            let present = values_in(w, clause.feature, lo, hi).any(|v| v != 0.0);
            (present, ClauseValue::Event { present })
        }
        Metric::NewEvent => {
            let prior = clause.prior_window_hours.expect("validated at parse");
            let recent = values_in(w, clause.feature, lo, hi).any(|v| v != 0.0);
            let before = values_in(w, clause.feature, lo - prior, lo).any(|v| v != 0.0);
            let fired = recent && !before;
            (fired, ClauseValue::Event { present: fired })
        }
        _ => {
            let vals: Vec<f64> = values_in(w, clause.feature, lo, hi).collect();
            if vals.is_empty() {
                return (false, ClauseValue::Missing);
            }
            let last = *vals.last().expect("non-empty");
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let value = match clause.metric {
                Metric::Last => last,
                Metric::Min => min,
                Metric::Max => max,
                Metric::Sum => vals.iter().sum(),
                Metric::Delta => max - min,
                Metric::Drop => max - last,
                Metric::Rise => last - min,
                Metric::PctDrop => {
                    if max <= 0.0 {
                        return (false, ClauseValue::Missing);
                    }
                    100.0 * (max - last) / max
                }
                Metric::PctRise => {
                    if min <= 0.0 {
                        return (false, ClauseValue::Missing);
                    }
                    100.0 * (last - min) / min
                }
                Metric::Event | Metric::NewEvent => unreachable!(),
            };
            let (cmp, threshold) = clause.cmp.expect("validated at parse");
            (cmp.holds(value, threshold), ClauseValue::Number { value })
        }
    }
}

/// Conjunction over the rule's clauses; returns per-clause values.
pub fn eval_rule(rule: &Rule, w: &RawWindow<'_>) -> (bool, Vec<ClauseValue>) {
    let mut fired = true;
    let mut values = Vec::with_capacity(rule.clauses.len());
    for clause in &rule.clauses {
        let (ok, v) = eval_clause(clause, w);
        fired &= ok;
        values.push(v);
    }
    (fired, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_catalog;
    use crate::rules::parse_rules;

    fn obs(hour: f64, feature: usize, value: f64) -> Obs {
        Obs { hour, feature, value }
    }

    fn win(obs: &[Obs]) -> RawWindow<'_> {
        RawWindow { anchor_hour: 48.0, obs, horizon: 0.0 }
    }

    #[test]
    fn last_below_threshold_fires() {
        let cat = default_catalog();
        let rs =
            parse_rules(r#"RULE "r": IF LAST(Hemoglobin, 48h) < 7 THEN ORDER CBC"#, &cat).unwrap();
        // 8.1 at h-30 (hour 18), 6.5 at h-2 (hour 46): last is 6.5 → fires
        let data = vec![obs(18.0, 0, 8.1), obs(46.0, 0, 6.5)];
        let (fired, values) = eval_rule(&rs.rules[0], &win(&data));
        assert!(fired);
        assert_eq!(values[0], ClauseValue::Number { value: 6.5 });
    }

    #[test]
    fn drop_sees_only_its_window() {
        let cat = default_catalog();
        let rs =
            parse_rules(r#"RULE "r": IF DROP(Hemoglobin, 24h) > 2 THEN ORDER CBC"#, &cat).unwrap();
        // only 6.5 falls in the last 24h → drop = max − last = 0 → false
        let data = vec![obs(18.0, 0, 8.1), obs(46.0, 0, 6.5)];
        let (fired, values) = eval_rule(&rs.rules[0], &win(&data));
        assert!(!fired);
        assert_eq!(values[0], ClauseValue::Number { value: 0.0 });
    }

    #[test]
    fn missing_data_is_false() {
        let cat = default_catalog();
        let rs = parse_rules(r#"RULE "r": IF DELTA(Sodium, 24h) > 6 THEN ORDER Electrolytes"#, &cat)
            .unwrap();
        let (fired, values) = eval_rule(&rs.rules[0], &win(&[]));
        assert!(!fired);
        assert_eq!(values[0], ClauseValue::Missing);
    }

    #[test]
    fn newevent_semantics() {
        let cat = default_catalog();
        let rs = parse_rules(r#"RULE "r": IF NEWEVENT(Fever, 24h, 24h) THEN ORDER CBC"#, &cat)
            .unwrap();
        let fever = cat.feature_id("Fever").unwrap();
        // fever only in the recent 24h → fires
        let recent_only = vec![obs(30.0, fever, 1.0)];
        assert!(eval_rule(&rs.rules[0], &win(&recent_only)).0);
        // fever in both windows → not new
        let both = vec![obs(10.0, fever, 1.0), obs(30.0, fever, 1.0)];
        assert!(!eval_rule(&rs.rules[0], &win(&both)).0);
        // fever only in the prior window → no recent event
        let prior_only = vec![obs(10.0, fever, 1.0)];
        assert!(!eval_rule(&rs.rules[0], &win(&prior_only)).0);
        // zero-valued observations are not events
        let zeros = vec![obs(30.0, fever, 0.0)];
        assert!(!eval_rule(&rs.rules[0], &win(&zeros)).0);
    }

    #[test]
    fn pct_metrics() {
        let cat = default_catalog();
        let rs = parse_rules(
            r#"RULE "r": IF PCTRISE(Vasopressors, 24h) > 25 THEN ORDER Lactate"#,
            &cat,
        )
        .unwrap();
        let vp = cat.feature_id("Vasopressors").unwrap();
        // 0.10 → 0.14 is a 40% rise
        let data = vec![obs(28.0, vp, 0.10), obs(46.0, vp, 0.14)];
        let (fired, values) = eval_rule(&rs.rules[0], &win(&data));
        assert!(fired);
        match values[0] {
            ClauseValue::Number { value } => assert!((value - 40.0).abs() < 1e-9),
            ref other => panic!("unexpected {other:?}"),
        }
        // non-positive reference → false
        let data = vec![obs(28.0, vp, 0.0), obs(46.0, vp, 0.14)];
        assert!(!eval_rule(&rs.rules[0], &win(&data)).0);
    }

    #[test]
    fn horizon_extends_window_past_anchor() {
        let cat = default_catalog();
        let rs =
            parse_rules(r#"RULE "r": IF LAST(Hemoglobin, 48h) < 7 THEN ORDER CBC"#, &cat).unwrap();
        let data = vec![obs(47.0, 0, 9.0), obs(50.0, 0, 6.0)];
        // without horizon the future value is invisible
        assert!(!eval_rule(&rs.rules[0], &win(&data)).0);
        let w = RawWindow { anchor_hour: 48.0, obs: &data, horizon: 24.0 };
        assert!(eval_rule(&rs.rules[0], &w).0);
    }
}
