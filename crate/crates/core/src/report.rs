//! Benchmark evaluation: per-policy discrete metrics on the test split,
//! reported per seed with a mean ± std aggregate, as JSON and CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gps::{GpsError, GpsModel};
use crate::numeric::Tensor;
use crate::outcome::{test_metrics, Mode, OutcomeConfig, OutcomeError};
use crate::policy::{binarize, BaselinePolicy, PolicyError, PolicyModel, PolicySample};
use crate::rules::OrderBounds;

/// Evaluation weights for the report utility.
pub const EVAL_BETA: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub policy: String,
    pub delta_x: f64,
    pub cost: f64,
    pub l_b_test: f64,
    pub l_low: f64,
    pub l_up: f64,
    /// ΔX − L_b − C at the evaluation weights.
    pub utility: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frac_below_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateRow {
    pub policy: String,
    pub delta_x_mean: f64,
    pub delta_x_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub l_b_test_mean: f64,
    pub l_b_test_std: f64,
    pub l_low_mean: f64,
    pub l_low_std: f64,
    pub l_up_mean: f64,
    pub l_up_std: f64,
    pub utility_mean: f64,
    pub utility_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub rows: Vec<EvalRow>,
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no test samples to evaluate")]
    NoSamples,
    #[error("missing bounds for stay {0}")]
    MissingBounds(String),
    #[error("io error on {0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Gps(#[from] GpsError),
}

/// Actions a policy produced for the whole split: the binary orders that
/// are scored, plus the representation used for density reporting
/// (relaxed probabilities for learned policies, the binary order otherwise).
struct PolicyActions {
    name: String,
    binary: Vec<Vec<f64>>,
    density_repr: Vec<Vec<f64>>,
}

fn learned_actions(
    name: &str,
    policy: &PolicyModel,
    samples: &[PolicySample],
) -> Result<PolicyActions, ReportError> {
    let mut binary = Vec::with_capacity(samples.len());
    let mut relaxed = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(2048) {
        let mut ctx = Tensor::zeros(chunk.len(), chunk[0].context.len());
        for (r, s) in chunk.iter().enumerate() {
            ctx.row_mut(r).copy_from_slice(&s.context);
        }
        let acts = policy.act_batch(&ctx)?;
        for r in 0..chunk.len() {
            let t = acts.row(r).to_vec();
            binary.push(binarize(&t));
            relaxed.push(t);
        }
    }
    Ok(PolicyActions { name: name.to_string(), binary, density_repr: relaxed })
}

fn baseline_actions(baseline: &BaselinePolicy, samples: &[PolicySample]) -> PolicyActions {
    let acts: Vec<Vec<f64>> = samples.iter().map(|s| baseline.act(s)).collect();
    PolicyActions { name: baseline.name(), binary: acts.clone(), density_repr: acts }
}

fn bounds_of(sample: &PolicySample) -> OrderBounds {
    OrderBounds {
        stay_id: sample.stay_id.clone(),
        t_min: sample.t_min.iter().map(|&v| v as u8).collect(),
        t_max: sample.t_max.iter().map(|&v| v as u8).collect(),
        fired_rules: vec![],
    }
}

fn score(
    actions: &PolicyActions,
    samples: &[PolicySample],
    gps: Option<&GpsModel>,
    outcome_base: &OutcomeConfig,
    seed: u64,
) -> Result<EvalRow, ReportError> {
    let cfg = OutcomeConfig {
        beta1: EVAL_BETA,
        beta2: EVAL_BETA,
        mode: Mode::Hard,
        ..outcome_base.clone()
    };
    let n = samples.len() as f64;
    let mut sums = [0.0f64; 5];
    for (s, t) in samples.iter().zip(&actions.binary) {
        let m = test_metrics(t, &bounds_of(s), &s.deltas, &cfg)?;
        sums[0] += m.delta_x;
        sums[1] += m.cost;
        sums[2] += m.l_b_test;
        sums[3] += m.l_low;
        sums[4] += m.l_up;
    }
    let (mean_gps, frac_below) = match gps {
        Some(model) => {
            let eps = model.threshold.unwrap_or(0.0);
            let mut total = 0.0;
            let mut below = 0usize;
            for (chunk_s, chunk_t) in samples.chunks(2048).zip(actions.density_repr.chunks(2048)) {
                let e_dim = chunk_s[0].embed.as_ref().expect("embeddings cached").len();
                let mut e = Tensor::zeros(chunk_s.len(), e_dim);
                let mut t = Tensor::zeros(chunk_s.len(), chunk_t[0].len());
                for (r, (s, a)) in chunk_s.iter().zip(chunk_t).enumerate() {
                    e.row_mut(r).copy_from_slice(s.embed.as_ref().expect("embeddings cached"));
                    t.row_mut(r).copy_from_slice(a);
                }
                for ld in model.log_density_embedded(&t, &e)? {
                    let f = ld.exp();
                    total += f;
                    if f < eps {
                        below += 1;
                    }
                }
            }
            (Some(total / n), Some(below as f64 / n))
        }
        None => (None, None),
    };
    let (delta_x, cost, l_b_test, l_low, l_up) =
        (sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n);
    Ok(EvalRow {
        seed,
        policy: actions.name.clone(),
        delta_x,
        cost,
        l_b_test,
        l_low,
        l_up,
        utility: delta_x - EVAL_BETA * l_b_test - EVAL_BETA * cost,
        mean_gps,
        frac_below_threshold: frac_below,
    })
}

/// Score the benchmark policy set on a test split. Row order: the random
/// baselines, the bound policies, the physician, then the learned policies.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    learned: &[(String, &PolicyModel)],
    samples: &[PolicySample],
    gps: Option<&GpsModel>,
    outcome_base: &OutcomeConfig,
    random_p: &[f64],
    seed: u64,
) -> Result<Vec<EvalRow>, ReportError> {
    if samples.is_empty() {
        return Err(ReportError::NoSamples);
    }
    let mut all_actions = Vec::new();
    for &p in random_p {
        let b = BaselinePolicy::random(p, seed)?;
        all_actions.push(baseline_actions(&b, samples));
    }
    all_actions.push(baseline_actions(&BaselinePolicy::Lower, samples));
    all_actions.push(baseline_actions(&BaselinePolicy::Upper, samples));
    all_actions.push(baseline_actions(&BaselinePolicy::Physician, samples));
    for (name, policy) in learned {
        all_actions.push(learned_actions(name, policy, samples)?);
    }
    all_actions.iter().map(|a| score(a, samples, gps, outcome_base, seed)).collect()
}

fn std_dev(values: &[f64], mean: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
}

impl EvalReport {
    /// Assemble per-seed rows into a report with a mean ± std aggregate per
    /// policy (population convention), preserving first-seen policy order.
    pub fn from_rows(config: serde_json::Value, rows: Vec<EvalRow>) -> EvalReport {
        let mut seeds: Vec<u64> = Vec::new();
        let mut policies: Vec<String> = Vec::new();
        for r in &rows {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
            if !policies.contains(&r.policy) {
                policies.push(r.policy.clone());
            }
        }
        let mut aggregate = Vec::new();
        for p in &policies {
            let of: Vec<&EvalRow> = rows.iter().filter(|r| &r.policy == p).collect();
            let col = |f: fn(&EvalRow) -> f64| -> (f64, f64) {
                let vals: Vec<f64> = of.iter().map(|r| f(r)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                (mean, std_dev(&vals, mean))
            };
            let (delta_x_mean, delta_x_std) = col(|r| r.delta_x);
            let (cost_mean, cost_std) = col(|r| r.cost);
            let (l_b_test_mean, l_b_test_std) = col(|r| r.l_b_test);
            let (l_low_mean, l_low_std) = col(|r| r.l_low);
            let (l_up_mean, l_up_std) = col(|r| r.l_up);
            let (utility_mean, utility_std) = col(|r| r.utility);
            aggregate.push(AggregateRow {
                policy: p.clone(),
                delta_x_mean,
                delta_x_std,
                cost_mean,
                cost_std,
                l_b_test_mean,
                l_b_test_std,
                l_low_mean,
                l_low_std,
                l_up_mean,
                l_up_std,
                utility_mean,
                utility_std,
            });
        }
        EvalReport { config, seeds, rows, aggregate }
    }

    /// Merge several single-seed reports (same config) into one.
    pub fn merge(reports: Vec<EvalReport>) -> EvalReport {
        let config = reports.first().map(|r| r.config.clone()).unwrap_or_default();
        let rows: Vec<EvalRow> = reports.into_iter().flat_map(|r| r.rows).collect();
        EvalReport::from_rows(config, rows)
    }

    pub fn row(&self, policy: &str, seed: u64) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.policy == policy && r.seed == seed)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ReportError> {
        let body = serde_json::to_string_pretty(self).expect("report serialization");
        std::fs::write(path, body + "\n")
            .map_err(|e| ReportError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<EvalReport, ReportError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| ReportError::Io(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&body)
            .map_err(|e| ReportError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        let err = |e: std::io::Error| ReportError::Io(path.display().to_string(), e.to_string());
        let mut f = std::fs::File::create(path).map_err(err)?;
        writeln!(
            f,
            "seed,policy,delta_x,cost,l_b_test,l_low,l_up,utility,mean_gps,frac_below_threshold"
        )
        .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.policy,
                r.delta_x,
                r.cost,
                r.l_b_test,
                r.l_low,
                r.l_up,
                r.utility,
                opt(r.mean_gps),
                opt(r.frac_below_threshold)
            )
            .map_err(err)?;
        }
        for a in &self.aggregate {
            writeln!(
                f,
                "mean,{},{},{},{},{},{},{},,",
                a.policy, a.delta_x_mean, a.cost_mean, a.l_b_test_mean, a.l_low_mean, a.l_up_mean, a.utility_mean
            )
            .map_err(err)?;
            writeln!(
                f,
                "std,{},{},{},{},{},{},{},,",
                a.policy, a.delta_x_std, a.cost_std, a.l_b_test_std, a.l_low_std, a.l_up_std, a.utility_std
            )
            .map_err(err)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::K;
    use crate::outcome::uniform_alpha;

    fn sample(id: &str, t_min: Vec<f64>, t_max: Vec<f64>, t_star: Vec<f64>) -> PolicySample {
        PolicySample {
            stay_id: id.into(),
            context: vec![0.0; 8],
            embed: None,
            deltas: (0..K).map(|j| 0.1 * j as f64).collect(),
            eq_mask: t_min.iter().zip(&t_max).map(|(&a, &b)| f64::from(a == b)).collect(),
            t_min,
            t_max,
            t_star,
        }
    }

    fn samples() -> Vec<PolicySample> {
        (0..40)
            .map(|i| {
                let mut t_min = vec![0.0; K];
                t_min[i % 3] = 1.0;
                let mut t_star = t_min.clone();
                t_star[(i + 4) % K] = 1.0;
                let t_max: Vec<f64> = t_min
                    .iter()
                    .zip(&t_star)
                    .map(|(&a, &b)| f64::from(a != 0.0 || b != 0.0))
                    .collect();
                sample(&format!("s{i:03}"), t_min, t_max, t_star)
            })
            .collect()
    }

    fn base_cfg() -> OutcomeConfig {
        OutcomeConfig { alpha: uniform_alpha(), ..Default::default() }
    }

    #[test]
    fn bound_policies_have_zero_bound_metrics_and_physician_zero_lup() {
        let s = samples();
        let rows = evaluate(&[], &s, None, &base_cfg(), &[0.5, 0.75], 7).unwrap();
        let by = |name: &str| rows.iter().find(|r| r.policy == name).unwrap();
        assert_eq!(by("lower_bound").l_b_test, 0.0);
        assert_eq!(by("lower_bound").l_low, 0.0);
        assert_eq!(by("upper_bound").l_b_test, 0.0);
        assert_eq!(by("physician").l_up, 0.0);
        // row order mirrors the benchmark table
        let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
        assert_eq!(
            names,
            vec!["random_0.5", "random_0.75", "lower_bound", "upper_bound", "physician"]
        );
    }

    #[test]
    fn random_cost_ordering() {
        let s = samples();
        let rows = evaluate(&[], &s, None, &base_cfg(), &[0.5, 0.75], 3).unwrap();
        let by = |name: &str| rows.iter().find(|r| r.policy == name).unwrap();
        assert!(by("random_0.75").cost > by("random_0.5").cost);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let s = samples();
        let a = evaluate(&[], &s, None, &base_cfg(), &[0.5], 11).unwrap();
        let b = evaluate(&[], &s, None, &base_cfg(), &[0.5], 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_and_csv_match_rows() {
        let s = samples();
        let mut rows = evaluate(&[], &s, None, &base_cfg(), &[0.5], 1).unwrap();
        rows.extend(evaluate(&[], &s, None, &base_cfg(), &[0.5], 2).unwrap());
        let report = EvalReport::from_rows(serde_json::json!({}), rows.clone());
        assert_eq!(report.seeds, vec![1, 2]);
        // two identical seeds of the deterministic baselines → zero std
        let agg = report.aggregate.iter().find(|a| a.policy == "lower_bound").unwrap();
        assert_eq!(agg.delta_x_std, 0.0);
        // utility column is ΔX − L_b − C at the evaluation betas
        for r in &report.rows {
            assert!((r.utility - (r.delta_x - r.l_b_test - r.cost)).abs() < 1e-12);
            assert!((r.l_b_test - (r.l_low + r.l_up)).abs() < 1e-9);
        }

        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("report.json");
        let cpath = dir.path().join("report.csv");
        report.write_json(&jpath).unwrap();
        report.write_csv(&cpath).unwrap();
        let back = EvalReport::load_json(&jpath).unwrap();
        assert_eq!(back.rows, report.rows);

        // CSV values match the JSON rows
        let csv = std::fs::read_to_string(&cpath).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("seed,policy"));
        for (line, row) in lines.take(report.rows.len()).zip(&report.rows) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0].parse::<u64>().unwrap(), row.seed);
            assert_eq!(cells[1], row.policy);
            assert_eq!(cells[2].parse::<f64>().unwrap(), row.delta_x);
            assert_eq!(cells[7].parse::<f64>().unwrap(), row.utility);
        }
    }
}
