//! End-to-end pipeline: generate → bounds → forecaster → density model →
//! policies → benchmark report, with artifacts written under one output
//! directory. Reruns with the same seed overwrite identically.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::AppConfig;
use crate::data::{
    fit_stats, load_cohort, make_window, save_cohort, split, FeatureCatalog, FeatureStats,
    PatientStay, StayWindow, K, TEST_NAMES,
};
use crate::forecast::{eval_mse, train_forecaster, ForecastModel};
use crate::gps::{train_gps, GpsModel};
use crate::numeric::Tensor;
use crate::outcome::Mode;
use crate::policy::{
    build_samples, train_policy, EpochLog, PolicyModel, PolicySample,
};
use crate::report::{evaluate, EvalReport};
use crate::rules::{default_ruleset, parse_rules, save_bounds, OrderBounds, RuleSet};
use crate::synth::{bounds_for, calibration_report, generate};

/// Error class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
#[error("stage {stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    fn new(stage: &'static str, kind: ErrorKind, message: impl ToString) -> Self {
        PipelineError { stage, kind, message: message.to_string() }
    }
}

pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Self {
        Paths { out: out.to_path_buf() }
    }
    pub fn catalog(&self) -> PathBuf {
        self.out.join("catalog.json")
    }
    pub fn cohort(&self) -> PathBuf {
        self.out.join("cohort.jsonl")
    }
    pub fn bounds(&self) -> PathBuf {
        self.out.join("bounds.jsonl")
    }
    pub fn forecaster(&self) -> PathBuf {
        self.out.join("forecaster.json")
    }
    pub fn gps(&self) -> PathBuf {
        self.out.join("gps.json")
    }
    pub fn policy(&self, use_gps: bool) -> PathBuf {
        self.out.join(if use_gps { "policy_gps.json" } else { "policy_nogps.json" })
    }
    pub fn policy_log(&self, use_gps: bool) -> PathBuf {
        self.out
            .join(if use_gps { "policy_gps_train_log.jsonl" } else { "policy_nogps_train_log.jsonl" })
    }
    pub fn report_json(&self) -> PathBuf {
        self.out.join("report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.out.join("report.csv")
    }
    pub fn plots(&self) -> PathBuf {
        self.out.join("plots")
    }
    pub fn incomplete_marker(&self) -> PathBuf {
        self.out.join("INCOMPLETE")
    }
}

/// Split cohort with windows, stats, and per-split bounds/orders.
pub struct SplitData {
    pub stats: FeatureStats,
    pub train: SplitPart,
    pub val: SplitPart,
    pub test: SplitPart,
}

pub struct SplitPart {
    pub stays: Vec<PatientStay>,
    pub windows: Vec<StayWindow>,
    pub bounds: Vec<OrderBounds>,
    pub orders: Vec<Vec<u8>>,
}

pub fn load_ruleset(cfg: &AppConfig, catalog: &FeatureCatalog) -> Result<RuleSet, PipelineError> {
    if cfg.rules.path.is_empty() {
        Ok(default_ruleset(catalog))
    } else {
        let text = std::fs::read_to_string(&cfg.rules.path).map_err(|e| {
            PipelineError::new("rules", ErrorKind::Config, format!("{}: {e}", cfg.rules.path))
        })?;
        parse_rules(&text, catalog)
            .map_err(|e| PipelineError::new("rules", ErrorKind::Config, e))
    }
}

pub fn stage_generate(
    cfg: &AppConfig,
    catalog: &FeatureCatalog,
    ruleset: &RuleSet,
    paths: &Paths,
) -> Result<Vec<PatientStay>, PipelineError> {
    let stays = generate(&cfg.cohort, catalog, ruleset)
        .map_err(|e| PipelineError::new("generate", ErrorKind::Config, e))?;
    std::fs::create_dir_all(&paths.out)
        .map_err(|e| PipelineError::new("generate", ErrorKind::Data, e))?;
    catalog
        .save(&paths.catalog())
        .map_err(|e| PipelineError::new("generate", ErrorKind::Data, e))?;
    save_cohort(&paths.cohort(), &stays, catalog)
        .map_err(|e| PipelineError::new("generate", ErrorKind::Data, e))?;
    log::info!("generated {} stays", stays.len());
    Ok(stays)
}

pub fn load_stays(
    catalog: &FeatureCatalog,
    paths: &Paths,
) -> Result<Vec<PatientStay>, PipelineError> {
    load_cohort(&paths.cohort(), catalog)
        .map_err(|e| PipelineError::new("load-cohort", ErrorKind::Data, e))
}

pub fn stage_bounds(
    stays: &[PatientStay],
    ruleset: &RuleSet,
    paths: &Paths,
) -> Result<Vec<OrderBounds>, PipelineError> {
    let bounds = bounds_for(stays, ruleset);
    save_bounds(&paths.bounds(), &bounds)
        .map_err(|e| PipelineError::new("bounds", ErrorKind::Data, e))?;
    match calibration_report(stays, &bounds) {
        Ok(c) => log::info!(
            "calibration: guideline/observed {:.3}, miss rate {:.3}",
            c.guideline_to_observed_ratio,
            c.miss_rate
        ),
        Err(e) => log::warn!("calibration undefined: {e}"),
    }
    Ok(bounds)
}

/// 70/10/20 split, training statistics, windows, and aligned bounds.
pub fn split_and_window(
    cfg: &AppConfig,
    stays: Vec<PatientStay>,
    bounds: &[OrderBounds],
) -> Result<SplitData, PipelineError> {
    let d = bounds.len();
    assert_eq!(stays.len(), d, "bounds must cover the cohort");
    let by_id: std::collections::BTreeMap<&str, &OrderBounds> =
        bounds.iter().map(|b| (b.stay_id.as_str(), b)).collect();
    let catalog_d = {
        // feature count is implicit in windows; stats need it explicitly
        crate::data::default_catalog().d()
    };
    let (train, val, test) = split(stays, (0.7, 0.1, 0.2), cfg.seed.0)
        .map_err(|e| PipelineError::new("split", ErrorKind::Data, e))?;
    let stats = fit_stats(&train, catalog_d);
    let catalog = crate::data::default_catalog();
    let part = |stays: Vec<PatientStay>| -> Result<SplitPart, PipelineError> {
        let mut windows = Vec::with_capacity(stays.len());
        let mut part_bounds = Vec::with_capacity(stays.len());
        let mut orders = Vec::with_capacity(stays.len());
        for s in &stays {
            windows.push(
                make_window(s, &stats, &catalog)
                    .map_err(|e| PipelineError::new("window", ErrorKind::Data, e))?,
            );
            let b = by_id.get(s.stay_id.as_str()).ok_or_else(|| {
                PipelineError::new(
                    "window",
                    ErrorKind::Data,
                    format!("missing bounds for stay {}", s.stay_id),
                )
            })?;
            part_bounds.push((*b).clone());
            orders.push(s.observed_order.clone());
        }
        Ok(SplitPart { stays, windows, bounds: part_bounds, orders })
    };
    let (train, val, test) = (part(train)?, part(val)?, part(test)?);
    Ok(SplitData { stats, train, val, test })
}

pub fn stage_forecaster(
    cfg: &AppConfig,
    data: &SplitData,
    paths: &Paths,
) -> Result<ForecastModel, PipelineError> {
    let model = train_forecaster(&data.train.windows, &data.val.windows, &cfg.forecaster, cfg.seed.0)
        .map_err(|e| PipelineError::new("train-forecaster", ErrorKind::Numeric, e))?;
    model
        .save(&paths.forecaster())
        .map_err(|e| PipelineError::new("train-forecaster", ErrorKind::Data, e))?;
    if let Ok(cf) = eval_mse(&ForecastModel::carry_forward(model.d), &data.val.windows) {
        if let Ok(own) = eval_mse(&model, &data.val.windows) {
            log::info!("forecaster val mse {:.5} (carry-forward {:.5})", own, cf);
        }
    }
    Ok(model)
}

fn contexts_and_orders(
    part: &SplitPart,
    forecaster: &ForecastModel,
) -> Result<(Tensor, Tensor), PipelineError> {
    let n = part.windows.len();
    let d = part.windows[0].x_prev.cols;
    let mut ctx = Tensor::zeros(n, 72 * d);
    let mut orders = Tensor::zeros(n, K);
    for (r, w) in part.windows.iter().enumerate() {
        let x_hat = forecaster
            .predict(&w.x_prev)
            .map_err(|e| PipelineError::new("train-gps", ErrorKind::Numeric, e))?;
        ctx.row_mut(r).copy_from_slice(&crate::policy::context_vector(w, &x_hat));
        for (c, &b) in part.orders[r].iter().enumerate() {
            orders.set(r, c, f64::from(b));
        }
    }
    Ok((ctx, orders))
}

pub fn stage_gps(
    cfg: &AppConfig,
    data: &SplitData,
    forecaster: &ForecastModel,
    paths: &Paths,
) -> Result<GpsModel, PipelineError> {
    let (train_ctx, train_orders) = contexts_and_orders(&data.train, forecaster)?;
    let (val_ctx, val_orders) = contexts_and_orders(&data.val, forecaster)?;
    let model = train_gps(&train_orders, &train_ctx, &val_orders, &val_ctx, &cfg.gps, cfg.seed.0)
        .map_err(|e| PipelineError::new("train-gps", ErrorKind::Numeric, e))?;
    model.save(&paths.gps()).map_err(|e| PipelineError::new("train-gps", ErrorKind::Data, e))?;
    if let (Some(meta), Some(eps)) = (&model.meta, model.threshold) {
        log::info!("density model val nll {:.4}, threshold {:.4e}", meta.val_nll, eps);
    }
    Ok(model)
}

/// Build policy samples for one split (embeddings cached when a density
/// model is supplied).
pub fn stage_samples(
    cfg: &AppConfig,
    part: &SplitPart,
    forecaster: &ForecastModel,
    catalog: &FeatureCatalog,
    gps: Option<&GpsModel>,
) -> Result<Vec<PolicySample>, PipelineError> {
    build_samples(
        &part.windows,
        &part.bounds,
        &part.orders,
        forecaster,
        catalog,
        &cfg.outcome.to_outcome(Mode::Smooth),
        gps,
        cfg.eval.oracle_future,
    )
    .map_err(|e| PipelineError::new("samples", ErrorKind::Numeric, e))
}

pub fn stage_policy(
    cfg: &AppConfig,
    train: &[PolicySample],
    val: &[PolicySample],
    gps: Option<&GpsModel>,
    paths: &Paths,
) -> Result<PolicyModel, PipelineError> {
    let use_gps = gps.is_some();
    let stage: &'static str = if use_gps { "train-policy" } else { "train-policy-nogps" };
    let outcome = cfg.outcome.to_outcome(Mode::Smooth);
    let mut pcfg = cfg.policy.clone();
    pcfg.use_gps = use_gps;
    let (model, logs) = train_policy(train, val, gps, &outcome, &pcfg, cfg.seed.0)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Numeric, e))?;
    model
        .save(&paths.policy(use_gps))
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
    write_train_log(&paths.policy_log(use_gps), &logs)
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e))?;
    if let Some(meta) = &model.meta {
        log::info!(
            "{stage}: restart {} selected, val objective {:.3}",
            meta.restart,
            meta.val_objective
        );
    }
    Ok(model)
}

fn write_train_log(path: &Path, logs: &[EpochLog]) -> Result<(), std::io::Error> {
    let mut f = std::fs::File::create(path)?;
    for l in logs {
        writeln!(f, "{}", serde_json::to_string(l).expect("log serialization"))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn stage_evaluate(
    cfg: &AppConfig,
    test_samples: &[PolicySample],
    policy_gps: &PolicyModel,
    policy_nogps: &PolicyModel,
    gps: &GpsModel,
    stats: &FeatureStats,
    catalog: &FeatureCatalog,
    paths: &Paths,
) -> Result<EvalReport, PipelineError> {
    let outcome = cfg.outcome.to_outcome(Mode::Hard);
    let learned: Vec<(String, &PolicyModel)> = vec![
        ("learned_no_gps".to_string(), policy_nogps),
        ("learned_gps".to_string(), policy_gps),
    ];
    let rows = evaluate(&learned, test_samples, Some(gps), &outcome, &cfg.eval.random_p, cfg.seed.0)
        .map_err(|e| PipelineError::new("evaluate", ErrorKind::Numeric, e))?;
    let report = EvalReport::from_rows(cfg.echo(), rows);
    report
        .write_json(&paths.report_json())
        .map_err(|e| PipelineError::new("evaluate", ErrorKind::Data, e))?;
    report
        .write_csv(&paths.report_csv())
        .map_err(|e| PipelineError::new("evaluate", ErrorKind::Data, e))?;
    write_plot_data(cfg, test_samples, stats, catalog, paths)
        .map_err(|e| PipelineError::new("evaluate", ErrorKind::Data, e))?;
    Ok(report)
}

/// Per-panel predicted-vs-observed series for the first few test stays:
/// one CSV per (stay, test) with raw-unit values.
fn write_plot_data(
    cfg: &AppConfig,
    samples: &[PolicySample],
    stats: &FeatureStats,
    catalog: &FeatureCatalog,
    paths: &Paths,
) -> Result<(), std::io::Error> {
    let dir = paths.plots();
    std::fs::create_dir_all(&dir)?;
    let d = catalog.d();
    for s in samples.iter().take(cfg.eval.plot_stays) {
        // context = [48×d history; 24×d forecast], row-major by hour
        for (t_idx, t_name) in TEST_NAMES.iter().enumerate() {
            let path = dir.join(format!("{}_{}.csv", s.stay_id, t_name));
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "hour,feature,series,value")?;
            for &feat in catalog.panel(t_idx) {
                let name = &catalog.feature(feat).name;
                for h in 0..72 {
                    let z = s.context[h * d + feat];
                    let series = if h < 48 { "history" } else { "forecast" };
                    let hour = h as f64 - 48.0;
                    writeln!(f, "{hour},{name},{series},{}", stats.unstandardize(feat, z))?;
                }
            }
        }
    }
    Ok(())
}

pub struct PipelineArtifacts {
    pub report: EvalReport,
    pub forecaster: ForecastModel,
    pub gps: GpsModel,
    pub policy_gps: PolicyModel,
    pub policy_nogps: PolicyModel,
}

/// Run every stage. Any failure aborts with the stage name; an INCOMPLETE
/// marker flags partial artifacts until the run finishes.
pub fn run_pipeline(cfg: &AppConfig, out: &Path) -> Result<PipelineArtifacts, PipelineError> {
    let paths = Paths::new(out);
    std::fs::create_dir_all(out)
        .map_err(|e| PipelineError::new("setup", ErrorKind::Data, e))?;
    let mark = |stage: &str| {
        let _ = std::fs::write(paths.incomplete_marker(), format!("{stage}\n"));
    };

    mark("generate");
    let catalog = crate::data::default_catalog();
    let ruleset = load_ruleset(cfg, &catalog)?;
    let stays = stage_generate(cfg, &catalog, &ruleset, &paths)?;

    mark("bounds");
    let bounds = stage_bounds(&stays, &ruleset, &paths)?;

    mark("split");
    let data = split_and_window(cfg, stays, &bounds)?;

    mark("train-forecaster");
    let forecaster = stage_forecaster(cfg, &data, &paths)?;

    mark("train-gps");
    let gps = stage_gps(cfg, &data, &forecaster, &paths)?;

    mark("train-policy");
    let train_samples = stage_samples(cfg, &data.train, &forecaster, &catalog, Some(&gps))?;
    let val_samples = stage_samples(cfg, &data.val, &forecaster, &catalog, Some(&gps))?;
    let policy_gps = stage_policy(cfg, &train_samples, &val_samples, Some(&gps), &paths)?;

    mark("train-policy-nogps");
    let policy_nogps = stage_policy(cfg, &train_samples, &val_samples, None, &paths)?;

    mark("evaluate");
    let test_samples = stage_samples(cfg, &data.test, &forecaster, &catalog, Some(&gps))?;
    let report = stage_evaluate(
        cfg,
        &test_samples,
        &policy_gps,
        &policy_nogps,
        &gps,
        &data.stats,
        &catalog,
        &paths,
    )?;

    let _ = std::fs::remove_file(paths.incomplete_marker());
    Ok(PipelineArtifacts { report, forecaster, gps, policy_gps, policy_nogps })
}
