//! `laborder`: generate synthetic cohorts, derive rule bounds, train the
//! forecaster / density model / order policies, and run the benchmark.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use laborder_core::config::{AppConfig, ConfigError};
use laborder_core::data::{default_catalog, make_window};
use laborder_core::explain::explain;
use laborder_core::forecast::ForecastModel;
use laborder_core::gps::GpsModel;
use laborder_core::outcome::Mode;
use laborder_core::pipeline::{
    self, run_pipeline, ErrorKind, Paths, PipelineError,
};
use laborder_core::policy::{train_policy, PolicyConfig, PolicyModel};
use laborder_core::rules::load_bounds;

#[derive(Parser)]
#[command(name = "laborder", version, about)]
struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Evaluate informativeness against the observed future instead of the
    /// forecast.
    #[arg(long = "oracle-future", global = true)]
    oracle_future: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic cohort and catalog.
    Generate,
    /// Compute per-stay order bounds from the rule set.
    Bounds,
    /// Train the next-day status forecaster.
    TrainForecaster,
    /// Train the order-density model and reliability threshold.
    TrainGps,
    /// Train the order policy (constrained by default).
    TrainPolicy {
        /// Drop the density constraint.
        #[arg(long = "no-gps")]
        no_gps: bool,
    },
    /// Score the benchmark policy set on the test split.
    Evaluate,
    /// Explain the recommended order for one stay.
    Explain {
        #[arg(long)]
        stay: String,
    },
    /// Run every stage end to end.
    Pipeline,
    /// Random hyperparameter search for the policy learner.
    Search {
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(match err.kind {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path).map_err(config_err)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.oracle_future {
        cfg.eval.oracle_future = true;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn config_err(e: ConfigError) -> PipelineError {
    PipelineError { stage: "config", kind: ErrorKind::Config, message: e.to_string() }
}

fn data_err(stage: &'static str, msg: impl ToString) -> PipelineError {
    PipelineError { stage, kind: ErrorKind::Data, message: msg.to_string() }
}

/// Load bounds from disk when present, else recompute them (cheap).
fn bounds_or_compute(
    stays: &[laborder_core::data::PatientStay],
    ruleset: &laborder_core::rules::RuleSet,
    paths: &Paths,
) -> Vec<laborder_core::rules::OrderBounds> {
    match load_bounds(&paths.bounds()) {
        Ok(b) if b.len() == stays.len() => b,
        _ => laborder_core::synth::bounds_for(stays, ruleset),
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let paths = Paths::new(&cli.out);
    let catalog = default_catalog();
    let ruleset = pipeline::load_ruleset(&cfg, &catalog)?;

    match &cli.cmd {
        Cmd::Generate => {
            pipeline::stage_generate(&cfg, &catalog, &ruleset, &paths)?;
        }
        Cmd::Bounds => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            pipeline::stage_bounds(&stays, &ruleset, &paths)?;
        }
        Cmd::TrainForecaster => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            let bounds = bounds_or_compute(&stays, &ruleset, &paths);
            let data = pipeline::split_and_window(&cfg, stays, &bounds)?;
            pipeline::stage_forecaster(&cfg, &data, &paths)?;
        }
        Cmd::TrainGps => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            let bounds = bounds_or_compute(&stays, &ruleset, &paths);
            let data = pipeline::split_and_window(&cfg, stays, &bounds)?;
            let forecaster = ForecastModel::load(&paths.forecaster())
                .map_err(|e| data_err("train-gps", format!("forecaster model: {e}")))?;
            pipeline::stage_gps(&cfg, &data, &forecaster, &paths)?;
        }
        Cmd::TrainPolicy { no_gps } => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            let bounds = bounds_or_compute(&stays, &ruleset, &paths);
            let data = pipeline::split_and_window(&cfg, stays, &bounds)?;
            let forecaster = ForecastModel::load(&paths.forecaster())
                .map_err(|e| data_err("train-policy", format!("forecaster model: {e}")))?;
            let gps = if *no_gps {
                None
            } else {
                Some(
                    GpsModel::load(&paths.gps())
                        .map_err(|e| data_err("train-policy", format!("density model: {e}")))?,
                )
            };
            let train =
                pipeline::stage_samples(&cfg, &data.train, &forecaster, &catalog, gps.as_ref())?;
            let val =
                pipeline::stage_samples(&cfg, &data.val, &forecaster, &catalog, gps.as_ref())?;
            pipeline::stage_policy(&cfg, &train, &val, gps.as_ref(), &paths)?;
        }
        Cmd::Evaluate => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            let bounds = bounds_or_compute(&stays, &ruleset, &paths);
            let data = pipeline::split_and_window(&cfg, stays, &bounds)?;
            let forecaster = ForecastModel::load(&paths.forecaster())
                .map_err(|e| data_err("evaluate", format!("forecaster model: {e}")))?;
            let gps = GpsModel::load(&paths.gps())
                .map_err(|e| data_err("evaluate", format!("density model: {e}")))?;
            let policy_gps = PolicyModel::load(&paths.policy(true))
                .map_err(|e| data_err("evaluate", format!("policy model: {e}")))?;
            let policy_nogps = PolicyModel::load(&paths.policy(false))
                .map_err(|e| data_err("evaluate", format!("unconstrained policy model: {e}")))?;
            let test =
                pipeline::stage_samples(&cfg, &data.test, &forecaster, &catalog, Some(&gps))?;
            let report = pipeline::stage_evaluate(
                &cfg,
                &test,
                &policy_gps,
                &policy_nogps,
                &gps,
                &data.stats,
                &catalog,
                &paths,
            )?;
            println!("{}", serde_json::to_string_pretty(&report.aggregate).expect("aggregate"));
        }
        Cmd::Explain { stay } => {
            let stays = pipeline::load_stays(&catalog, &paths)?;
            let bounds = bounds_or_compute(&stays, &ruleset, &paths);
            let target = stays
                .iter()
                .find(|s| &s.stay_id == stay)
                .cloned()
                .ok_or_else(|| data_err("explain", format!("stay {stay} not in cohort")))?;
            let data = pipeline::split_and_window(&cfg, stays, &bounds)?;
            let forecaster = ForecastModel::load(&paths.forecaster())
                .map_err(|e| data_err("explain", format!("forecaster model: {e}")))?;
            let policy = PolicyModel::load(&paths.policy(true))
                .map_err(|e| data_err("explain", format!("policy model: {e}")))?;
            let window = make_window(&target, &data.stats, &catalog)
                .map_err(|e| data_err("explain", e))?;
            let explanation =
                explain(&policy, &target, &window, &forecaster, &ruleset, &catalog, &data.stats)
                    .map_err(|e| PipelineError {
                        stage: "explain",
                        kind: ErrorKind::Numeric,
                        message: e.to_string(),
                    })?;
            println!("{}", serde_json::to_string_pretty(&explanation).expect("explanation"));
        }
        Cmd::Pipeline => {
            run_pipeline(&cfg, &cli.out)?;
            log::info!("pipeline finished; report at {}", paths.report_json().display());
        }
        Cmd::Search { trials } => {
            search(&cfg, &paths, &catalog, &ruleset, *trials)?;
        }
    }
    Ok(())
}

/// Random search over the policy hyperparameter grids; every trial trains
/// with the density constraint and reports the constrained val objective.
fn search(
    cfg: &AppConfig,
    paths: &Paths,
    catalog: &laborder_core::data::FeatureCatalog,
    ruleset: &laborder_core::rules::RuleSet,
    trials: usize,
) -> Result<(), PipelineError> {
    let stays = pipeline::load_stays(catalog, paths)?;
    let bounds = bounds_or_compute(&stays, ruleset, paths);
    let data = pipeline::split_and_window(cfg, stays, &bounds)?;
    let forecaster = ForecastModel::load(&paths.forecaster())
        .map_err(|e| data_err("search", format!("forecaster model: {e}")))?;
    let gps = GpsModel::load(&paths.gps())
        .map_err(|e| data_err("search", format!("density model: {e}")))?;
    let train = pipeline::stage_samples(cfg, &data.train, &forecaster, catalog, Some(&gps))?;
    let val = pipeline::stage_samples(cfg, &data.val, &forecaster, catalog, Some(&gps))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.0 ^ 0xbead_cafe);
    let pick = |rng: &mut ChaCha8Rng, grid: &[f64]| *grid.choose(rng).expect("non-empty grid");
    let mut results = Vec::new();
    let log_path = paths.out.join("search_results.jsonl");
    let mut log_file = std::fs::File::create(&log_path)
        .map_err(|e| data_err("search", format!("{}: {e}", log_path.display())))?;

    for trial in 0..trials {
        let mut pcfg: PolicyConfig = cfg.policy.clone();
        pcfg.lr = pick(&mut rng, &cfg.policy.lr_grid);
        pcfg.lambda_init = pick(&mut rng, &cfg.policy.lambda_grid);
        pcfg.beta1 = pick(&mut rng, &cfg.policy.beta1_grid);
        pcfg.beta2 = pick(&mut rng, &cfg.policy.beta2_grid);
        pcfg.use_gps = true;
        let mut outcome = cfg.outcome.to_outcome(Mode::Smooth);
        outcome.beta1 = pcfg.beta1;
        outcome.beta2 = pcfg.beta2;
        let (model, _) = train_policy(&train, &val, Some(&gps), &outcome, &pcfg, cfg.seed.0)
            .map_err(|e| PipelineError {
                stage: "search",
                kind: ErrorKind::Numeric,
                message: e.to_string(),
            })?;
        let objective = model.meta.as_ref().map(|m| m.val_objective).unwrap_or(f64::NAN);
        let record = serde_json::json!({
            "trial": trial,
            "lr": pcfg.lr,
            "lambda_init": pcfg.lambda_init,
            "beta1": pcfg.beta1,
            "beta2": pcfg.beta2,
            "val_objective": objective,
        });
        use std::io::Write;
        writeln!(log_file, "{record}")
            .map_err(|e| data_err("search", format!("{}: {e}", log_path.display())))?;
        log::info!("trial {trial}: objective {objective:.3} ({record})");
        results.push((objective, record));
    }
    if let Some((best, record)) = results
        .iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).expect("finite objectives"))
    {
        println!("{}", serde_json::json!({"best_objective": best, "config": record}));
    }
    Ok(())
}
