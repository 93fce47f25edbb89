//! Batch commands behind the `forest-sae` binary.
//!
//! Every command reads one [`RunConfig`] (or a simulation config), writes its
//! outputs under the configured directory and returns what it wrote.

pub mod config;
pub mod report;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{run_spatial_cv, write_cv_outputs, CvRun};
use crate::prediction::{cv_ecdf, predict_stands, write_cv_ecdf, write_stand_draws, write_stand_summaries, StandPPD};
use crate::samplers::{default_priors, fit, read_samples, write_samples, McmcSchedule, ModelData, PosteriorSamples};
use crate::sim::{simulate, write_simulation, SimConfig, SimOutput};

pub use config::{load_sim_config, Overrides, RunConfig};
pub use report::{fit_report, FitReport};

/// Fits the configured model, writes `<out>/samples/` and the fit report.
pub fn cmd_fit(cfg: &RunConfig) -> Result<(PosteriorSamples, FitReport)> {
    cfg.validate(false)?;
    let data = cfg.load_dataset()?;
    let md = cfg.model_data(&data)?;
    let priors = match &cfg.priors {
        Some(p) => p.clone(),
        None => default_priors(&md)?,
    };
    let samples = fit(&md, &priors, &cfg.mcmc.schedule(cfg.seed()?)?)?;
    write_samples(cfg.out.join("samples"), &samples)?;
    let report = fit_report(&samples, &md)?;
    report.write(&cfg.out)?;
    Ok((samples, report))
}

/// Rebuilds the fit report of an existing samples directory.
pub fn cmd_report(cfg: &RunConfig) -> Result<FitReport> {
    cfg.validate(false)?;
    let samples = read_samples(cfg.samples_dir())?;
    let data = cfg.load_dataset()?;
    let scaled = crate::data::transform_outcomes(&data, &samples.transform)?;
    let md = ModelData::from_dataset(&scaled, &samples.spec)?;
    let report = fit_report(&samples, &md)?;
    report.write(&cfg.out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PredictResult {
    pub stands: Vec<StandPPD>,
    /// Stands whose units exceeded the cap, with their block counts.
    pub split: Vec<(String, usize)>,
}

/// Stand-level posterior predictive summaries: `stand_summaries.csv`,
/// `cv_ecdf.csv` and, on request, `stand_draws.csv`.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictResult> {
    cfg.validate(true)?;
    let samples = read_samples(cfg.samples_dir())?;
    let data = cfg.load_dataset()?;
    for name in samples.spec.predictors.iter().flatten() {
        if !data.predictor_names.contains(name) {
            return Err(Error::Validation {
                message: format!("samples use predictor '{name}', absent from the configured schema"),
                row: None,
                column: Some(name.clone()),
            });
        }
    }
    let preds = predict_stands(&samples, &data, &cfg.predict_options()?)?;
    let split = preds
        .iter()
        .filter(|g| g.n_blocks > 1)
        .map(|g| (g.stand.stand_id.clone(), g.n_blocks))
        .collect();
    let stands: Vec<StandPPD> = preds.into_iter().map(|g| g.stand).collect();
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_stand_summaries(cfg.out.join("stand_summaries.csv"), &stands)?;
    write_cv_ecdf(cfg.out.join("cv_ecdf.csv"), &cv_ecdf(&stands)?)?;
    if cfg.predict.export_draws {
        write_stand_draws(cfg.out.join("stand_draws.csv"), &stands)?;
    }
    Ok(PredictResult { stands, split })
}

#[derive(Serialize)]
struct CvMeta<'a> {
    seed: u64,
    k: usize,
    cell_size_m: f64,
    origin_m: [f64; 2],
    n_blocks: usize,
    unblocked: bool,
    schedule: &'a McmcSchedule,
    notes: [&'a str; 3],
}

/// Blocked cross-validation of every configured model, written as
/// `cv_report.csv`, `cv_corr.csv`, `cv_folds.csv`, `cv_audit.csv`,
/// `cv_status.csv` and `cv_meta.json`.
pub fn cmd_cv(cfg: &RunConfig) -> Result<CvRun> {
    cfg.validate(false)?;
    let data = cfg.load_dataset()?;
    let opts = cfg.cv_options()?;
    let run = run_spatial_cv(&data, &cfg.cv_models(), &opts)?;
    write_cv_outputs(&cfg.out, &data, &run)?;
    let meta = CvMeta {
        seed: opts.seed,
        k: opts.k,
        cell_size_m: opts.cell_size,
        origin_m: run.blocking.origin,
        n_blocks: run.blocking.n_blocks(),
        unblocked: opts.unblocked,
        schedule: &opts.schedule,
        notes: [
            "Percent metrics are the metric divided by the mean observed value, times 100",
            "Block-level observations and predictions are plain means over each fold's plots",
            "Fold refit failures are listed in cv_status.csv; their plots are excluded from the metrics",
        ],
    };
    let path = cfg.out.join("cv_meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(run)
}

/// Generates a synthetic dataset into `out`.
pub fn cmd_simulate(cfg: &SimConfig, out: &Path) -> Result<SimOutput> {
    let sim = simulate(cfg)?;
    write_simulation(out, cfg, &sim)?;
    Ok(sim)
}
