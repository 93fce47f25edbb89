//! Spatially blocked cross-validation, predictive metrics, Bayesian R² and
//! the posterior predictive distribution of the among-outcome correlation
//! matrix.

mod blocking;

pub use blocking::{assign_hex_blocks, bbox_origin, make_folds, singleton_blocks, FoldAssignment, HexBlocking};

use std::path::Path;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{distance, stem_density, transform_outcomes, Dataset, Outcome, OutcomeTransform, PlotObservation};
use crate::error::{Error, Result};
use crate::prediction::{
    predict_groups, quantile_sorted, reported_outcomes, NAggregation, PredictOptions, PredictionGroup, StandPPD, UnitPPD,
};
use crate::rng;
use crate::samplers::{self, default_priors, Family, McmcSchedule, ModelData, ModelSpec, PosteriorSamples, PriorSpec, Variant};

/// Predictive accuracy for one outcome at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub bias: f64,
    pub bias_pct: f64,
    pub rmspe: f64,
    pub rmspe_pct: f64,
    pub coverage95_pct: f64,
    pub ci_width95: f64,
}

/// Scores posterior predictive draws (`ppd[i]` holds the draws for target
/// `i`) against observations. The point prediction is the PPD mean and the
/// percentages are relative to the mean observation.
pub fn cv_metrics(observed: &[f64], ppd: &[Vec<f64>]) -> Result<MetricRow> {
    if observed.is_empty() || observed.len() != ppd.len() {
        return Err(Error::validation(format!(
            "{} observations for {} predictive distributions",
            observed.len(),
            ppd.len()
        )));
    }
    let n = observed.len() as f64;
    let (mut bias, mut sq, mut covered, mut width) = (0.0, 0.0, 0usize, 0.0);
    for (y, draws) in observed.iter().zip(ppd) {
        if draws.is_empty() {
            return Err(Error::validation("empty predictive distribution"));
        }
        let yhat = draws.iter().sum::<f64>() / draws.len() as f64;
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975));
        bias += yhat - y;
        sq += (yhat - y).powi(2);
        covered += usize::from(*y >= lo && *y <= hi);
        width += hi - lo;
    }
    let mean_y = observed.iter().sum::<f64>() / n;
    let bias = bias / n;
    let rmspe = (sq / n).sqrt();
    Ok(MetricRow {
        n: observed.len(),
        bias,
        bias_pct: 100.0 * bias / mean_y,
        rmspe,
        rmspe_pct: 100.0 * rmspe / mean_y,
        coverage95_pct: 100.0 * covered as f64 / n,
        ci_width95: width / n,
    })
}

/// Median and central 95% interval of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn of(draws: &[f64]) -> Self {
        let mut s = draws.to_vec();
        s.sort_by(f64::total_cmp);
        Interval {
            median: quantile_sorted(&s, 0.5),
            lower: quantile_sorted(&s, 0.025),
            upper: quantile_sorted(&s, 0.975),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `R²(t) = V_fit(t) / (V_fit(t) + V_res(t))` with `V_fit` the variance of
/// the fitted values across plots.
pub fn bayesian_r2_draws(fitted: &[Vec<f64>], residual_var: &[f64]) -> Result<Vec<f64>> {
    if fitted.len() != residual_var.len() {
        return Err(Error::validation("fitted and residual-variance draw counts differ"));
    }
    Ok(fitted
        .iter()
        .zip(residual_var)
        .map(|(f, v)| {
            let vf = sample_variance(f);
            vf / (vf + v)
        })
        .collect())
}

/// Bayesian R² draws for every outcome of a fitted model. Fitted values
/// include the latent field for the spatial families.
pub fn bayesian_r2(samples: &PosteriorSamples, data: &ModelData) -> Result<Vec<Vec<f64>>> {
    let m = samples.m();
    let n = data.n();
    let offsets = samples.beta_offsets();
    (0..m)
        .map(|q| {
            let x = &data.x[q];
            let mut fitted = Vec::with_capacity(samples.n_draws());
            let mut resid = Vec::with_capacity(samples.n_draws());
            for (t, d) in samples.draws.iter().enumerate() {
                let f: Vec<f64> = (0..n)
                    .map(|i| {
                        let xb: f64 = (0..x.ncols()).map(|j| x[(i, j)] * d.beta[offsets[q] + j]).sum();
                        xb + if d.w.is_empty() { 0.0 } else { d.w[i * m + q] }
                    })
                    .collect();
                fitted.push(f);
                resid.push(samples.residual_cov(t)[(q, q)]);
            }
            bayesian_r2_draws(&fitted, &resid)
        })
        .collect()
}

/// Pearson correlation matrix of the columns of `rows` (`n × k`), row-major.
pub fn correlation_matrix(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::validation(format!("need at least 3 locations for a correlation, got {n}")));
    }
    let k = rows[0].len();
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; k * k];
    for r in rows {
        for a in 0..k {
            for b in 0..=a {
                cov[a * k + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let sd: Vec<f64> = (0..k).map(|a| cov[a * k + a].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Numerical("constant column in correlation input".into()));
    }
    let mut out = vec![0.0; k * k];
    for a in 0..k {
        out[a * k + a] = 1.0;
        for b in 0..a {
            let v = (cov[a * k + b] / (sd[a] * sd[b])).clamp(-1.0, 1.0);
            out[a * k + b] = v;
            out[b * k + a] = v;
        }
    }
    Ok(out)
}

/// Unit diagonal, entries in `[−1, 1]` and no eigenvalue below `−1e-10`.
pub fn is_correlation_matrix(k: usize, c: &[f64]) -> bool {
    let m = Mat::from_fn(k, k, |i, j| c[i * k + j]);
    let shape = (0..k).all(|i| c[i * k + i] == 1.0 && (0..k).all(|j| c[i * k + j].abs() <= 1.0 && c[i * k + j] == c[j * k + i]));
    shape
        && m.self_adjoint_eigenvalues(Side::Lower)
            .map(|ev| ev.iter().all(|&e| e >= -1e-10))
            .unwrap_or(false)
}

/// One off-diagonal entry of the correlation PPD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrPair {
    pub a: Outcome,
    pub b: Outcome,
    pub post_mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub empirical: f64,
    pub contained: bool,
}

impl CorrPair {
    pub fn label(&self) -> String {
        format!("{}-{}", self.a, self.b)
    }
}

/// Posterior predictive distribution of the among-outcome correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrPPD {
    pub outcomes: Vec<Outcome>,
    /// Row-major `k × k` matrix per draw.
    pub draws: Vec<Vec<f64>>,
    pub pairs: Vec<CorrPair>,
}

impl CorrPPD {
    pub fn pair(&self, a: Outcome, b: Outcome) -> Option<&CorrPair> {
        self.pairs.iter().find(|p| (p.a, p.b) == (a, b) || (p.a, p.b) == (b, a))
    }
}

/// `ppd[i]` is the `T × k` draw matrix at location `i`, `observed[i]` its `k`
/// observed outcomes. Draw `t` of the result is the correlation across
/// locations of the draw-`t` predictions.
pub fn correlation_ppd(outcomes: &[Outcome], ppd: &[Vec<Vec<f64>>], observed: &[Vec<f64>]) -> Result<CorrPPD> {
    let k = outcomes.len();
    if ppd.len() != observed.len() {
        return Err(Error::validation("predictions and observations cover different locations"));
    }
    let empirical = correlation_matrix(observed)?;
    let t_len = ppd[0].len();
    if ppd.iter().any(|p| p.len() != t_len || p.iter().any(|r| r.len() != k)) {
        return Err(Error::validation("predictive draws are not aligned"));
    }
    let draws = (0..t_len)
        .map(|t| {
            let rows: Vec<Vec<f64>> = ppd.iter().map(|p| p[t].clone()).collect();
            let c = correlation_matrix(&rows)?;
            if !is_correlation_matrix(k, &c) {
                return Err(Error::Numerical(format!("draw {t} is not a valid correlation matrix")));
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let vals: Vec<f64> = draws.iter().map(|c| c[a * k + b]).collect();
            let iv = Interval::of(&vals);
            let e = empirical[a * k + b];
            pairs.push(CorrPair {
                a: outcomes[a],
                b: outcomes[b],
                post_mean: vals.iter().sum::<f64>() / vals.len() as f64,
                q025: iv.lower,
                q975: iv.upper,
                empirical: e,
                contained: iv.contains(e),
            });
        }
    }
    Ok(CorrPPD {
        outcomes: outcomes.to_vec(),
        draws,
        pairs,
    })
}

/// One family × predictor-set combination to cross-validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvModel {
    pub family: Family,
    pub variant: Variant,
}

impl CvModel {
    /// All eight family × variant combinations.
    pub fn all() -> Vec<CvModel> {
        Family::ALL
            .iter()
            .flat_map(|&family| Variant::ALL.iter().map(move |&variant| CvModel { family, variant }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    /// Hex flat-to-flat width, m.
    pub cell_size: f64,
    /// Hex grid origin; the plots' bounding-box corner when absent.
    pub origin: Option<[f64; 2]>,
    pub seed: u64,
    /// Sampling schedule; its seed is replaced per fold.
    pub schedule: McmcSchedule,
    /// Priors for every fold; defaults are derived from each fold's
    /// training data when absent.
    pub priors: Option<PriorSpec>,
    pub transform: OutcomeTransform,
    /// One block per plot instead of hex blocks.
    pub unblocked: bool,
    pub n_aggregation: NAggregation,
}

impl CvOptions {
    pub fn new(seed: u64) -> Self {
        CvOptions {
            k: 20,
            cell_size: 250.0,
            origin: None,
            seed,
            schedule: McmcSchedule::standard(seed),
            priors: None,
            transform: OutcomeTransform::log(),
            unblocked: false,
            n_aggregation: NAggregation::Unit,
        }
    }
}

/// Held-out distance audit of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub n_test: usize,
    pub n_train: usize,
    /// Smallest distance from a held-out plot to a training plot, m.
    pub min_plot_distance: f64,
    /// Smallest distance from a held-out block center to a training plot, m.
    pub min_center_distance: f64,
}

/// Status of one fold refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStatus {
    pub fold: usize,
    pub error: Option<String>,
}

/// Level at which predictions are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Block,
    Unit,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Block => "block",
            Level::Unit => "unit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvMetric {
    pub outcome: Outcome,
    pub level: Level,
    pub row: MetricRow,
}

/// Cross-validation result of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCv {
    pub model: CvModel,
    pub metrics: Vec<CvMetric>,
    pub corr: Option<CorrPPD>,
    pub folds: Vec<FoldStatus>,
}

impl ModelCv {
    pub fn metric(&self, outcome: Outcome, level: Level) -> Option<&MetricRow> {
        self.metrics
            .iter()
            .find(|m| m.outcome == outcome && m.level == level)
            .map(|m| &m.row)
    }

    pub fn complete(&self) -> bool {
        self.folds.iter().all(|f| f.error.is_none())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRun {
    pub blocking: HexBlocking,
    pub folds: FoldAssignment,
    pub audit: Vec<FoldAudit>,
    pub models: Vec<ModelCv>,
}

struct FoldResult {
    test: Vec<usize>,
    stand: StandPPD,
    units: Vec<UnitPPD>,
}

/// Observed value of a reported outcome on a plot (N derived when absent).
fn observed(p: &PlotObservation, o: Outcome) -> Result<f64> {
    match (p.outcomes.get(&o), o) {
        (Some(v), _) => Ok(*v),
        (None, Outcome::N) => match (p.outcomes.get(&Outcome::Ba), p.outcomes.get(&Outcome::Qmd)) {
            (Some(&ba), Some(&qmd)) => Ok(stem_density(ba, qmd)),
            _ => Err(Error::validation(format!("plot '{}' lacks BA and QMD", p.plot_id))),
        },
        (None, _) => Err(Error::validation(format!("plot '{}' lacks {o}", p.plot_id))),
    }
}

fn fold_audit(data: &Dataset, blocking: &HexBlocking, plot_folds: &[usize], fold: usize) -> FoldAudit {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n_plots()).partition(|&i| plot_folds[i] == fold);
    let to_train = |c: [f64; 2]| {
        train
            .iter()
            .map(|&j| distance(c, data.plots[j].coords))
            .fold(f64::INFINITY, f64::min)
    };
    let min_plot_distance = test.iter().map(|&i| to_train(data.plots[i].coords)).fold(f64::INFINITY, f64::min);
    let min_center_distance = if blocking.cell_size.is_finite() {
        let mut blocks: Vec<usize> = test.iter().map(|&i| blocking.block_of[i]).collect();
        blocks.dedup();
        blocks.iter().map(|&b| to_train(blocking.center(b))).fold(f64::INFINITY, f64::min)
    } else {
        f64::NAN
    };
    FoldAudit {
        fold,
        n_test: test.len(),
        n_train: train.len(),
        min_plot_distance,
        min_center_distance,
    }
}

fn cv_fold(
    data: &Dataset,
    model: CvModel,
    outcomes: &[Outcome],
    test: &[usize],
    fold: usize,
    opts: &CvOptions,
) -> Result<FoldResult> {
    let train: Vec<usize> = (0..data.n_plots()).filter(|i| !test.contains(i)).collect();
    let train_data = transform_outcomes(&data.subset_plots(&train), &opts.transform)?;
    let spec = ModelSpec::with_variant(model.family, outcomes.to_vec(), model.variant, &data.predictor_names)?;
    let md = ModelData::from_dataset(&train_data, &spec)?;
    let priors = match &opts.priors {
        Some(p) => p.clone(),
        None => default_priors(&md)?,
    };
    let label = format!("cv/{}/{}", model.family, model.variant);
    let schedule = McmcSchedule {
        seed: rng::derive_seed(opts.seed, &format!("{label}/fold{fold}")),
        ..opts.schedule.clone()
    };
    let samples = samplers::fit(&md, &priors, &schedule)?;
    let units: Vec<_> = test
        .iter()
        .map(|&i| {
            let p = &data.plots[i];
            crate::data::PredictionUnit {
                unit_id: p.plot_id.clone(),
                stand_id: format!("fold{fold}"),
                coords: p.coords,
                area: 1.0,
                predictors: p.predictors.clone(),
            }
        })
        .collect();
    let refs: Vec<_> = units.iter().collect();
    let group = PredictionGroup::from_units(&format!("fold{fold}"), &refs, &data.predictor_names, &spec)?;
    let popts = PredictOptions {
        seed: opts.seed,
        unit_cap: usize::MAX,
        n_aggregation: opts.n_aggregation,
        keep_unit_draws: true,
        stream_prefix: format!("{label}/predict"),
    };
    let mut pred = predict_groups(&samples, &[group], &popts)?;
    let g = pred.pop().expect("one group");
    Ok(FoldResult {
        test: test.to_vec(),
        stand: g.stand,
        units: g.units.expect("unit draws kept"),
    })
}

/// Refits every model on each fold's training plots and scores joint
/// predictions of the held-out plots, both per plot and as a fold mean.
/// A fold whose refit fails is recorded and left out of the scores.
pub fn run_spatial_cv(data: &Dataset, models: &[CvModel], opts: &CvOptions) -> Result<CvRun> {
    let outcomes: Vec<Outcome> = Outcome::MODELED
        .iter()
        .copied()
        .filter(|o| data.outcome_names.contains(o))
        .collect();
    if outcomes.is_empty() {
        return Err(Error::validation("plots carry no modeled outcome"));
    }
    let blocking = if opts.unblocked {
        singleton_blocks(&data.plots)
    } else {
        assign_hex_blocks(&data.plots, opts.cell_size, opts.origin)?
    };
    let folds = make_folds(&blocking, opts.k, opts.seed)?;
    let plot_folds = folds.plot_folds(&blocking);
    let max_p = if models.iter().any(|m| m.variant == Variant::AllPredictors) {
        data.predictor_names.len() + 1
    } else {
        1
    };
    for f in 1..=opts.k {
        let n_train = plot_folds.iter().filter(|&&x| x != f).count();
        if n_train < max_p + 2 {
            return Err(Error::Config(format!("fold {f} leaves only {n_train} training plots")));
        }
    }
    let audit: Vec<FoldAudit> = (1..=opts.k).map(|f| fold_audit(data, &blocking, &plot_folds, f)).collect();
    let tests: Vec<Vec<usize>> = (1..=opts.k).map(|f| folds.test_indices(&blocking, f)).collect();

    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (0..opts.k).map(move |f| (m, f))).collect();
    let mut results: Vec<Result<FoldResult>> = jobs
        .par_iter()
        .map(|&(m, f)| cv_fold(data, models[m], &outcomes, &tests[f], f + 1, opts))
        .collect();

    let mut out = Vec::with_capacity(models.len());
    let mut iter = results.drain(..);
    for &model in models {
        let fold_results: Vec<Result<FoldResult>> = iter.by_ref().take(opts.k).collect();
        out.push(score_model(data, model, &outcomes, fold_results)?);
    }
    Ok(CvRun {
        blocking,
        folds,
        audit,
        models: out,
    })
}

fn score_model(data: &Dataset, model: CvModel, outcomes: &[Outcome], results: Vec<Result<FoldResult>>) -> Result<ModelCv> {
    let spec = ModelSpec::with_variant(model.family, outcomes.to_vec(), model.variant, &data.predictor_names)?;
    let reported = reported_outcomes(&spec);
    let mut statuses = Vec::new();
    let mut done = Vec::new();
    for (f, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => {
                statuses.push(FoldStatus { fold: f + 1, error: None });
                done.push(res);
            }
            Err(e) => statuses.push(FoldStatus {
                fold: f + 1,
                error: Some(e.to_string()),
            }),
        }
    }
    let mut metrics = Vec::new();
    if done.is_empty() {
        return Ok(ModelCv {
            model,
            metrics,
            corr: None,
            folds: statuses,
        });
    }
    let mut unit_obs: Vec<Vec<f64>> = Vec::new();
    let mut unit_ppd: Vec<Vec<Vec<f64>>> = Vec::new();
    for res in &done {
        for (&i, u) in res.test.iter().zip(&res.units) {
            unit_obs.push(reported.iter().map(|&o| observed(&data.plots[i], o)).collect::<Result<_>>()?);
            unit_ppd.push(u.draws.clone());
        }
    }
    for (k, &o) in reported.iter().enumerate() {
        let block_obs: Vec<f64> = done
            .iter()
            .map(|r| r.test.iter().map(|&i| observed(&data.plots[i], o)).sum::<Result<f64>>().map(|s| s / r.test.len() as f64))
            .collect::<Result<_>>()?;
        let block_ppd: Vec<Vec<f64>> = done.iter().map(|r| r.stand.column(k)).collect();
        metrics.push(CvMetric {
            outcome: o,
            level: Level::Block,
            row: cv_metrics(&block_obs, &block_ppd)?,
        });
        let obs: Vec<f64> = unit_obs.iter().map(|r| r[k]).collect();
        let ppd: Vec<Vec<f64>> = unit_ppd.iter().map(|d| d.iter().map(|r| r[k]).collect()).collect();
        metrics.push(CvMetric {
            outcome: o,
            level: Level::Unit,
            row: cv_metrics(&obs, &ppd)?,
        });
    }
    let corr = if reported.len() >= 2 && unit_obs.len() >= 3 {
        Some(correlation_ppd(&reported, &unit_ppd, &unit_obs)?)
    } else {
        None
    };
    Ok(ModelCv {
        model,
        metrics,
        corr,
        folds: statuses,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `cv_report.csv`, `cv_corr.csv`, `cv_folds.csv`, `cv_audit.csv` and
/// `cv_status.csv` into `dir`.
pub fn write_cv_outputs(dir: impl AsRef<Path>, data: &Dataset, run: &CvRun) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let f = |v: f64| v.to_string();

    let report = run.models.iter().flat_map(|m| {
        m.metrics.iter().map(move |c| {
            let r = &c.row;
            vec![
                m.model.family.to_string(),
                m.model.variant.to_string(),
                c.outcome.to_string(),
                c.level.name().to_string(),
                r.n.to_string(),
                f(r.bias),
                f(r.bias_pct),
                f(r.rmspe),
                f(r.rmspe_pct),
                f(r.coverage95_pct),
                f(r.ci_width95),
            ]
        })
    });
    write_rows(
        &dir.join("cv_report.csv"),
        &["model", "variant", "outcome", "level", "n", "bias", "bias_pct", "rmspe", "rmspe_pct", "coverage95_pct", "ci_width95"],
        report,
    )?;

    let corr = run.models.iter().flat_map(|m| {
        m.corr.iter().flat_map(move |c| {
            c.pairs.iter().map(move |p| {
                vec![
                    m.model.family.to_string(),
                    m.model.variant.to_string(),
                    p.label(),
                    f(p.post_mean),
                    f(p.q025),
                    f(p.q975),
                    f(p.empirical),
                    p.contained.to_string(),
                ]
            })
        })
    });
    write_rows(
        &dir.join("cv_corr.csv"),
        &["model", "variant", "pair", "post_mean", "q2.5", "q97.5", "empirical", "contained"],
        corr,
    )?;

    let plot_folds = run.folds.plot_folds(&run.blocking);
    let folds = data
        .plots
        .iter()
        .enumerate()
        .map(|(i, p)| vec![p.plot_id.clone(), run.blocking.block_of[i].to_string(), plot_folds[i].to_string()]);
    write_rows(&dir.join("cv_folds.csv"), &["plot_id", "block_id", "fold"], folds)?;

    let audit = run.audit.iter().map(|a| {
        vec![
            a.fold.to_string(),
            a.n_test.to_string(),
            a.n_train.to_string(),
            f(a.min_plot_distance),
            f(a.min_center_distance),
        ]
    });
    write_rows(
        &dir.join("cv_audit.csv"),
        &["fold", "n_test", "n_train", "min_plot_distance_m", "min_center_distance_m"],
        audit,
    )?;

    let status = run.models.iter().flat_map(|m| {
        m.folds.iter().map(move |s| {
            vec![
                m.model.family.to_string(),
                m.model.variant.to_string(),
                s.fold.to_string(),
                if s.error.is_some() { "failed" } else { "ok" }.to_string(),
                s.error.clone().unwrap_or_default(),
            ]
        })
    });
    write_rows(&dir.join("cv_status.csv"), &["model", "variant", "fold", "status", "error"], status)
}
