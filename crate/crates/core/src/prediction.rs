//! Posterior predictive draws at prediction units and their area-weighted
//! aggregation to stands.
//!
//! Units of one stand are predicted jointly: for every retained posterior
//! draw the latent field is sampled at all of the stand's units at once from
//! its Gaussian conditional given the field at the plots, so the stand-mean
//! draws carry the within-stand spatial dependence.

use std::fs;
use std::path::Path;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stem_density, Dataset, Outcome, OutcomeTransform, PredictionUnit};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::rng::{self, Rng};
use crate::samplers::{design_row, to_km, ModelSpec, PosteriorSamples};
use crate::spatial::{conditional_gaussian_factored, distance_matrix, lmc_cov_from_distances, lmc_cross_cov, LmcSpec};

/// Default largest number of units predicted in one joint draw.
pub const DEFAULT_UNIT_CAP: usize = 4000;

/// Step of the CV grid used for the ECDF, percent.
pub const CV_GRID_STEP: f64 = 0.5;
pub const CV_GRID_MAX: f64 = 100.0;

/// Where the stem density is derived when aggregating to a stand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NAggregation {
    /// Derive N per unit and draw, then average like the other outcomes.
    #[default]
    Unit,
    /// Derive N from the stand-mean BA and QMD draws.
    Stand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub seed: u64,
    pub unit_cap: usize,
    pub n_aggregation: NAggregation,
    /// Keep every unit's draws in the output.
    pub keep_unit_draws: bool,
    /// Substream label prefix; each group uses `<prefix>/<group id>`.
    pub stream_prefix: String,
}

impl PredictOptions {
    pub fn new(seed: u64) -> Self {
        PredictOptions {
            seed,
            unit_cap: DEFAULT_UNIT_CAP,
            n_aggregation: NAggregation::Unit,
            keep_unit_draws: false,
            stream_prefix: "predict/stand".into(),
        }
    }
}

/// Outcomes reported for a model: the modeled ones plus N when both BA and
/// QMD are modeled.
pub fn reported_outcomes(spec: &ModelSpec) -> Vec<Outcome> {
    let mut out = spec.outcomes.clone();
    if spec.outcomes.contains(&Outcome::Ba) && spec.outcomes.contains(&Outcome::Qmd) {
        out.push(Outcome::N);
    }
    out
}

/// Units of one stand (or any other group predicted jointly).
#[derive(Debug, Clone)]
pub struct PredictionGroup {
    pub id: String,
    pub unit_ids: Vec<String>,
    pub coords_km: Vec<[f64; 2]>,
    pub areas: Vec<f64>,
    /// One `units × p_q` design matrix per modeled outcome.
    pub x: Vec<Mat<f64>>,
}

impl PredictionGroup {
    /// Builds a group from units whose predictors follow `predictor_names`.
    pub fn from_units(id: &str, units: &[&PredictionUnit], predictor_names: &[String], spec: &ModelSpec) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::validation(format!("stand '{id}' has no prediction units")));
        }
        let mut x = Vec::with_capacity(spec.m());
        for preds in &spec.predictors {
            let rows: Vec<Vec<f64>> = units
                .iter()
                .map(|u| design_row(preds, predictor_names, &u.predictors))
                .collect::<Result<_>>()?;
            x.push(Mat::from_fn(rows.len(), preds.len() + 1, |i, j| rows[i][j]));
        }
        Ok(PredictionGroup {
            id: id.to_string(),
            unit_ids: units.iter().map(|u| u.unit_id.clone()).collect(),
            coords_km: units.iter().map(|u| to_km(u.coords)).collect(),
            areas: units.iter().map(|u| u.area).collect(),
            x,
        })
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    fn block(&self, range: std::ops::Range<usize>) -> (Vec<[f64; 2]>, Vec<Mat<f64>>) {
        let coords = self.coords_km[range.clone()].to_vec();
        let x = self
            .x
            .iter()
            .map(|xq| xq.subrows(range.start, range.len()).to_owned())
            .collect();
        (coords, x)
    }
}

/// One group per stand, in first-appearance order of the units.
pub fn stand_groups(data: &Dataset, spec: &ModelSpec) -> Result<Vec<PredictionGroup>> {
    data.stand_ids()
        .iter()
        .map(|id| {
            let units: Vec<&PredictionUnit> = data.units.iter().filter(|u| &u.stand_id == id).collect();
            PredictionGroup::from_units(id, &units, &data.predictor_names, spec)
        })
        .collect()
}

/// Quantities of one posterior draw shared by every group.
pub struct DrawContext<'a> {
    samples: &'a PosteriorSamples,
    t: usize,
    lmc: Option<LmcSpec>,
    chol_oo: Option<Chol>,
    resid_factor: Mat<f64>,
}

impl<'a> DrawContext<'a> {
    /// `dist_oo` is the plot distance matrix in km; it is computed when absent.
    pub fn new(samples: &'a PosteriorSamples, t: usize, dist_oo: Option<MatRef<'_, f64>>) -> Result<Self> {
        if t >= samples.n_draws() {
            return Err(Error::Domain(format!("draw {t} out of range ({} draws)", samples.n_draws())));
        }
        let lmc = samples.lmc(t);
        let chol_oo = match &lmc {
            Some(l) => {
                let owned;
                let dist = match dist_oo {
                    Some(d) => d,
                    None => {
                        owned = distance_matrix(&samples.coords_km);
                        owned.as_ref()
                    }
                };
                Some(Chol::factor_jittered(lmc_cov_from_distances(dist, l).as_ref())?)
            }
            None => None,
        };
        let resid = samples.residual_cov(t);
        let resid_factor = linalg::psd_factor(resid.as_ref(), 1e-8 * mean_diag(resid.as_ref()))?;
        Ok(DrawContext {
            samples,
            t,
            lmc,
            chol_oo,
            resid_factor,
        })
    }

    /// One joint draw of the latent field at `targets` (km) given the field
    /// at the plots, stacked location-major (`i·m + q`).
    pub fn sample_w_star(&self, targets: &[[f64; 2]], rng: &mut Rng) -> Result<Vec<f64>> {
        let (Some(lmc), Some(chol)) = (&self.lmc, &self.chol_oo) else {
            return Err(Error::Config(format!(
                "{} has no latent spatial field to predict",
                self.samples.spec.family
            )));
        };
        if targets.is_empty() {
            return Err(Error::validation("no prediction targets"));
        }
        let c_po = lmc_cross_cov(targets, &self.samples.coords_km, lmc);
        let c_pp = lmc_cov_from_distances(distance_matrix(targets).as_ref(), lmc);
        let (mean, cov) = conditional_gaussian_factored(chol, c_po.as_ref(), c_pp.as_ref(), &self.samples.draws[self.t].w)?;
        let f = linalg::psd_factor(cov.as_ref(), 1e-8 * mean_diag(c_pp.as_ref()))?;
        let z = linalg::std_normals(mean.len(), rng);
        Ok(mean.iter().zip(linalg::mul(f.as_ref(), &z)).map(|(m, e)| m + e).collect())
    }

    /// `X*β + w* + ε` on the model scale, stacked location-major. `x` holds
    /// one design matrix per outcome; `w_star` is required exactly for the
    /// spatial families.
    pub fn sample_y_star(&self, x: &[Mat<f64>], w_star: Option<&[f64]>, rng: &mut Rng) -> Result<Vec<f64>> {
        let m = self.samples.m();
        if x.len() != m {
            return Err(Error::validation(format!("expected {m} design matrices, got {}", x.len())));
        }
        let u = x[0].nrows();
        let offsets = self.samples.beta_offsets();
        let beta = &self.samples.draws[self.t].beta;
        for (q, xq) in x.iter().enumerate() {
            if xq.nrows() != u || xq.ncols() != offsets[q + 1] - offsets[q] {
                return Err(Error::validation(format!(
                    "design for {} does not match the fitted coefficients",
                    self.samples.spec.outcomes[q]
                )));
            }
        }
        match (self.lmc.is_some(), w_star) {
            (true, Some(w)) if w.len() == u * m => {}
            (false, None) => {}
            _ => return Err(Error::validation("latent draw does not match the model family or unit count")),
        }
        let mut out = vec![0.0; u * m];
        for i in 0..u {
            let z = linalg::std_normals(m, rng);
            let eps = linalg::mul(self.resid_factor.as_ref(), &z);
            for q in 0..m {
                let xb: f64 = (0..x[q].ncols()).map(|j| x[q][(i, j)] * beta[offsets[q] + j]).sum();
                let w = w_star.map_or(0.0, |w| w[i * m + q]);
                out[i * m + q] = xb + w + eps[q];
            }
        }
        Ok(out)
    }
}

fn mean_diag(c: MatRef<'_, f64>) -> f64 {
    let n = c.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| c[(i, i)]).sum::<f64>() / n as f64
}

/// Model-scale values of one outcome back on the original scale. No bias
/// correction is applied.
pub fn back_transform(values: &[f64], outcome: Outcome, transform: &OutcomeTransform) -> Vec<f64> {
    values.iter().map(|&v| transform.inverse(outcome, v)).collect()
}

/// Stem-density draws from paired BA and QMD draws.
pub fn derive_n_ppd(ba: &[f64], qmd: &[f64]) -> Result<Vec<f64>> {
    if ba.len() != qmd.len() {
        return Err(Error::validation(format!(
            "BA and QMD draw counts differ ({} vs {})",
            ba.len(),
            qmd.len()
        )));
    }
    ba.iter()
        .zip(qmd)
        .map(|(&b, &d)| crate::data::derive_stem_density(b, d))
        .collect()
}

/// Posterior predictive draws of one unit, original scale, `T × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPPD {
    pub unit_id: String,
    pub outcomes: Vec<Outcome>,
    pub draws: Vec<Vec<f64>>,
}

impl UnitPPD {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

/// Posterior summary of one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub mean: f64,
    pub sd: f64,
    pub cv_pct: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics (`h = (n − 1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(draws: &[f64]) -> OutcomeSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    OutcomeSummary {
        mean,
        sd,
        cv_pct: 100.0 * sd / mean,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// Area-weighted stand-mean draws with their summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct StandPPD {
    pub stand_id: String,
    pub outcomes: Vec<Outcome>,
    /// `T × k`.
    pub draws: Vec<Vec<f64>>,
    pub summaries: Vec<OutcomeSummary>,
}

impl StandPPD {
    pub fn new(stand_id: impl Into<String>, outcomes: Vec<Outcome>, draws: Vec<Vec<f64>>) -> Self {
        let summaries = (0..outcomes.len())
            .map(|k| summarize(&draws.iter().map(|d| d[k]).collect::<Vec<_>>()))
            .collect();
        StandPPD {
            stand_id: stand_id.into(),
            outcomes,
            draws,
            summaries,
        }
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }

    /// Replaces the N column by N derived from the stand-mean BA and QMD.
    pub fn rederive_n(self) -> Result<Self> {
        let pos = |o: Outcome| self.outcomes.iter().position(|&x| x == o);
        let (Some(kn), Some(kb), Some(kq)) = (pos(Outcome::N), pos(Outcome::Ba), pos(Outcome::Qmd)) else {
            return Ok(self);
        };
        let n = derive_n_ppd(&self.column(kb), &self.column(kq))?;
        let mut draws = self.draws;
        for (d, v) in draws.iter_mut().zip(n) {
            d[kn] = v;
        }
        Ok(StandPPD::new(self.stand_id, self.outcomes, draws))
    }
}

/// Per-draw weighted mean of unit draws with weights `area / Σ area`.
pub fn aggregate_stand(stand_id: &str, units: &[UnitPPD], areas: &[f64]) -> Result<StandPPD> {
    let Some(first) = units.first() else {
        return Err(Error::validation(format!("stand '{stand_id}' has no prediction units")));
    };
    if areas.len() != units.len() {
        return Err(Error::validation(format!("stand '{stand_id}': {} areas for {} units", areas.len(), units.len())));
    }
    if let Some(a) = areas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::validation(format!("stand '{stand_id}': unit area must be positive, got {a}")));
    }
    let t_len = first.draws.len();
    let k = first.outcomes.len();
    if units.iter().any(|u| u.outcomes != first.outcomes || u.draws.len() != t_len) {
        return Err(Error::validation(format!("stand '{stand_id}': unit draws are not aligned")));
    }
    let total: f64 = areas.iter().sum();
    let weights: Vec<f64> = areas.iter().map(|a| a / total).collect();
    let draws = (0..t_len)
        .map(|t| {
            (0..k)
                .map(|j| units.iter().zip(&weights).map(|(u, w)| w * u.draws[t][j]).sum())
                .collect()
        })
        .collect();
    Ok(StandPPD::new(stand_id, first.outcomes.clone(), draws))
}

/// Prediction of one group.
#[derive(Debug, Clone)]
pub struct GroupPrediction {
    pub stand: StandPPD,
    /// Unit draws, kept only on request.
    pub units: Option<Vec<UnitPPD>>,
    /// Number of joint blocks the group was split into (1 unless capped).
    pub n_blocks: usize,
}

struct GroupState {
    rng: Rng,
    /// `[unit][draw][outcome]`.
    draws: Vec<Vec<Vec<f64>>>,
}

/// Joint posterior predictive draws for every group. Each group uses its own
/// substream, so the result does not depend on the number of threads.
pub fn predict_groups(
    samples: &PosteriorSamples,
    groups: &[PredictionGroup],
    opts: &PredictOptions,
) -> Result<Vec<GroupPrediction>> {
    if opts.unit_cap == 0 {
        return Err(Error::Config("unit cap must be positive".into()));
    }
    let outcomes = reported_outcomes(&samples.spec);
    let modeled = &samples.spec.outcomes;
    let m = modeled.len();
    let n_pos = modeled
        .iter()
        .position(|&o| o == Outcome::Ba)
        .zip(modeled.iter().position(|&o| o == Outcome::Qmd))
        .filter(|_| outcomes.contains(&Outcome::N));
    let t_len = samples.n_draws();
    let dist_oo = samples.spec.family.is_spatial().then(|| distance_matrix(&samples.coords_km));

    let mut states: Vec<GroupState> = groups
        .iter()
        .map(|g| GroupState {
            rng: rng::substream(opts.seed, &format!("{}/{}", opts.stream_prefix, g.id)),
            draws: vec![Vec::with_capacity(t_len); g.len()],
        })
        .collect();

    for t in 0..t_len {
        let ctx = DrawContext::new(samples, t, dist_oo.as_ref().map(|d| d.as_ref()))?;
        states
            .par_iter_mut()
            .zip(groups.par_iter())
            .try_for_each(|(state, group)| -> Result<()> {
                for start in (0..group.len()).step_by(opts.unit_cap) {
                    let range = start..(start + opts.unit_cap).min(group.len());
                    let (coords, x) = group.block(range.clone());
                    let w = match ctx.lmc {
                        Some(_) => Some(ctx.sample_w_star(&coords, &mut state.rng)?),
                        None => None,
                    };
                    let y = ctx.sample_y_star(&x, w.as_deref(), &mut state.rng)?;
                    for (i, unit) in range.enumerate() {
                        let mut row: Vec<f64> = (0..m)
                            .map(|q| samples.transform.inverse(modeled[q], y[i * m + q]))
                            .collect();
                        if let Some((kb, kq)) = n_pos {
                            row.push(stem_density(row[kb], row[kq]));
                        }
                        state.draws[unit].push(row);
                    }
                }
                Ok(())
            })?;
    }

    groups
        .iter()
        .zip(states)
        .map(|(g, state)| {
            let units: Vec<UnitPPD> = g
                .unit_ids
                .iter()
                .zip(state.draws)
                .map(|(id, draws)| UnitPPD {
                    unit_id: id.clone(),
                    outcomes: outcomes.clone(),
                    draws,
                })
                .collect();
            let mut stand = aggregate_stand(&g.id, &units, &g.areas)?;
            if opts.n_aggregation == NAggregation::Stand {
                stand = stand.rederive_n()?;
            }
            Ok(GroupPrediction {
                stand,
                units: opts.keep_unit_draws.then_some(units),
                n_blocks: g.len().div_ceil(opts.unit_cap),
            })
        })
        .collect()
}

/// Stand predictions for every stand of `data`'s prediction units.
pub fn predict_stands(samples: &PosteriorSamples, data: &Dataset, opts: &PredictOptions) -> Result<Vec<GroupPrediction>> {
    if data.units.is_empty() {
        return Err(Error::validation("no prediction units"));
    }
    predict_groups(samples, &stand_groups(data, &samples.spec)?, opts)
}

/// ECDF of stand CVs on the grid `0, 0.5, …, 100` percent.
#[derive(Debug, Clone, PartialEq)]
pub struct CvEcdf {
    pub grid: Vec<f64>,
    pub outcomes: Vec<Outcome>,
    /// `[grid point][outcome]`.
    pub values: Vec<Vec<f64>>,
}

impl CvEcdf {
    /// ECDF of `outcome` at `cv_pct` (a grid point).
    pub fn at(&self, outcome: Outcome, cv_pct: f64) -> Option<f64> {
        let k = self.outcomes.iter().position(|&o| o == outcome)?;
        let i = self.grid.iter().position(|g| (g - cv_pct).abs() < 1e-9)?;
        Some(self.values[i][k])
    }
}

pub fn cv_ecdf(stands: &[StandPPD]) -> Result<CvEcdf> {
    let Some(first) = stands.first() else {
        return Err(Error::validation("no stands to summarize"));
    };
    let outcomes = first.outcomes.clone();
    if stands.iter().any(|s| s.outcomes != outcomes) {
        return Err(Error::validation("stands report different outcomes"));
    }
    let steps = (CV_GRID_MAX / CV_GRID_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * CV_GRID_STEP).collect();
    let n = stands.len() as f64;
    let values = grid
        .iter()
        .map(|&g| {
            (0..outcomes.len())
                .map(|k| stands.iter().filter(|s| s.summaries[k].cv_pct <= g + 1e-9).count() as f64 / n)
                .collect()
        })
        .collect();
    Ok(CvEcdf { grid, outcomes, values })
}

/// One row of the stand table.
#[derive(Debug, Clone, PartialEq)]
pub struct StandRow {
    pub stand_id: String,
    pub outcome: Outcome,
    pub summary: OutcomeSummary,
}

fn stand_rows(stands: &[StandPPD]) -> impl Iterator<Item = StandRow> + '_ {
    stands.iter().flat_map(|s| {
        s.outcomes.iter().zip(&s.summaries).map(|(&outcome, &summary)| StandRow {
            stand_id: s.stand_id.clone(),
            outcome,
            summary,
        })
    })
}

/// Stand table (one row per stand and outcome, in stand order) and the
/// ECDF of stand CVs.
pub fn summarize_stands(stands: &[StandPPD]) -> Result<(Vec<StandRow>, CvEcdf)> {
    let ecdf = cv_ecdf(stands)?;
    Ok((stand_rows(stands).collect(), ecdf))
}

/// `stand_summaries.csv`: one row per stand and outcome.
pub fn write_stand_summaries(path: impl AsRef<Path>, stands: &[StandPPD]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["stand_id", "outcome", "mean", "sd", "cv_pct", "q2.5", "q50", "q97.5"])
        .map_err(|e| Error::csv(path, e))?;
    for r in stand_rows(stands) {
        let x = &r.summary;
        let nums = [x.mean, x.sd, x.cv_pct, x.q025, x.q50, x.q975].map(|v| v.to_string());
        let mut rec = vec![r.stand_id, r.outcome.to_string()];
        rec.extend(nums);
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `stand_draws.csv`: one row per stand and draw, one column per outcome.
pub fn write_stand_draws(path: impl AsRef<Path>, stands: &[StandPPD]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let Some(first) = stands.first() else {
        return w.flush().map_err(|e| Error::io(path, e));
    };
    let mut header = vec!["stand_id".to_string(), "draw".to_string()];
    header.extend(first.outcomes.iter().map(|o| o.to_string()));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for s in stands {
        for (t, d) in s.draws.iter().enumerate() {
            let mut rec = vec![s.stand_id.clone(), t.to_string()];
            rec.extend(d.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cv_ecdf.csv`: CV grid point and the fraction of stands at or below it.
pub fn write_cv_ecdf(path: impl AsRef<Path>, ecdf: &CvEcdf) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["cv_pct".to_string()];
    header.extend(ecdf.outcomes.iter().map(|o| o.to_string()));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (g, row) in ecdf.grid.iter().zip(&ecdf.values) {
        let mut rec = vec![g.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
