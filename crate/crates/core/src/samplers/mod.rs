//! MCMC fitting of the four candidate model families.
//!
//! | family           | mean         | spatial term          | residual        |
//! |------------------|--------------|-----------------------|-----------------|
//! | `uni_nonspatial` | `X_q β_q`    | none                  | `N(0, τ²_q)`    |
//! | `uni_spatial`    | `X_q β_q`    | `σ²_q R(φ_q)`         | `N(0, τ²_q)`    |
//! | `mv_nonspatial`  | `X(s) β`     | none                  | `N(0, Ψ)`       |
//! | `mv_spatial`     | `X(s) β`     | LMC `A V(·,·;φ) Aᵀ`   | `N(0, Ψ)`       |
//!
//! Non-spatial families use exact two-block Gibbs samplers. Spatial families
//! integrate out both the latent field and `β` (flat prior), update all
//! covariance parameters jointly by adaptive random-walk Metropolis on an
//! unconstrained scale, then recover `β` and the latent field at the plots by
//! composition sampling for every retained draw.

mod design;
mod dists;
mod io;
mod nonspatial;
mod spatial;

pub use design::{design_row, to_km, ModelData};
pub use dists::{ln_inv_gamma, ln_inv_wishart_chol, sample_inv_gamma, sample_inv_wishart};
pub use io::{param_columns, read_samples, write_samples};
pub use nonspatial::{fit_mv_nonspatial, fit_uni_nonspatial};
pub use spatial::{
    collapsed_loglik, fit_mv_spatial, fit_uni_spatial, marginal_cov, mv_spatial_loglik, uni_spatial_loglik,
};

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::{Outcome, OutcomeTransform};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::spatial::{LmcSpec, LN_20};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    UniNonspatial,
    UniSpatial,
    MvNonspatial,
    MvSpatial,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::UniNonspatial,
        Family::UniSpatial,
        Family::MvNonspatial,
        Family::MvSpatial,
    ];

    pub fn is_spatial(self) -> bool {
        matches!(self, Family::UniSpatial | Family::MvSpatial)
    }

    pub fn is_multivariate(self) -> bool {
        matches!(self, Family::MvNonspatial | Family::MvSpatial)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::UniNonspatial => "uni_nonspatial",
            Family::UniSpatial => "uni_spatial",
            Family::MvNonspatial => "mv_nonspatial",
            Family::MvSpatial => "mv_spatial",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family '{s}'")))
    }
}

/// Predictor set: none (intercept only) or every predictor in the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    InterceptOnly,
    AllPredictors,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::InterceptOnly, Variant::AllPredictors];

    pub fn name(self) -> &'static str {
        match self {
            Variant::InterceptOnly => "intercept_only",
            Variant::AllPredictors => "all_predictors",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Modeled outcomes in block order.
    pub outcomes: Vec<Outcome>,
    /// Predictors per outcome, excluding the implicit intercept.
    pub predictors: Vec<Vec<String>>,
}

impl ModelSpec {
    pub fn new(family: Family, outcomes: Vec<Outcome>, predictors: Vec<Vec<String>>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Config("model needs at least one outcome".into()));
        }
        if predictors.len() != outcomes.len() {
            return Err(Error::Config(format!(
                "{} predictor lists for {} outcomes",
                predictors.len(),
                outcomes.len()
            )));
        }
        if family.is_multivariate() && outcomes.len() < 2 {
            return Err(Error::Config(format!("{family} needs at least 2 outcomes")));
        }
        if outcomes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "outcomes must be distinct and in block order (GSV, QMD, BA, N)".into(),
            ));
        }
        Ok(ModelSpec {
            family,
            outcomes,
            predictors,
        })
    }

    /// Same predictor list for every outcome.
    pub fn with_variant(
        family: Family,
        outcomes: Vec<Outcome>,
        variant: Variant,
        all_predictors: &[String],
    ) -> Result<Self> {
        let preds = match variant {
            Variant::InterceptOnly => Vec::new(),
            Variant::AllPredictors => all_predictors.to_vec(),
        };
        let m = outcomes.len();
        Self::new(family, outcomes, vec![preds; m])
    }

    pub fn m(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of regression coefficients per outcome (intercept included).
    pub fn p_per_outcome(&self) -> Vec<usize> {
        self.predictors.iter().map(|p| p.len() + 1).collect()
    }

    /// Names of the stacked coefficient vector, `beta_<OUTCOME>_<predictor>`.
    pub fn beta_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (o, preds) in self.outcomes.iter().zip(&self.predictors) {
            out.push(format!("beta_{o}_intercept"));
            out.extend(preds.iter().map(|p| format!("beta_{o}_{p}")));
        }
        out
    }
}

/// Prior on one scalar variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariancePrior {
    InverseGamma { shape: f64, scale: f64 },
    /// Parameter held at a known value (validation mode).
    Fixed { value: f64 },
}

impl VariancePrior {
    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            VariancePrior::InverseGamma { shape, scale } if shape > 1.0 && scale > 0.0 => Ok(()),
            VariancePrior::Fixed { value } if value >= 0.0 => Ok(()),
            other => Err(Error::Config(format!("invalid prior for {what}: {other:?}"))),
        }
    }

    /// Starting value for a chain.
    fn initial(&self) -> f64 {
        match *self {
            VariancePrior::InverseGamma { shape, scale } => scale / (shape - 1.0),
            VariancePrior::Fixed { value } => value,
        }
    }
}

/// Prior on an `m×m` covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixPrior {
    /// Inverse-Wishart with mean `scale/(df − m − 1)`; `scale` row-major.
    InverseWishart { df: f64, scale: Vec<f64> },
    /// Matrix constrained diagonal with independent entries.
    Diagonal { entries: Vec<VariancePrior> },
}

impl MatrixPrior {
    fn validate(&self, m: usize, what: &str) -> Result<()> {
        match self {
            MatrixPrior::InverseWishart { df, scale } => {
                if scale.len() != m * m {
                    return Err(Error::Config(format!("{what}: scale must be {m}x{m}")));
                }
                if !(*df > m as f64 + 1.0) {
                    return Err(Error::Config(format!("{what}: inverse-Wishart df must exceed m + 1")));
                }
                Chol::factor(linalg::from_row_major(m, scale).as_ref())
                    .map_err(|_| Error::Config(format!("{what}: scale matrix is not positive definite")))?;
                Ok(())
            }
            MatrixPrior::Diagonal { entries } => {
                if entries.len() != m {
                    return Err(Error::Config(format!("{what}: need {m} diagonal priors")));
                }
                entries.iter().try_for_each(|e| e.validate(what))
            }
        }
    }

    fn initial(&self, m: usize) -> Mat<f64> {
        match self {
            MatrixPrior::InverseWishart { df, scale } => {
                let s = linalg::from_row_major(m, scale);
                let k = df - m as f64 - 1.0;
                Mat::from_fn(m, m, |i, j| s[(i, j)] / k)
            }
            MatrixPrior::Diagonal { entries } => {
                Mat::from_fn(m, m, |i, j| if i == j { entries[i].initial() } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lower: f64,
    pub upper: f64,
}

impl UniformPrior {
    fn validate(&self) -> Result<()> {
        if 0.0 < self.lower && self.lower < self.upper && self.upper.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid decay prior support {self:?}")))
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Priors for one fit. `β` always has a flat prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PriorSpec {
    /// Residual variance per outcome (univariate families).
    #[serde(default)]
    pub tau2: Vec<VariancePrior>,
    /// Spatial variance per outcome (`uni_spatial`).
    #[serde(default)]
    pub sigma2: Vec<VariancePrior>,
    /// Residual covariance `Ψ` (multivariate families).
    #[serde(default)]
    pub psi: Option<MatrixPrior>,
    /// Spatial cross-covariance `AAᵀ` (`mv_spatial`).
    #[serde(default)]
    pub aat: Option<MatrixPrior>,
    /// Decay support per outcome, 1/km (spatial families).
    #[serde(default)]
    pub phi: Vec<UniformPrior>,
}

impl PriorSpec {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let m = spec.m();
        let need = |len: usize, what: &str| -> Result<()> {
            if len == m {
                Ok(())
            } else {
                Err(Error::Config(format!("expected {m} {what} priors, got {len}")))
            }
        };
        match spec.family {
            Family::UniNonspatial => need(self.tau2.len(), "tau2")?,
            Family::UniSpatial => {
                need(self.tau2.len(), "tau2")?;
                need(self.sigma2.len(), "sigma2")?;
            }
            Family::MvNonspatial | Family::MvSpatial => {
                self.psi
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing Psi prior".into()))?
                    .validate(m, "Psi")?;
            }
        }
        if spec.family == Family::MvSpatial {
            self.aat
                .as_ref()
                .ok_or_else(|| Error::Config("missing AAt prior".into()))?
                .validate(m, "AAt")?;
        }
        if spec.family.is_spatial() {
            need(self.phi.len(), "phi")?;
            self.phi.iter().try_for_each(UniformPrior::validate)?;
        }
        self.tau2.iter().try_for_each(|p| p.validate("tau2"))?;
        self.sigma2.iter().try_for_each(|p| p.validate("sigma2"))?;
        Ok(())
    }
}

/// Default inverse-gamma shape: infinite variance with a finite mean.
pub const IG_SHAPE: f64 = 2.0;

/// Vague priors centered on ordinary-least-squares residual variances.
///
/// * variances: `IG(2, v̂)`, prior mean `v̂` (split evenly between `τ²` and
///   `σ²` for `uni_spatial`);
/// * covariance matrices: `IW(m + 2, Ψ̂)`, prior mean `Ψ̂` (again halved
///   between `Ψ` and `AAᵀ` for `mv_spatial`);
/// * decays: `U(ln 20 / d_max, ln 20 / (0.05 d_max))` with `d_max` the largest
///   inter-plot distance, i.e. effective ranges from `0.05 d_max` to `d_max`.
pub fn default_priors(data: &ModelData) -> Result<PriorSpec> {
    let spec = &data.spec;
    let m = spec.m();
    let psi_hat = data.ols_residual_cov()?;
    let v: Vec<f64> = (0..m).map(|q| psi_hat[(q, q)]).collect();
    let ig = |s: f64| VariancePrior::InverseGamma {
        shape: IG_SHAPE,
        scale: s,
    };
    let iw = |factor: f64| {
        let df = m as f64 + 2.0;
        MatrixPrior::InverseWishart {
            df,
            scale: linalg::to_row_major(psi_hat.as_ref())
                .into_iter()
                .map(|x| x * factor * (df - m as f64 - 1.0))
                .collect(),
        }
    };
    let d_max = data.max_distance_km();
    let phi = vec![
        UniformPrior {
            lower: LN_20 / d_max,
            upper: LN_20 / (0.05 * d_max),
        };
        m
    ];
    let priors = match spec.family {
        Family::UniNonspatial => PriorSpec {
            tau2: v.iter().map(|&x| ig(x)).collect(),
            ..Default::default()
        },
        Family::UniSpatial => PriorSpec {
            tau2: v.iter().map(|&x| ig(0.5 * x)).collect(),
            sigma2: v.iter().map(|&x| ig(0.5 * x)).collect(),
            phi,
            ..Default::default()
        },
        Family::MvNonspatial => PriorSpec {
            psi: Some(iw(1.0)),
            ..Default::default()
        },
        Family::MvSpatial => PriorSpec {
            psi: Some(iw(0.5)),
            aat: Some(iw(0.5)),
            phi,
            ..Default::default()
        },
    };
    Ok(priors)
}

/// Batch schedule of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSchedule {
    pub n_batches: usize,
    pub batch_len: usize,
    pub burn_in_frac: f64,
    pub thin: usize,
    /// Target acceptance rate for batch adaptation.
    pub target_accept: f64,
    pub seed: u64,
}

impl McmcSchedule {
    /// 500 batches of 10 iterations, half discarded, thinned by 10: 250 draws.
    pub fn standard(seed: u64) -> Self {
        McmcSchedule {
            n_batches: 500,
            batch_len: 10,
            burn_in_frac: 0.5,
            thin: 10,
            target_accept: 0.43,
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.n_batches * self.batch_len
    }

    pub fn burn_in(&self) -> usize {
        (self.total() as f64 * self.burn_in_frac).floor() as usize
    }

    /// Batches that end inside the burn-in; adaptation happens only there.
    pub fn burn_in_batches(&self) -> usize {
        self.burn_in() / self.batch_len.max(1)
    }

    /// Number of retained draws `T`.
    pub fn n_retained(&self) -> usize {
        (self.total() - self.burn_in()) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_batches == 0 || self.batch_len == 0 || self.thin == 0 {
            return Err(Error::Config("batch count, batch length and thin must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return Err(Error::Config(format!("burn-in fraction {} outside [0, 1)", self.burn_in_frac)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target acceptance {} outside (0, 1)", self.target_accept)));
        }
        let post = self.total() - self.burn_in();
        if self.thin > post {
            return Err(Error::Config(format!(
                "thin {} exceeds the {post} post-burn-in iterations",
                self.thin
            )));
        }
        if self.n_retained() < 2 {
            return Err(Error::Config(format!("schedule retains {} draws; need at least 2", self.n_retained())));
        }
        Ok(())
    }

    /// 0-based iteration indices kept after burn-in and thinning.
    pub fn retained_indices(&self) -> Vec<usize> {
        let burn = self.burn_in();
        (0..self.n_retained()).map(|k| burn + k * self.thin).collect()
    }
}

/// Drops the burn-in and thins a raw chain of `n_batches · batch_len` states.
pub fn postprocess_chain<T: Clone>(raw: &[T], schedule: &McmcSchedule) -> Result<Vec<T>> {
    schedule.validate()?;
    if raw.len() != schedule.total() {
        return Err(Error::Config(format!(
            "chain has {} states, schedule expects {}",
            raw.len(),
            schedule.total()
        )));
    }
    Ok(schedule.retained_indices().into_iter().map(|i| raw[i].clone()).collect())
}

/// Batch-adaptive proposal scales: after batch `b` (1-based) every log
/// proposal sd moves by `±min(0.01, b^{-1/2})` toward the target acceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub log_sd: Vec<f64>,
    pub target: f64,
}

impl ProposalScales {
    pub fn new(dim: usize, sd: f64, target: f64) -> Self {
        ProposalScales {
            log_sd: vec![sd.ln(); dim],
            target,
        }
    }

    pub fn sd(&self, j: usize) -> f64 {
        self.log_sd[j].exp()
    }
}

pub fn adapt_batch(state: &mut ProposalScales, observed_accept_rate: f64, batch_index: usize) {
    let delta = (1.0 / (batch_index.max(1) as f64).sqrt()).min(0.01);
    let step = if observed_accept_rate > state.target { delta } else { -delta };
    for s in &mut state.log_sd {
        *s += step;
    }
}

/// Per-batch acceptance rates of one Metropolis chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLog {
    pub chain: String,
    pub rates: Vec<f64>,
}

/// One retained posterior draw. Matrices are `m×m` row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draw {
    /// Coefficients stacked over outcomes, intercept first.
    pub beta: Vec<f64>,
    /// Per outcome (univariate families).
    pub tau2: Vec<f64>,
    /// Per outcome (`uni_spatial`).
    pub sigma2: Vec<f64>,
    /// Residual covariance (multivariate families).
    pub psi: Vec<f64>,
    /// Lower-triangular coregionalization matrix (`mv_spatial`).
    pub a: Vec<f64>,
    /// Decay per outcome, 1/km (spatial families).
    pub phi: Vec<f64>,
    /// Latent field at the plots, location-major `n·m` (spatial families).
    pub w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub spec: ModelSpec,
    pub priors: PriorSpec,
    pub schedule: McmcSchedule,
    pub transform: OutcomeTransform,
    pub plot_ids: Vec<String>,
    pub coords_km: Vec<[f64; 2]>,
    pub draws: Vec<Draw>,
    pub acceptance: Vec<AcceptanceLog>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    /// Offsets of each outcome's block in the stacked `β`.
    pub fn beta_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for p in self.spec.p_per_outcome() {
            off.push(off.last().unwrap() + p);
        }
        off
    }

    /// Residual covariance of draw `t` (diagonal `τ²` for univariate families).
    pub fn residual_cov(&self, t: usize) -> Mat<f64> {
        let m = self.m();
        let d = &self.draws[t];
        if self.spec.family.is_multivariate() {
            linalg::from_row_major(m, &d.psi)
        } else {
            Mat::from_fn(m, m, |i, j| if i == j { d.tau2[i] } else { 0.0 })
        }
    }

    /// Spatial covariance parameters of draw `t` as an LMC (diagonal `A` for
    /// `uni_spatial`), or `None` for non-spatial families.
    pub fn lmc(&self, t: usize) -> Option<LmcSpec> {
        let m = self.m();
        let d = &self.draws[t];
        match self.spec.family {
            Family::UniSpatial => {
                let a = Mat::from_fn(m, m, |i, j| if i == j { d.sigma2[i].sqrt() } else { 0.0 });
                LmcSpec::new(a, d.phi.clone()).ok()
            }
            Family::MvSpatial => LmcSpec::new(linalg::from_row_major(m, &d.a), d.phi.clone()).ok(),
            _ => None,
        }
    }

    /// Spatial cross-covariance `AAᵀ` (diagonal `σ²` for `uni_spatial`).
    pub fn spatial_cov(&self, t: usize) -> Option<Mat<f64>> {
        self.lmc(t).map(|l| l.aat())
    }

    /// Checks every retained draw against the parameter domains.
    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        let n = self.plot_ids.len();
        let p: usize = self.spec.p_per_outcome().iter().sum();
        let fam = self.spec.family;
        if self.draws.len() != self.schedule.n_retained() {
            return Err(Error::validation(format!(
                "{} draws retained, schedule implies {}",
                self.draws.len(),
                self.schedule.n_retained()
            )));
        }
        for (t, d) in self.draws.iter().enumerate() {
            let bad = |what: &str| Error::validation(format!("draw {t}: {what}"));
            if d.beta.len() != p || d.beta.iter().any(|b| !b.is_finite()) {
                return Err(bad("invalid beta"));
            }
            if !fam.is_multivariate() && (d.tau2.len() != m || d.tau2.iter().any(|v| !(*v >= 0.0))) {
                return Err(bad("tau2 must be non-negative"));
            }
            if fam == Family::UniSpatial && (d.sigma2.len() != m || d.sigma2.iter().any(|v| !(*v > 0.0))) {
                return Err(bad("sigma2 must be positive"));
            }
            if fam.is_multivariate() {
                if d.psi.len() != m * m {
                    return Err(bad("Psi has wrong size"));
                }
                let psi = linalg::from_row_major(m, &d.psi);
                if linalg::max_asymmetry(psi.as_ref()) > 1e-10 || Chol::factor(psi.as_ref()).is_err() {
                    return Err(bad("Psi is not symmetric positive definite"));
                }
            }
            if fam.is_spatial() {
                if d.phi.len() != m {
                    return Err(bad("phi has wrong size"));
                }
                for (q, phi) in d.phi.iter().enumerate() {
                    if !self.priors.phi[q].contains(*phi) {
                        return Err(bad("phi outside prior support"));
                    }
                }
                if d.w.len() != n * m || d.w.iter().any(|v| !v.is_finite()) {
                    return Err(bad("latent field has wrong size or non-finite entries"));
                }
            }
            if fam == Family::MvSpatial && self.lmc(t).is_none() {
                return Err(bad("A is not lower triangular with positive diagonal"));
            }
        }
        Ok(())
    }
}

/// Fits `data.spec.family`.
pub fn fit(data: &ModelData, priors: &PriorSpec, schedule: &McmcSchedule) -> Result<PosteriorSamples> {
    let samples = match data.spec.family {
        Family::UniNonspatial => fit_uni_nonspatial(data, priors, schedule),
        Family::UniSpatial => fit_uni_spatial(data, priors, schedule),
        Family::MvNonspatial => fit_mv_nonspatial(data, priors, schedule),
        Family::MvSpatial => fit_mv_spatial(data, priors, schedule),
    }?;
    samples.validate()?;
    Ok(samples)
}

fn check_family(data: &ModelData, want: Family) -> Result<()> {
    if data.spec.family != want {
        return Err(Error::Config(format!(
            "model data built for {}, sampler is {want}",
            data.spec.family
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schedule_retains_250() {
        let s = McmcSchedule::standard(1);
        s.validate().unwrap();
        assert_eq!(s.total(), 5000);
        assert_eq!(s.n_retained(), 250);
        let idx = s.retained_indices();
        assert_eq!(idx[0], 2500);
        assert_eq!(idx[1], 2510);
        assert_eq!(*idx.last().unwrap(), 4990);
    }

    #[test]
    fn postprocess_examples() {
        let s = McmcSchedule {
            n_batches: 1000,
            batch_len: 10,
            burn_in_frac: 0.5,
            thin: 10,
            target_accept: 0.43,
            seed: 0,
        };
        let raw: Vec<usize> = (1..=10_000).collect();
        let kept = postprocess_chain(&raw, &s).unwrap();
        assert_eq!(kept.len(), 500);
        assert_eq!(&kept[..3], &[5001, 5011, 5021]);

        let id = McmcSchedule {
            n_batches: 3,
            batch_len: 2,
            burn_in_frac: 0.0,
            thin: 1,
            ..s.clone()
        };
        let raw: Vec<usize> = (0..6).collect();
        assert_eq!(postprocess_chain(&raw, &id).unwrap(), raw);

        let every_third = McmcSchedule { thin: 3, ..id.clone() };
        assert_eq!(postprocess_chain(&raw, &every_third).unwrap(), [0, 3]);
        let too_thin = McmcSchedule { thin: 7, ..id.clone() };
        assert!(postprocess_chain(&raw, &too_thin).is_err());
        let single = McmcSchedule { thin: 4, ..id };
        assert!(single.validate().is_err());
        assert!(postprocess_chain(&raw[..5], &s).is_err());
    }

    #[test]
    fn adaptation_is_monotone_and_capped() {
        let mut up = ProposalScales::new(3, 0.1, 0.43);
        let mut prev = up.log_sd[0];
        for b in 1..=50 {
            adapt_batch(&mut up, 1.0, b);
            assert!(up.log_sd[0] > prev);
            prev = up.log_sd[0];
        }
        let mut down = ProposalScales::new(1, 0.1, 0.43);
        let mut prev = down.log_sd[0];
        for b in 1..=50 {
            adapt_batch(&mut down, 0.0, b);
            assert!(down.log_sd[0] < prev);
            prev = down.log_sd[0];
        }
        let mut s = ProposalScales::new(1, 1.0, 0.43);
        adapt_batch(&mut s, 0.9, 10_000);
        assert!((s.log_sd[0] - 0.01).abs() < 1e-15);
        let mut s = ProposalScales::new(1, 1.0, 0.43);
        adapt_batch(&mut s, 0.9, 1);
        assert!(s.log_sd[0] <= 0.01 + 1e-15);
    }

    #[test]
    fn model_spec_rules() {
        assert!(ModelSpec::new(Family::MvSpatial, vec![Outcome::Gsv], vec![vec![]]).is_err());
        assert!(ModelSpec::new(Family::UniSpatial, vec![Outcome::Ba, Outcome::Gsv], vec![vec![], vec![]]).is_err());
        let s = ModelSpec::with_variant(
            Family::MvNonspatial,
            vec![Outcome::Gsv, Outcome::Qmd],
            Variant::AllPredictors,
            &["mean".to_string()],
        )
        .unwrap();
        assert_eq!(s.beta_names(), ["beta_GSV_intercept", "beta_GSV_mean", "beta_QMD_intercept", "beta_QMD_mean"]);
        assert_eq!("mv_spatial".parse::<Family>().unwrap(), Family::MvSpatial);
    }
}
