//! Collapsed adaptive Metropolis for the spatial families.
//!
//! The target is `p(θ | y)` with both the latent field and `β` integrated out
//! (flat prior on `β`). For `Σ = C(θ) + I_n ⊗ Ψ`, `L = chol(Σ)`,
//! `X̃ = L⁻¹X`, `ỹ = L⁻¹y`, `G = X̃ᵀX̃ = L_G L_Gᵀ` and `u = L_G⁻¹X̃ᵀỹ`:
//!
//! ```text
//! ln p(y | θ) = −½ ln|Σ| − ½ ln|G| − ½ (ỹᵀỹ − uᵀu) − ½ (N − P) ln 2π
//! β | θ, y    = L_G⁻ᵀ (u + z),  z ~ N(0, I)
//! ```
//!
//! The latent field at the plots is drawn from `w | β, θ, y` by conditioning a
//! joint prior draw on the observed residual.

use faer::Mat;
use rand::Rng as _;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::dists::{ln_inv_gamma, ln_inv_wishart_chol};
use super::{
    adapt_batch, check_family, AcceptanceLog, Draw, Family, MatrixPrior, McmcSchedule, ModelData, PosteriorSamples,
    PriorSpec, ProposalScales, UniformPrior, VariancePrior,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::rng::{substream, Rng};
use crate::spatial::{distance_matrix, lmc_cov_from_distances, LmcSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Starting joint proposal sd is `INITIAL_STEP / √d` per coordinate.
const INITIAL_STEP: f64 = 0.2;

/// `Σ = C(θ) + I_n ⊗ Ψ` on location-major ordering.
pub fn marginal_cov(dist: &Mat<f64>, lmc: &LmcSpec, psi: &Mat<f64>) -> Mat<f64> {
    let m = lmc.m();
    let mut s = lmc_cov_from_distances(dist.as_ref(), lmc);
    for i in 0..dist.nrows() {
        for q in 0..m {
            for r in 0..m {
                s[(i * m + q, i * m + r)] += psi[(q, r)];
            }
        }
    }
    s
}

/// `ln N(y | Xβ, C(θ) + I ⊗ Ψ)` for the stacked responses of `data`.
pub fn mv_spatial_loglik(data: &ModelData, beta: &[f64], lmc: &LmcSpec, psi: &Mat<f64>) -> Result<f64> {
    let dist = distance_matrix(&data.coords_km);
    let sigma = marginal_cov(&dist, lmc, psi);
    let chol = Chol::factor_jittered(sigma.as_ref())?;
    let y = data.stacked_y();
    let fit = data.stacked_x() * linalg::col(beta);
    let r: Vec<f64> = y.iter().enumerate().map(|(i, v)| v - fit[(i, 0)]).collect();
    let rt = chol.forward(linalg::col(&r).as_ref());
    let quad: f64 = (0..r.len()).map(|i| rt[(i, 0)].powi(2)).sum();
    Ok(-0.5 * (chol.log_det() + quad + r.len() as f64 * LN_2PI))
}

/// `ln N(y_q | X_q β, σ² R(φ) + τ² I)` for outcome `q`.
pub fn uni_spatial_loglik(data: &ModelData, q: usize, beta: &[f64], sigma2: f64, phi: f64, tau2: f64) -> Result<f64> {
    let one = data.outcome(q)?;
    let lmc = LmcSpec::univariate(sigma2, phi)?;
    mv_spatial_loglik(&one, beta, &lmc, &Mat::from_fn(1, 1, |_, _| tau2))
}

/// `ln ∫ N(y | Xβ, Σ) dβ`, the likelihood with `β` integrated out under a flat prior.
pub fn collapsed_loglik(data: &ModelData, lmc: &LmcSpec, psi: &Mat<f64>) -> Result<f64> {
    let dist = distance_matrix(&data.coords_km);
    let sigma = marginal_cov(&dist, lmc, psi);
    Collapsed::new(sigma, &data.stacked_x(), &data.stacked_y()).map(|c| c.loglik)
}

struct Collapsed {
    loglik: f64,
    chol: Chol,
    g_chol: Chol,
    u: Vec<f64>,
}

impl Collapsed {
    fn new(sigma: Mat<f64>, x: &Mat<f64>, y: &[f64]) -> Result<Self> {
        let nn = y.len();
        let p = x.ncols();
        let chol = Chol::factor_jittered(sigma.as_ref())?;
        let mut xy = Mat::<f64>::zeros(nn, p + 1);
        for i in 0..nn {
            for j in 0..p {
                xy[(i, j)] = x[(i, j)];
            }
            xy[(i, p)] = y[i];
        }
        chol.forward_in_place(&mut xy);
        let cross = xy.transpose() * &xy;
        let g = Mat::from_fn(p, p, |i, j| cross[(i, j)]);
        let g_chol = Chol::factor_jittered(g.as_ref())?;
        let b = Mat::from_fn(p, 1, |i, _| cross[(i, p)]);
        let u = g_chol.forward(b.as_ref());
        let uu: f64 = (0..p).map(|i| u[(i, 0)].powi(2)).sum();
        let loglik = -0.5 * (chol.log_det() + g_chol.log_det() + cross[(p, p)] - uu + (nn - p) as f64 * LN_2PI);
        Ok(Collapsed {
            loglik,
            chol,
            g_chol,
            u: linalg::col_to_vec(&u),
        })
    }

    fn draw_beta(&self, rng: &mut Rng) -> Vec<f64> {
        let p = self.u.len();
        let z = linalg::std_normals(p, rng);
        let mut v = linalg::col(&self.u.iter().zip(&z).map(|(a, b)| a + b).collect::<Vec<_>>());
        self.g_chol.backward_in_place(&mut v);
        linalg::col_to_vec(&v)
    }
}

/// Covariance block of the unconstrained parameter vector.
#[derive(Debug, Clone)]
enum Block {
    /// Full lower-triangular factor: log-diagonal and free sub-diagonal,
    /// inverse-Wishart prior on `L Lᵀ`.
    Full { df: f64, scale_chol: Mat<f64> },
    /// Diagonal factor; free entries on the log scale with inverse-gamma
    /// priors on their squares.
    Diag { entries: Vec<VariancePrior> },
}

impl Block {
    fn new(prior: &MatrixPrior, m: usize) -> Result<Self> {
        Ok(match prior {
            MatrixPrior::InverseWishart { df, scale } => Block::Full {
                df: *df,
                scale_chol: Chol::factor(linalg::from_row_major(m, scale).as_ref())?.l().to_owned(),
            },
            MatrixPrior::Diagonal { entries } => Block::Diag {
                entries: entries.clone(),
            },
        })
    }

    fn len(&self, m: usize) -> usize {
        match self {
            Block::Full { .. } => m * (m + 1) / 2,
            Block::Diag { entries } => entries
                .iter()
                .filter(|e| matches!(e, VariancePrior::InverseGamma { .. }))
                .count(),
        }
    }

    /// Factor, log-Jacobian of `θ ↦ L Lᵀ`, and log prior density.
    fn decode(&self, theta: &[f64], m: usize) -> (Mat<f64>, f64) {
        let mut l = Mat::<f64>::zeros(m, m);
        let mut lp = 0.0;
        match self {
            Block::Full { df, scale_chol } => {
                let mut k = 0;
                for i in 0..m {
                    for j in 0..=i {
                        l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
                        k += 1;
                    }
                }
                lp += m as f64 * std::f64::consts::LN_2;
                for i in 0..m {
                    let ln_d = l[(i, i)].ln();
                    lp += (m - i) as f64 * ln_d + ln_d;
                }
                lp += ln_inv_wishart_chol(&l, *df, scale_chol);
            }
            Block::Diag { entries } => {
                let mut k = 0;
                for (q, e) in entries.iter().enumerate() {
                    match *e {
                        VariancePrior::InverseGamma { shape, scale } => {
                            let eta = theta[k];
                            k += 1;
                            l[(q, q)] = eta.exp();
                            lp += std::f64::consts::LN_2 + 2.0 * eta;
                            lp += ln_inv_gamma((2.0 * eta).exp(), shape, scale);
                        }
                        VariancePrior::Fixed { value } => l[(q, q)] = value.sqrt(),
                    }
                }
            }
        }
        (l, lp)
    }

    fn encode(&self, l: &Mat<f64>) -> Vec<f64> {
        let m = l.nrows();
        match self {
            Block::Full { .. } => {
                let mut out = Vec::new();
                for i in 0..m {
                    for j in 0..=i {
                        out.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
                    }
                }
                out
            }
            Block::Diag { entries } => entries
                .iter()
                .enumerate()
                .filter(|(_, e)| matches!(e, VariancePrior::InverseGamma { .. }))
                .map(|(q, _)| l[(q, q)].ln())
                .collect(),
        }
    }
}

fn ln_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn decode_phi(z: f64, prior: &UniformPrior) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-z).exp());
    let width = prior.upper - prior.lower;
    let phi = (prior.lower + width * s).clamp(prior.lower, prior.upper);
    (phi, width.ln() + ln_sigmoid(z) + ln_sigmoid(-z))
}

fn encode_phi(phi: f64, prior: &UniformPrior) -> f64 {
    let s = (phi - prior.lower) / (prior.upper - prior.lower);
    (s / (1.0 - s)).ln()
}

struct Target {
    m: usize,
    y: Vec<f64>,
    x: Mat<f64>,
    dist: Mat<f64>,
    a: Block,
    psi: Block,
    phi: Vec<UniformPrior>,
}

struct State {
    lp: f64,
    lmc: LmcSpec,
    psi_l: Mat<f64>,
    collapsed: Collapsed,
}

impl Target {
    fn dim(&self) -> usize {
        self.a.len(self.m) + self.psi.len(self.m) + self.m
    }

    fn eval(&self, theta: &[f64]) -> Option<State> {
        if theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let m = self.m;
        let na = self.a.len(m);
        let np = self.psi.len(m);
        let (a, lp_a) = self.a.decode(&theta[..na], m);
        let (psi_l, lp_psi) = self.psi.decode(&theta[na..na + np], m);
        let mut lp = lp_a + lp_psi;
        let mut phis = Vec::with_capacity(m);
        for (q, z) in theta[na + np..].iter().enumerate() {
            let (phi, jac) = decode_phi(*z, &self.phi[q]);
            phis.push(phi);
            lp += jac;
        }
        if !lp.is_finite() {
            return None;
        }
        let lmc = LmcSpec::new(a, phis).ok()?;
        let psi = &psi_l * psi_l.transpose();
        let sigma = marginal_cov(&self.dist, &lmc, &psi);
        let collapsed = Collapsed::new(sigma, &self.x, &self.y).ok()?;
        lp += collapsed.loglik;
        lp.is_finite().then_some(State {
            lp,
            lmc,
            psi_l,
            collapsed,
        })
    }

    fn initial(&self, a_prior: &MatrixPrior, psi_prior: &MatrixPrior) -> Result<Vec<f64>> {
        let m = self.m;
        let start_factor = |prior: &MatrixPrior| -> Result<Mat<f64>> {
            let k = prior.initial(m);
            match prior {
                MatrixPrior::InverseWishart { .. } => Ok(Chol::factor_jittered(k.as_ref())?.l().to_owned()),
                MatrixPrior::Diagonal { .. } => Ok(Mat::from_fn(m, m, |i, j| if i == j { k[(i, i)].sqrt() } else { 0.0 })),
            }
        };
        let mut theta = self.a.encode(&start_factor(a_prior)?);
        theta.extend(self.psi.encode(&start_factor(psi_prior)?));
        for p in &self.phi {
            theta.push(encode_phi((p.lower * p.upper).sqrt(), p));
        }
        Ok(theta)
    }
}

/// Raw output of one collapsed chain.
struct ChainOutput {
    draws: Vec<Draw>,
    rates: Vec<f64>,
}

fn run_chain(
    data: &ModelData,
    a_prior: &MatrixPrior,
    psi_prior: &MatrixPrior,
    phi_prior: &[UniformPrior],
    schedule: &McmcSchedule,
    label: &str,
) -> Result<ChainOutput> {
    let m = data.m();
    if let MatrixPrior::Diagonal { entries } = a_prior {
        if entries.iter().any(|e| matches!(e, VariancePrior::Fixed { value } if !(*value > 0.0))) {
            return Err(Error::Config("a fixed spatial variance must be positive".into()));
        }
    }
    let target = Target {
        m,
        y: data.stacked_y(),
        x: data.stacked_x(),
        dist: distance_matrix(&data.coords_km),
        a: Block::new(a_prior, m)?,
        psi: Block::new(psi_prior, m)?,
        phi: phi_prior.to_vec(),
    };
    let d = target.dim();
    let mut rng = substream(schedule.seed, label);
    let mut compose_rng = substream(schedule.seed, &format!("{label}/compose"));

    let mut theta = target.initial(a_prior, psi_prior)?;
    let mut cur = target
        .eval(&theta)
        .ok_or_else(|| Error::Numerical(format!("{label}: initial state has zero posterior density")))?;
    let mut scales = ProposalScales::new(d, INITIAL_STEP / (d as f64).sqrt(), schedule.target_accept);
    let mut shape = Mat::<f64>::identity(d, d);
    let burn = schedule.burn_in();
    let burn_batches = schedule.burn_in_batches();
    let learn_at = [burn_batches / 4, burn_batches / 2, 3 * burn_batches / 4];
    let keep = schedule.retained_indices();
    let mut next = 0;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(burn);
    let mut draws = Vec::with_capacity(keep.len());
    let mut rates = Vec::with_capacity(schedule.n_batches);

    for b in 0..schedule.n_batches {
        let mut accepted = 0usize;
        for k in 0..schedule.batch_len {
            let iter = b * schedule.batch_len + k;
            let z = linalg::std_normals(d, &mut rng);
            let prop: Vec<f64> = (0..d)
                .map(|i| {
                    let step: f64 = (0..=i).map(|j| shape[(i, j)] * z[j]).sum();
                    theta[i] + scales.sd(i) * step
                })
                .collect();
            let log_u = rng.random::<f64>().ln();
            if let Some(state) = target.eval(&prop) {
                if log_u < state.lp - cur.lp {
                    theta = prop;
                    cur = state;
                    accepted += 1;
                }
            }
            if iter < burn {
                history.push(theta.clone());
            }
            if next < keep.len() && keep[next] == iter {
                draws.push(compose(&target, &cur, &mut compose_rng)?);
                next += 1;
            }
        }
        let rate = accepted as f64 / schedule.batch_len as f64;
        rates.push(rate);
        let done = b + 1;
        if done > burn_batches {
            continue;
        }
        adapt_batch(&mut scales, rate, done);
        if learn_at.contains(&done) {
            let window = &history[history.len() / 2..];
            if let Some((sd, l)) = learn_shape(window) {
                let c = rw_scale(schedule.target_accept) / (d as f64).sqrt();
                for j in 0..d {
                    scales.log_sd[j] = (c * sd[j]).ln();
                }
                shape = l;
            }
        }
    }
    Ok(ChainOutput { draws, rates })
}

/// `ℓ` such that a random walk `θ + ℓ/√d · Σ^{1/2} z` on a `d`-dimensional
/// Gaussian with covariance `Σ` accepts at rate `target` as `d` grows:
/// `2Φ(−ℓ/2) = target`.
fn rw_scale(target: f64) -> f64 {
    -2.0 * Normal::standard().inverse_cdf(0.5 * target)
}

/// Empirical scales and correlation factor of burn-in states, when the window
/// is long enough and the chain moved often enough within it.
fn learn_shape(window: &[Vec<f64>]) -> Option<(Vec<f64>, Mat<f64>)> {
    let len = window.len();
    let d = window.first()?.len();
    let moves = window.windows(2).filter(|p| p[0] != p[1]).count();
    if len < 10 * d.max(2) || moves < 2 * d {
        return None;
    }
    let mean: Vec<f64> = (0..d).map(|j| window.iter().map(|w| w[j]).sum::<f64>() / len as f64).collect();
    let mut cov = Mat::<f64>::zeros(d, d);
    for w in window {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (w[i] - mean[i]) * (w[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[(i, j)] /= (len - 1) as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 1e-8)) {
        return None;
    }
    let corr = Mat::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    let chol = Chol::factor_jittered(corr.as_ref()).ok()?;
    Some((sd, chol.l().to_owned()))
}

/// Retained draw: `β | θ, y` then `w | β, θ, y`.
fn compose(target: &Target, cur: &State, rng: &mut Rng) -> Result<Draw> {
    let m = target.m;
    let beta = cur.collapsed.draw_beta(rng);
    let fit = &target.x * linalg::col(&beta);
    let resid: Vec<f64> = target.y.iter().enumerate().map(|(i, v)| v - fit[(i, 0)]).collect();

    let c = lmc_cov_from_distances(target.dist.as_ref(), &cur.lmc);
    let c_chol = Chol::factor_jittered(c.as_ref())?;
    let w = recover_latent(&c, &c_chol, &cur.collapsed.chol, &cur.psi_l, &resid, rng);

    let a = cur.lmc.a().to_owned();
    let psi = &cur.psi_l * cur.psi_l.transpose();
    Ok(Draw {
        beta,
        tau2: (0..m).map(|q| psi[(q, q)]).collect(),
        sigma2: (0..m).map(|q| a[(q, q)].powi(2)).collect(),
        psi: linalg::to_row_major(psi.as_ref()),
        a: linalg::to_row_major(a.as_ref()),
        phi: cur.lmc.phis().to_vec(),
        w,
    })
}

/// `w | r` for `r = w + e`, `w ~ N(0, C)`, `e ~ N(0, I ⊗ Ψ)`:
/// `w = w₀ + C Σ⁻¹ (r − w₀ − e₀)` with `(w₀, e₀)` a joint prior draw.
fn recover_latent(c: &Mat<f64>, c_chol: &Chol, sigma_chol: &Chol, psi_l: &Mat<f64>, resid: &[f64], rng: &mut Rng) -> Vec<f64> {
    let nm = resid.len();
    let m = psi_l.nrows();
    let w0 = c_chol.mul_l(&linalg::std_normals(nm, rng));
    let zr = linalg::std_normals(nm, rng);
    let mut gap = resid.to_vec();
    for i in 0..nm / m {
        for q in 0..m {
            let e: f64 = (0..=q).map(|r| psi_l[(q, r)] * zr[i * m + r]).sum();
            gap[i * m + q] -= w0[i * m + q] + e;
        }
    }
    let sol = sigma_chol.solve_vec(&gap);
    let corr = c * linalg::col(&sol);
    (0..nm).map(|k| w0[k] + corr[(k, 0)]).collect()
}

/// Univariate spatial model, one collapsed chain per outcome.
pub fn fit_uni_spatial(data: &ModelData, priors: &PriorSpec, schedule: &McmcSchedule) -> Result<PosteriorSamples> {
    check_family(data, Family::UniSpatial)?;
    priors.validate(&data.spec)?;
    schedule.validate()?;
    let m = data.m();
    let n = data.n();
    let chains: Vec<(String, ChainOutput)> = (0..m)
        .into_par_iter()
        .map(|q| {
            let one = data.outcome(q)?;
            let label = format!("fit/{}/{}", Family::UniSpatial, data.spec.outcomes[q]);
            let out = run_chain(
                &one,
                &MatrixPrior::Diagonal {
                    entries: vec![priors.sigma2[q]],
                },
                &MatrixPrior::Diagonal {
                    entries: vec![priors.tau2[q]],
                },
                &priors.phi[q..=q],
                schedule,
                &label,
            )?;
            Ok((label, out))
        })
        .collect::<Result<_>>()?;

    let draws = (0..schedule.n_retained())
        .map(|t| {
            let mut w = vec![0.0; n * m];
            for (q, (_, c)) in chains.iter().enumerate() {
                for i in 0..n {
                    w[i * m + q] = c.draws[t].w[i];
                }
            }
            Draw {
                beta: chains.iter().flat_map(|c| c.1.draws[t].beta.iter().copied()).collect(),
                tau2: chains.iter().map(|c| c.1.draws[t].tau2[0]).collect(),
                sigma2: chains.iter().map(|c| c.1.draws[t].sigma2[0]).collect(),
                phi: chains.iter().map(|c| c.1.draws[t].phi[0]).collect(),
                w,
                ..Default::default()
            }
        })
        .collect();
    Ok(PosteriorSamples {
        spec: data.spec.clone(),
        priors: priors.clone(),
        schedule: schedule.clone(),
        transform: data.transform.clone(),
        plot_ids: data.plot_ids.clone(),
        coords_km: data.coords_km.clone(),
        draws,
        acceptance: chains
            .into_iter()
            .map(|(label, c)| AcceptanceLog {
                chain: label,
                rates: c.rates,
            })
            .collect(),
    })
}

/// Multivariate LMC model, one collapsed chain over `(A, Ψ, φ)`.
pub fn fit_mv_spatial(data: &ModelData, priors: &PriorSpec, schedule: &McmcSchedule) -> Result<PosteriorSamples> {
    check_family(data, Family::MvSpatial)?;
    priors.validate(&data.spec)?;
    schedule.validate()?;
    let label = format!("fit/{}/all", Family::MvSpatial);
    let out = run_chain(
        data,
        priors.aat.as_ref().expect("validated"),
        priors.psi.as_ref().expect("validated"),
        &priors.phi,
        schedule,
        &label,
    )?;
    let draws = out
        .draws
        .into_iter()
        .map(|d| Draw {
            tau2: Vec::new(),
            sigma2: Vec::new(),
            ..d
        })
        .collect();
    Ok(PosteriorSamples {
        spec: data.spec.clone(),
        priors: priors.clone(),
        schedule: schedule.clone(),
        transform: data.transform.clone(),
        plot_ids: data.plot_ids.clone(),
        coords_km: data.coords_km.clone(),
        draws,
        acceptance: vec![AcceptanceLog {
            chain: label,
            rates: out.rates,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Outcome, OutcomeTransform};
    use crate::samplers::ModelSpec;
    use crate::spatial::conditional_gaussian;

    fn toy(n: usize, m: usize, seed: u64) -> ModelData {
        let mut rng = substream(seed, "toy");
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let outcomes = [Outcome::Gsv, Outcome::Qmd, Outcome::Ba][..m].to_vec();
        let family = if m == 1 { Family::UniSpatial } else { Family::MvSpatial };
        let spec = ModelSpec::new(family, outcomes, vec![vec!["x".into()]; m]).unwrap();
        let x = Mat::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = (0..m)
            .map(|q| (0..n).map(|i| q as f64 + xs[i] + (5.0 * coords[i][0]).sin() + 0.2 * rng.random::<f64>()).collect())
            .collect();
        ModelData::new(
            spec,
            (0..n).map(|i| format!("p{i}")).collect(),
            coords,
            y,
            vec![x; m],
            OutcomeTransform::log(),
        )
        .unwrap()
    }

    /// Dense determinant and inverse by Gauss-Jordan elimination with partial pivoting.
    fn gauss_jordan(a: &Mat<f64>) -> (f64, Mat<f64>) {
        let n = a.nrows();
        let mut w = a.clone();
        let mut inv = Mat::<f64>::identity(n, n);
        let mut log_det = 0.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| w[(i, c)].abs().total_cmp(&w[(j, c)].abs())).unwrap();
            for j in 0..n {
                let t = w[(c, j)];
                w[(c, j)] = w[(piv, j)];
                w[(piv, j)] = t;
                let t = inv[(c, j)];
                inv[(c, j)] = inv[(piv, j)];
                inv[(piv, j)] = t;
            }
            let p = w[(c, c)];
            log_det += p.abs().ln();
            for j in 0..n {
                w[(c, j)] /= p;
                inv[(c, j)] /= p;
            }
            for i in 0..n {
                if i != c {
                    let f = w[(i, c)];
                    for j in 0..n {
                        w[(i, j)] -= f * w[(c, j)];
                        inv[(i, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        (log_det, inv)
    }

    fn dense_mvn_logpdf(y: &[f64], mean: &[f64], cov: &Mat<f64>) -> f64 {
        let (log_det, inv) = gauss_jordan(cov);
        let r: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        for i in 0..r.len() {
            for j in 0..r.len() {
                quad += r[i] * inv[(i, j)] * r[j];
            }
        }
        -0.5 * (log_det + quad + r.len() as f64 * LN_2PI)
    }

    fn dense_cov(data: &ModelData, lmc: &LmcSpec, psi: &Mat<f64>) -> Mat<f64> {
        let n = data.n();
        let m = data.m();
        let a = lmc.a();
        Mat::from_fn(n * m, n * m, |r, c| {
            let (i, q) = (r / m, r % m);
            let (j, s) = (c / m, c % m);
            let d = crate::data::distance(data.coords_km[i], data.coords_km[j]);
            let mut v: f64 = (0..m).map(|k| a[(q, k)] * a[(s, k)] * (-lmc.phis()[k] * d).exp()).sum();
            if i == j {
                v += psi[(q, s)];
            }
            v
        })
    }

    #[test]
    fn rw_scale_matches_known_values() {
        // 0.234 is the classical optimum at ℓ ≈ 2.38
        assert!((rw_scale(0.234) - 2.38).abs() < 0.01);
        assert!((rw_scale(0.43) - 1.578).abs() < 0.01);
    }

    #[test]
    fn uni_loglik_matches_dense_oracle() {
        let d = toy(25, 1, 1);
        let beta = [0.3, 1.1];
        let got = uni_spatial_loglik(&d, 0, &beta, 0.8, 3.0, 0.25).unwrap();
        let lmc = LmcSpec::univariate(0.8, 3.0).unwrap();
        let cov = dense_cov(&d, &lmc, &Mat::from_fn(1, 1, |_, _| 0.25));
        let mean: Vec<f64> = (0..d.n()).map(|i| beta[0] + beta[1] * d.x[0][(i, 1)]).collect();
        let want = dense_mvn_logpdf(&d.y[0], &mean, &cov);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn mv_loglik_matches_dense_oracle() {
        let d = toy(15, 2, 2);
        let a = linalg::from_row_major(2, &[1.0, 0.0, 0.6, 0.5]);
        let lmc = LmcSpec::new(a, vec![2.0, 7.0]).unwrap();
        let psi = linalg::from_row_major(2, &[0.3, 0.1, 0.1, 0.2]);
        let beta = [0.1, 0.9, 1.2, 0.8];
        let got = mv_spatial_loglik(&d, &beta, &lmc, &psi).unwrap();
        let mean: Vec<f64> = (0..d.n() * 2)
            .map(|k| {
                let (i, q) = (k / 2, k % 2);
                beta[2 * q] + beta[2 * q + 1] * d.x[q][(i, 1)]
            })
            .collect();
        let want = dense_mvn_logpdf(&d.stacked_y(), &mean, &dense_cov(&d, &lmc, &psi));
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn collapsed_loglik_is_vague_prior_limit() {
        // ∫ N(y | Xβ, Σ) N(β | 0, κI) dβ · (2πκ)^{P/2} → collapsed likelihood as κ → ∞.
        let d = toy(20, 2, 3);
        let a = linalg::from_row_major(2, &[0.9, 0.0, -0.4, 0.6]);
        let lmc = LmcSpec::new(a, vec![4.0, 1.5]).unwrap();
        let psi = linalg::from_row_major(2, &[0.2, 0.05, 0.05, 0.3]);
        let got = collapsed_loglik(&d, &lmc, &psi).unwrap();
        let kappa = 1e6;
        let x = d.stacked_x();
        let p = x.ncols();
        let mut cov = dense_cov(&d, &lmc, &psi);
        let xxt = &x * x.transpose();
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                cov[(i, j)] += kappa * xxt[(i, j)];
            }
        }
        let zeros = vec![0.0; cov.nrows()];
        let want = dense_mvn_logpdf(&d.stacked_y(), &zeros, &cov) + 0.5 * p as f64 * (LN_2PI + kappa.ln());
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn jacobian_of_full_block_matches_finite_differences() {
        // d vech(LLᵀ) / d θ for m = 2, compared with the closed form.
        let block = Block::Full {
            df: 4.0,
            scale_chol: Mat::<f64>::identity(2, 2),
        };
        let theta = [0.3, -0.7, -0.2];
        let (l, lp) = block.decode(&theta, 2);
        let prior = ln_inv_wishart_chol(&l, 4.0, &Mat::<f64>::identity(2, 2));
        let vech = |t: &[f64]| {
            let (l, _) = block.decode(t, 2);
            let k = &l * l.transpose();
            [k[(0, 0)], k[(1, 0)], k[(1, 1)]]
        };
        let h = 1e-6;
        let mut jac = Mat::<f64>::zeros(3, 3);
        for c in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[c] += h;
            tm[c] -= h;
            let (fp, fm) = (vech(&tp), vech(&tm));
            for r in 0..3 {
                jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let (log_det, _) = gauss_jordan(&jac);
        assert!((lp - prior - log_det).abs() < 1e-6, "{} vs {log_det}", lp - prior);
    }

    #[test]
    fn latent_recovery_matches_gaussian_conditional() {
        // Monte-Carlo moments of the composition draw against the analytic
        // conditional w | r for fixed parameters.
        let d = toy(4, 1, 5);
        let target = Target {
            m: 1,
            y: d.stacked_y(),
            x: d.stacked_x(),
            dist: distance_matrix(&d.coords_km),
            a: Block::Diag {
                entries: vec![VariancePrior::Fixed { value: 0.8 }],
            },
            psi: Block::Diag {
                entries: vec![VariancePrior::Fixed { value: 0.3 }],
            },
            phi: vec![UniformPrior { lower: 1.0, upper: 5.0 }],
        };
        let state = target.eval(&[0.0]).unwrap();
        let lmc = state.lmc.clone();
        let c = lmc_cov_from_distances(target.dist.as_ref(), &lmc);
        let mut rng = substream(9, "w");
        let n = d.n();
        let draws = 40_000;
        let beta = state.collapsed.draw_beta(&mut substream(1, "b"));
        let fit = &target.x * linalg::col(&beta);
        let resid: Vec<f64> = (0..n).map(|i| target.y[i] - fit[(i, 0)]).collect();
        let sigma = marginal_cov(&target.dist, &lmc, &Mat::from_fn(1, 1, |_, _| 0.3));
        let (mean, cov) = conditional_gaussian(sigma.as_ref(), c.as_ref(), c.as_ref(), &resid).unwrap();
        let c_chol = Chol::factor(c.as_ref()).unwrap();
        let psi_l = Mat::from_fn(1, 1, |_, _| 0.3f64.sqrt());
        let mut acc = vec![0.0; n];
        let mut acc2 = vec![0.0; n];
        for _ in 0..draws {
            let w = recover_latent(&c, &c_chol, &state.collapsed.chol, &psi_l, &resid, &mut rng);
            for i in 0..n {
                acc[i] += w[i];
                acc2[i] += (w[i] - mean[i]).powi(2);
            }
        }
        for i in 0..n {
            let m = acc[i] / draws as f64;
            let v = acc2[i] / draws as f64;
            assert!((m - mean[i]).abs() < 4.0 * (cov[(i, i)] / draws as f64).sqrt(), "mean {i}");
            assert!((v / cov[(i, i)] - 1.0).abs() < 0.03, "var {i}: {v} vs {}", cov[(i, i)]);
        }
    }

    #[test]
    fn short_chain_runs_and_validates() {
        let d = toy(30, 2, 7);
        let priors = super::super::default_priors(&d).unwrap();
        let schedule = McmcSchedule {
            n_batches: 40,
            batch_len: 10,
            burn_in_frac: 0.5,
            thin: 5,
            target_accept: 0.43,
            seed: 11,
        };
        let s = fit_mv_spatial(&d, &priors, &schedule).unwrap();
        s.validate().unwrap();
        assert_eq!(s.draws.len(), 40);
        let again = fit_mv_spatial(&d, &priors, &schedule).unwrap();
        assert_eq!(s.draws, again.draws);
    }
}
