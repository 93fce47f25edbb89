use faer::Mat;
use rayon::prelude::*;

use super::dists::{sample_inv_gamma, sample_inv_wishart};
use super::{
    check_family, Draw, Family, MatrixPrior, McmcSchedule, ModelData, PosteriorSamples, PriorSpec, VariancePrior,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::rng::{substream, Rng};

/// Two-block Gibbs sampler, independently per outcome:
/// `β | τ² ~ N(β̂, τ²(XᵀX)⁻¹)` and `τ² | β ~ IG(a + n/2, b + ‖y − Xβ‖²/2)`.
pub fn fit_uni_nonspatial(data: &ModelData, priors: &PriorSpec, schedule: &McmcSchedule) -> Result<PosteriorSamples> {
    check_family(data, Family::UniNonspatial)?;
    priors.validate(&data.spec)?;
    schedule.validate()?;
    let m = data.m();
    let chains: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|q| {
            let label = format!("fit/{}/{}", Family::UniNonspatial, data.spec.outcomes[q]);
            let mut rng = substream(schedule.seed, &label);
            uni_chain(&data.x[q], &data.y[q], priors.tau2[q], schedule, &mut rng)
        })
        .collect::<Result<_>>()?;

    let draws = (0..schedule.n_retained())
        .map(|t| Draw {
            beta: chains.iter().flat_map(|c| c.0[t].iter().copied()).collect(),
            tau2: chains.iter().map(|c| c.1[t]).collect(),
            ..Default::default()
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
        acceptance: Vec::new(),
    })
}

fn uni_chain(
    x: &Mat<f64>,
    y: &[f64],
    prior: VariancePrior,
    schedule: &McmcSchedule,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = y.len();
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let chol = Chol::factor(xtx.as_ref())?;
    let beta_hat = chol.solve((x.transpose() * linalg::col(y)).as_ref());
    // (XᵀX)⁻¹ = L⁻ᵀ L⁻¹, so β̂ + √τ² L⁻ᵀ z has the required covariance.
    let mut tau2 = prior_start(prior);
    let keep = schedule.retained_indices();
    let mut betas = Vec::with_capacity(keep.len());
    let mut tau2s = Vec::with_capacity(keep.len());
    let mut next = 0;
    let mut beta = vec![0.0; p];
    for iter in 0..schedule.total() {
        let z = linalg::col(&linalg::std_normals(p, rng));
        let mut dz = z;
        chol.backward_in_place(&mut dz);
        let sd = tau2.sqrt();
        for j in 0..p {
            beta[j] = beta_hat[(j, 0)] + sd * dz[(j, 0)];
        }
        if let VariancePrior::InverseGamma { shape, scale } = prior {
            let fit = x * linalg::col(&beta);
            let sse: f64 = (0..n).map(|i| (y[i] - fit[(i, 0)]).powi(2)).sum();
            tau2 = sample_inv_gamma(shape + 0.5 * n as f64, scale + 0.5 * sse, rng);
        }
        if next < keep.len() && keep[next] == iter {
            betas.push(beta.clone());
            tau2s.push(tau2);
            next += 1;
        }
    }
    Ok((betas, tau2s))
}

fn prior_start(prior: VariancePrior) -> f64 {
    match prior {
        VariancePrior::InverseGamma { shape, scale } => scale / (shape - 1.0),
        VariancePrior::Fixed { value } => value,
    }
}

/// Gibbs sampler for the seemingly-unrelated regression with residual
/// covariance `Ψ`: `β | Ψ` by generalized least squares and
/// `Ψ | β ~ IW(ν + n, S + Σᵢ εᵢεᵢᵀ)` (or independent inverse-gamma entries
/// under a diagonal prior).
pub fn fit_mv_nonspatial(data: &ModelData, priors: &PriorSpec, schedule: &McmcSchedule) -> Result<PosteriorSamples> {
    check_family(data, Family::MvNonspatial)?;
    priors.validate(&data.spec)?;
    schedule.validate()?;
    let m = data.m();
    let n = data.n();
    let psi_prior = priors.psi.clone().expect("validated");
    let label = format!("fit/{}/all", Family::MvNonspatial);
    let mut rng = substream(schedule.seed, &label);

    let offsets = block_offsets(data);
    let p_total = data.p_total();
    // Cross-products X_qᵀX_r and X_qᵀy_r.
    let xtx: Vec<Vec<Mat<f64>>> = (0..m)
        .map(|q| (0..m).map(|r| data.x[q].transpose() * &data.x[r]).collect())
        .collect();
    let xty: Vec<Vec<Mat<f64>>> = (0..m)
        .map(|q| (0..m).map(|r| data.x[q].transpose() * linalg::col(&data.y[r])).collect())
        .collect();

    let mut psi = psi_prior.initial(m);
    let keep = schedule.retained_indices();
    let mut draws = Vec::with_capacity(keep.len());
    let mut next = 0;
    let mut beta = vec![0.0; p_total];
    let mut resid = vec![vec![0.0; n]; m];
    for iter in 0..schedule.total() {
        // β | Ψ: precision blocks Q_qr X_qᵀX_r, right-hand side Σ_r Q_qr X_qᵀy_r.
        let q_mat = Chol::factor_jittered(psi.as_ref())?.solve(Mat::<f64>::identity(m, m).as_ref());
        let mut prec = Mat::<f64>::zeros(p_total, p_total);
        let mut rhs = Mat::<f64>::zeros(p_total, 1);
        for a in 0..m {
            for b in 0..m {
                let w = q_mat[(a, b)];
                let blk = &xtx[a][b];
                for i in 0..blk.nrows() {
                    for j in 0..blk.ncols() {
                        prec[(offsets[a] + i, offsets[b] + j)] += w * blk[(i, j)];
                    }
                    rhs[(offsets[a] + i, 0)] += w * xty[a][b][(i, 0)];
                }
            }
        }
        linalg::symmetrize(&mut prec);
        let pc = Chol::factor_jittered(prec.as_ref())?;
        let mut mean = pc.solve(rhs.as_ref());
        let mut z = linalg::col(&linalg::std_normals(p_total, &mut rng));
        pc.backward_in_place(&mut z);
        mean += &z;
        beta.copy_from_slice(&linalg::col_to_vec(&mean));

        for q in 0..m {
            let bq = linalg::col(&beta[offsets[q]..offsets[q + 1]]);
            let fit = &data.x[q] * &bq;
            for i in 0..n {
                resid[q][i] = data.y[q][i] - fit[(i, 0)];
            }
        }
        psi = sample_psi(&psi_prior, &resid, &mut rng)?;

        if next < keep.len() && keep[next] == iter {
            draws.push(Draw {
                beta: beta.clone(),
                psi: linalg::to_row_major(psi.as_ref()),
                ..Default::default()
            });
            next += 1;
        }
    }
    Ok(PosteriorSamples {
        spec: data.spec.clone(),
        priors: priors.clone(),
        schedule: schedule.clone(),
        transform: data.transform.clone(),
        plot_ids: data.plot_ids.clone(),
        coords_km: data.coords_km.clone(),
        draws,
        acceptance: Vec::new(),
    })
}

fn sample_psi(prior: &MatrixPrior, resid: &[Vec<f64>], rng: &mut Rng) -> Result<Mat<f64>> {
    let m = resid.len();
    let n = resid[0].len() as f64;
    let cross = |q: usize, r: usize| -> f64 { resid[q].iter().zip(&resid[r]).map(|(a, b)| a * b).sum() };
    match prior {
        MatrixPrior::InverseWishart { df, scale } => {
            let mut s = linalg::from_row_major(m, scale);
            for q in 0..m {
                for r in 0..m {
                    s[(q, r)] += cross(q, r);
                }
            }
            linalg::symmetrize(&mut s);
            let mut out = sample_inv_wishart(df + n, &s, rng)?;
            linalg::symmetrize(&mut out);
            Ok(out)
        }
        MatrixPrior::Diagonal { entries } => {
            let mut out = Mat::<f64>::zeros(m, m);
            for q in 0..m {
                out[(q, q)] = match entries[q] {
                    VariancePrior::InverseGamma { shape, scale } => {
                        sample_inv_gamma(shape + 0.5 * n, scale + 0.5 * cross(q, q), rng)
                    }
                    VariancePrior::Fixed { value } if value > 0.0 => value,
                    VariancePrior::Fixed { .. } => {
                        return Err(Error::Config("a fixed Psi entry must be positive".into()))
                    }
                };
            }
            Ok(out)
        }
    }
}

pub(crate) fn block_offsets(data: &ModelData) -> Vec<usize> {
    let mut off = vec![0];
    for x in &data.x {
        off.push(off.last().unwrap() + x.ncols());
    }
    off
}
