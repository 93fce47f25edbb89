//! Exponential correlation, LMC cross-covariances, Gaussian conditioning and
//! effective ranges.
//!
//! Distances are in kilometers and decays in 1/km. Multivariate matrices are
//! stored location-major: entry `(i·m + q, j·m + r)` couples outcome `q` at
//! location `i` with outcome `r` at location `j`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::distance;
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};

/// `ln 20`: the exponential correlation falls to 0.05 at `ln(20)/φ`.
pub const LN_20: f64 = 2.995_732_273_553_991;

/// Exponential correlation `exp(−φ d)`.
pub fn exp_corr(d: f64, phi: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be non-negative, got {d}")));
    }
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("decay must be positive, got {phi}")));
    }
    Ok((-phi * d).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpKernel {
    phi: f64,
}

impl ExpKernel {
    pub fn new(phi: f64) -> Result<Self> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Domain(format!("decay must be positive, got {phi}")));
        }
        Ok(ExpKernel { phi })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn corr(&self, d: f64) -> f64 {
        (-self.phi * d).exp()
    }

    pub fn effective_range(&self) -> f64 {
        LN_20 / self.phi
    }
}

/// Linear model of coregionalization: lower-triangular `A` and one decay per
/// latent process.
#[derive(Debug, Clone, PartialEq)]
pub struct LmcSpec {
    a: Mat<f64>,
    phis: Vec<f64>,
}

impl LmcSpec {
    pub fn new(a: Mat<f64>, phis: Vec<f64>) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || phis.len() != m || m == 0 {
            return Err(Error::validation(format!(
                "LMC needs a square A matching {} decays, got {}x{}",
                phis.len(),
                a.nrows(),
                a.ncols()
            )));
        }
        for i in 0..m {
            if !(a[(i, i)] > 0.0) {
                return Err(Error::validation(format!("A[{i},{i}] must be positive")));
            }
            for j in i + 1..m {
                if a[(i, j)] != 0.0 {
                    return Err(Error::validation(format!("A is not lower triangular at ({i},{j})")));
                }
            }
        }
        if let Some(bad) = phis.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::validation(format!("decay must be positive, got {bad}")));
        }
        Ok(LmcSpec { a, phis })
    }

    /// Single process with variance `sigma2` and decay `phi`.
    pub fn univariate(sigma2: f64, phi: f64) -> Result<Self> {
        Self::new(Mat::from_fn(1, 1, |_, _| sigma2.sqrt()), vec![phi])
    }

    pub fn m(&self) -> usize {
        self.phis.len()
    }

    pub fn a(&self) -> MatRef<'_, f64> {
        self.a.as_ref()
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    /// Within-location covariance `A Aᵀ`.
    pub fn aat(&self) -> Mat<f64> {
        &self.a * self.a.transpose()
    }

    /// Writes the `m×m` block `A diag(exp(−φ d)) Aᵀ` into `out` at `(row, col)`.
    #[inline]
    fn write_block(&self, d: f64, rho: &mut [f64], out: &mut Mat<f64>, row: usize, col: usize) {
        let m = self.m();
        for (k, r) in rho.iter_mut().enumerate() {
            *r = (-self.phis[k] * d).exp();
        }
        for q in 0..m {
            for r in 0..m {
                let kmax = q.min(r);
                let mut s = 0.0;
                for k in 0..=kmax {
                    s += self.a[(q, k)] * self.a[(r, k)] * rho[k];
                }
                out[(row + q, col + r)] = s;
            }
        }
    }
}

/// Dense covariance with its location/outcome layout.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub matrix: Mat<f64>,
    pub n_locations: usize,
    /// Outcomes per location (1 for univariate).
    pub m: usize,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Pairwise distance matrix (km).
pub fn distance_matrix(coords: &[[f64; 2]]) -> Mat<f64> {
    let n = coords.len();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = distance(coords[i], coords[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn check_distinct(coords: &[[f64; 2]]) -> Result<()> {
    for i in 0..coords.len() {
        for j in 0..i {
            if distance(coords[i], coords[j]) == 0.0 {
                return Err(Error::validation(format!(
                    "locations {j} and {i} coincide; correlation matrix would be singular"
                )));
            }
        }
    }
    Ok(())
}

/// Correlation matrix `R(φ)` over `coords` (km).
pub fn build_corr_matrix(coords: &[[f64; 2]], phi: f64) -> Result<CovMatrix> {
    let kernel = ExpKernel::new(phi)?;
    check_distinct(coords)?;
    let n = coords.len();
    let mut r = Mat::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = kernel.corr(distance(coords[i], coords[j]));
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(CovMatrix {
        matrix: r,
        n_locations: n,
        m: 1,
    })
}

/// LMC covariance from a precomputed symmetric distance matrix.
pub fn lmc_cov_from_distances(dist: MatRef<'_, f64>, lmc: &LmcSpec) -> Mat<f64> {
    let n = dist.nrows();
    let m = lmc.m();
    let mut out = Mat::zeros(n * m, n * m);
    let mut rho = vec![0.0; m];
    for i in 0..n {
        for j in 0..=i {
            lmc.write_block(dist[(i, j)], &mut rho, &mut out, i * m, j * m);
        }
    }
    for i in 0..n * m {
        for j in 0..i {
            out[(j, i)] = out[(i, j)];
        }
    }
    out
}

/// Full `nm×nm` LMC covariance with `(i,j)` block `A V(sᵢ,sⱼ) Aᵀ`.
pub fn build_lmc_cov(coords: &[[f64; 2]], lmc: &LmcSpec) -> Result<CovMatrix> {
    check_distinct(coords)?;
    let dist = distance_matrix(coords);
    Ok(CovMatrix {
        matrix: lmc_cov_from_distances(dist.as_ref(), lmc),
        n_locations: coords.len(),
        m: lmc.m(),
    })
}

/// Cross-covariance between the latent field at `rows` and at `cols`
/// (`|rows|·m × |cols|·m`).
pub fn lmc_cross_cov(rows: &[[f64; 2]], cols: &[[f64; 2]], lmc: &LmcSpec) -> Mat<f64> {
    let m = lmc.m();
    let mut out = Mat::zeros(rows.len() * m, cols.len() * m);
    let mut rho = vec![0.0; m];
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in cols.iter().enumerate() {
            lmc.write_block(distance(*a, *b), &mut rho, &mut out, i * m, j * m);
        }
    }
    out
}

/// Parameters of `w_p | w_o` for a zero-mean joint Gaussian with blocks
/// `cov_oo`, `cov_po` (`p × o`) and `cov_pp`.
///
/// The returned covariance is symmetrized.
pub fn conditional_gaussian(
    cov_oo: MatRef<'_, f64>,
    cov_po: MatRef<'_, f64>,
    cov_pp: MatRef<'_, f64>,
    w_obs: &[f64],
) -> Result<(Vec<f64>, Mat<f64>)> {
    let chol = Chol::factor_jittered(cov_oo)?;
    conditional_gaussian_factored(&chol, cov_po, cov_pp, w_obs)
}

/// [`conditional_gaussian`] with a precomputed factor of `cov_oo`.
pub fn conditional_gaussian_factored(
    chol_oo: &Chol,
    cov_po: MatRef<'_, f64>,
    cov_pp: MatRef<'_, f64>,
    w_obs: &[f64],
) -> Result<(Vec<f64>, Mat<f64>)> {
    let o = chol_oo.dim();
    let p = cov_pp.nrows();
    if cov_po.nrows() != p || cov_po.ncols() != o || w_obs.len() != o || cov_pp.ncols() != p {
        return Err(Error::validation(format!(
            "non-conformable blocks: cov_oo {o}x{o}, cov_po {}x{}, cov_pp {}x{}, w {}",
            cov_po.nrows(),
            cov_po.ncols(),
            cov_pp.nrows(),
            cov_pp.ncols(),
            w_obs.len()
        )));
    }
    // B = L⁻¹ C_op, so C_po C_oo⁻¹ C_op = BᵀB and the mean is Bᵀ L⁻¹ w.
    let b = chol_oo.forward(cov_po.transpose());
    let lw = chol_oo.forward(linalg::col(w_obs).as_ref());
    let mean = b.transpose() * &lw;
    let mut cov = cov_pp.to_owned() - b.transpose() * &b;
    linalg::symmetrize(&mut cov);
    Ok((linalg::col_to_vec(&mean), cov))
}

/// Distance (km) at which the exponential correlation reaches 0.05.
pub fn effective_range_uni(phi: f64) -> Result<f64> {
    ExpKernel::new(phi).map(|k| k.effective_range())
}

/// Effective range (km) of outcome `q` under an LMC: the distance at which
/// its marginal correlation `Σⱼ a_qj² e^{−φⱼ d} / Σⱼ a_qj²` falls to 0.05.
///
/// Closed form when a single decay carries all the weight, bisection to
/// machine precision otherwise.
pub fn effective_range_mv(q: usize, lmc: &LmcSpec) -> Result<f64> {
    let m = lmc.m();
    if q >= m {
        return Err(Error::Domain(format!("outcome index {q} out of range for m = {m}")));
    }
    let weights: Vec<f64> = (0..m).map(|j| lmc.a[(q, j)].powi(2)).collect();
    let total: f64 = weights.iter().sum();
    let mut active = (0..m).filter(|&j| weights[j] > 0.0).map(|j| lmc.phis[j]);
    let first = active.next().expect("diagonal of A is positive");
    if active.all(|phi| phi == first) {
        return effective_range_uni(first);
    }
    let f = |d: f64| -> f64 {
        weights
            .iter()
            .zip(&lmc.phis)
            .map(|(w, phi)| w * (-phi * d).exp())
            .sum::<f64>()
            - 0.05 * total
    };
    let mut lo = 0.0;
    let mut hi = 10.0 * lmc.phis.iter().map(|p| LN_20 / p).fold(0.0, f64::max);
    // f is strictly decreasing with f(0) > 0 > f(hi).
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lmc2(a21: f64, phis: [f64; 2]) -> LmcSpec {
        let a = linalg::from_row_major(2, &[1.0, 0.0, a21, 0.8]);
        LmcSpec::new(a, phis.to_vec()).unwrap()
    }

    #[test]
    fn exp_corr_examples() {
        assert_eq!(exp_corr(0.0, 3.0).unwrap(), 1.0);
        assert!((exp_corr(1.0, 1.0).unwrap() - 0.3678794).abs() < 1e-7);
        assert!((exp_corr(0.57, 5.256).unwrap() - 0.05).abs() < 1e-3);
        assert!((exp_corr(0.57, LN_20 / 0.57).unwrap() - 0.05).abs() < 1e-12);
        assert!(exp_corr(-1.0, 1.0).is_err());
        assert!(exp_corr(1.0, 0.0).is_err());
    }

    #[test]
    fn corr_matrix_examples() {
        let r = build_corr_matrix(&[[0.0, 0.0]], 2.0).unwrap();
        assert_eq!(r.matrix[(0, 0)], 1.0);
        let r = build_corr_matrix(&[[0.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        assert!((r.matrix[(0, 1)] - 0.3678794).abs() < 1e-7);
        let r = build_corr_matrix(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.2]], 1e6).unwrap();
        assert!(r.matrix[(0, 1)] < 1e-10 && r.matrix[(1, 2)] < 1e-10);
        assert!(build_corr_matrix(&[[0.0, 0.0], [0.0, 0.0]], 1.0).is_err());
    }

    #[test]
    fn lmc_validation() {
        let upper = linalg::from_row_major(2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LmcSpec::new(upper, vec![1.0, 1.0]).is_err());
        let neg = linalg::from_row_major(2, &[1.0, 0.0, 0.5, -1.0]);
        assert!(LmcSpec::new(neg, vec![1.0, 1.0]).is_err());
        assert!(LmcSpec::new(Mat::identity(2, 2), vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn lmc_single_location_is_aat() {
        let l = lmc2(0.5, [1.0, 10.0]);
        let c = build_lmc_cov(&[[3.0, 4.0]], &l).unwrap();
        let aat = l.aat();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(c.matrix[(i, j)], aat[(i, j)]);
            }
        }
    }

    #[test]
    fn lmc_univariate_is_scaled_correlation() {
        let coords = [[0.0, 0.0], [0.3, 0.1], [1.0, -0.4]];
        let c = build_lmc_cov(&coords, &LmcSpec::univariate(2.5, 1.7).unwrap()).unwrap();
        let r = build_corr_matrix(&coords, 1.7).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.matrix[(i, j)] - 2.5 * r.matrix[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lmc_equal_decays_is_kronecker() {
        // Oracle: R(φ) ⊗ AAᵀ built entry by entry, location-major.
        let coords = [[0.0, 0.0], [0.3, 0.1], [1.0, -0.4], [0.2, 0.9]];
        let a = linalg::from_row_major(3, &[1.2, 0.0, 0.0, 0.4, 0.7, 0.0, -0.3, 0.2, 0.5]);
        let l = LmcSpec::new(a.clone(), vec![2.0; 3]).unwrap();
        let c = build_lmc_cov(&coords, &l).unwrap();
        let k = &a * a.transpose();
        for i in 0..4 {
            for j in 0..4 {
                let rho = (-2.0 * distance(coords[i], coords[j])).exp();
                for q in 0..3 {
                    for r in 0..3 {
                        let want = rho * k[(q, r)];
                        assert!((c.matrix[(i * 3 + q, j * 3 + r)] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn lmc_cov_is_symmetric_and_factorizable() {
        let coords: Vec<[f64; 2]> = (0..30).map(|i| [(i % 6) as f64 * 0.1, (i / 6) as f64 * 0.1]).collect();
        let c = build_lmc_cov(&coords, &lmc2(0.9, [3.0, 12.0])).unwrap();
        assert!(linalg::max_asymmetry(c.matrix.as_ref()) <= 1e-10);
        let ch = Chol::factor_jittered(c.matrix.as_ref()).unwrap();
        assert!(ch.jitter() <= 1e-8 * (0..60).map(|i| c.matrix[(i, i)]).sum::<f64>() / 60.0);
    }

    #[test]
    fn conditional_at_observed_site_is_degenerate() {
        let coords = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.7]];
        let cov = build_lmc_cov(&coords, &LmcSpec::univariate(1.3, 2.0).unwrap()).unwrap();
        let target = [[0.5, 0.0]];
        let l = LmcSpec::univariate(1.3, 2.0).unwrap();
        let po = lmc_cross_cov(&target, &coords, &l);
        let pp = lmc_cross_cov(&target, &target, &l);
        let w = [0.3, -1.1, 0.4];
        let (mean, c) = conditional_gaussian(cov.matrix.as_ref(), po.as_ref(), pp.as_ref(), &w).unwrap();
        assert!((mean[0] + 1.1).abs() < 1e-10);
        assert!(c[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn conditional_with_independent_blocks() {
        let oo = linalg::from_row_major(2, &[2.0, 0.5, 0.5, 1.0]);
        let po = Mat::zeros(2, 2);
        let pp = linalg::from_row_major(2, &[1.5, 0.2, 0.2, 0.9]);
        let (mean, c) = conditional_gaussian(oo.as_ref(), po.as_ref(), pp.as_ref(), &[1.0, 2.0]).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(c[(i, j)], pp[(i, j)]);
            }
        }
        assert!(conditional_gaussian(oo.as_ref(), po.as_ref(), pp.as_ref(), &[1.0]).is_err());
    }

    /// Oracle: invert the observed block by Gauss-Jordan elimination and
    /// form the Schur complement directly.
    fn schur_oracle(full: &[[f64; 5]; 5], w: &[f64; 3]) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut aug = [[0.0; 6]; 3];
        for i in 0..3 {
            for j in 0..3 {
                aug[i][j] = full[i][j];
            }
            aug[i][3 + i] = 1.0;
        }
        for c in 0..3 {
            let piv = aug[c][c];
            for v in aug[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..3 {
                if r != c {
                    let f = aug[r][c];
                    for k in 0..6 {
                        aug[r][k] -= f * aug[c][k];
                    }
                }
            }
        }
        let inv = |i: usize, j: usize| aug[i][3 + j];
        let mut mean = [0.0; 2];
        let mut cov = [[0.0; 2]; 2];
        for p in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    mean[p] += full[3 + p][i] * inv(i, j) * w[j];
                }
            }
            for q in 0..2 {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += full[3 + p][i] * inv(i, j) * full[j][3 + q];
                    }
                }
                cov[p][q] = full[3 + p][3 + q] - s;
            }
        }
        (mean, cov)
    }

    #[test]
    fn conditional_matches_partition_oracle() {
        // SPD 5x5 built as G Gᵀ + I from a fixed G.
        let g = [
            [0.9, -0.2, 0.4, 0.1, 0.0],
            [0.3, 1.1, -0.5, 0.2, 0.6],
            [-0.7, 0.2, 0.8, 0.3, -0.1],
            [0.5, 0.4, 0.1, 0.9, 0.2],
            [0.0, -0.6, 0.3, 0.4, 1.2],
        ];
        let mut full = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                full[i][j] = (0..5).map(|k| g[i][k] * g[j][k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let w = [0.4, -1.3, 0.8];
        let (m_or, c_or) = schur_oracle(&full, &w);
        let oo = Mat::from_fn(3, 3, |i, j| full[i][j]);
        let po = Mat::from_fn(2, 3, |i, j| full[3 + i][j]);
        let pp = Mat::from_fn(2, 2, |i, j| full[3 + i][3 + j]);
        let (mean, cov) = conditional_gaussian(oo.as_ref(), po.as_ref(), pp.as_ref(), &w).unwrap();
        for p in 0..2 {
            assert!((mean[p] - m_or[p]).abs() < 1e-8);
            for q in 0..2 {
                assert!((cov[(p, q)] - c_or[p][q]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn effective_range_examples() {
        assert!((effective_range_uni(LN_20).unwrap() - 1.0).abs() < 1e-12);
        assert!((effective_range_uni(5.256).unwrap() - 0.57).abs() < 0.005);
        assert!((effective_range_uni(2.724).unwrap() - 1.1).abs() < 0.005);
        let one = LmcSpec::univariate(0.3, 4.2).unwrap();
        assert!((effective_range_mv(0, &one).unwrap() - LN_20 / 4.2).abs() < 1e-6);
        let same = LmcSpec::new(lmc2(0.7, [1.0, 1.0]).a().to_owned(), vec![3.0, 3.0]).unwrap();
        assert!((effective_range_mv(1, &same).unwrap() - LN_20 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn effective_range_mixture_matches_newton_oracle() {
        // Independent scalar root finder: Newton on g(d) = 0.25e^{-d} + 0.64e^{-10d} - 0.05·0.89.
        let g = |d: f64| 0.25 * (-d).exp() + 0.64 * (-10.0 * d).exp() - 0.05 * 0.89;
        let dg = |d: f64| -0.25 * (-d).exp() - 6.4 * (-10.0 * d).exp();
        let mut d = 1.0;
        for _ in 0..100 {
            d -= g(d) / dg(d);
        }
        let l = lmc2(0.5, [1.0, 10.0]);
        let got = effective_range_mv(1, &l).unwrap();
        assert!((got - d).abs() < 1e-6, "{got} vs {d}");
        assert!(effective_range_mv(2, &l).is_err());
    }

    proptest! {
        #[test]
        fn exp_corr_monotone(d1 in 0.0f64..5.0, d2 in 0.0f64..5.0, p1 in 0.01f64..20.0, p2 in 0.01f64..20.0) {
            let (dl, dh) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (pl, ph) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(exp_corr(dl, pl).unwrap() >= exp_corr(dh, pl).unwrap());
            prop_assert!(exp_corr(dl, pl).unwrap() >= exp_corr(dl, ph).unwrap());
        }

        #[test]
        fn effective_range_bracketed(a21 in -2.0f64..2.0, a22 in 0.05f64..2.0, p1 in 0.2f64..20.0, p2 in 0.2f64..20.0) {
            let a = linalg::from_row_major(2, &[1.0, 0.0, a21, a22]);
            let l = LmcSpec::new(a, vec![p1, p2]).unwrap();
            let lo = (LN_20 / p1).min(LN_20 / p2);
            let hi = (LN_20 / p1).max(LN_20 / p2);
            for q in 0..2 {
                let r = effective_range_mv(q, &l).unwrap();
                prop_assert!(r >= lo - 1e-6 && r <= hi + 1e-6);
            }
        }

        #[test]
        fn conditional_variance_never_exceeds_prior(
            pts in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 4..9),
            phi in 0.3f64..8.0,
        ) {
            let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
            prop_assume!(check_distinct(&coords).is_ok());
            let (obs, tgt) = coords.split_at(coords.len() / 2);
            let l = LmcSpec::univariate(1.0, phi).unwrap();
            let oo = lmc_cross_cov(obs, obs, &l);
            let po = lmc_cross_cov(tgt, obs, &l);
            let pp = lmc_cross_cov(tgt, tgt, &l);
            let w = vec![0.5; obs.len()];
            let (_, c) = conditional_gaussian(oo.as_ref(), po.as_ref(), pp.as_ref(), &w).unwrap();
            for i in 0..tgt.len() {
                prop_assert!(c[(i, i)] <= pp[(i, i)] + 1e-10);
            }
        }
    }
}
