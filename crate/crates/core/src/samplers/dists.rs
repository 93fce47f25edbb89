//! Conjugate distributions used by the Gibbs blocks.

use faer::Mat;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Chol;

/// Draw from `IG(shape, scale)`, density ∝ v^{-shape-1} e^{-scale/v}.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("inverse-gamma shape must be positive")
        .sample(rng);
    scale / g
}

/// Unnormalized `ln IG(v; shape, scale)`.
pub fn ln_inv_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    -(shape + 1.0) * v.ln() - scale / v
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: &Mat<f64>) -> Mat<f64> {
    let m = l.nrows();
    let mut inv = Mat::<f64>::zeros(m, m);
    for j in 0..m {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in j + 1..m {
            let s: f64 = (j..i).map(|k| l[(i, k)] * inv[(k, j)]).sum();
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Draw from the inverse-Wishart `IW(df, scale)` (mean `scale/(df − m − 1)`)
/// by the Bartlett decomposition.
pub fn sample_inv_wishart<R: Rng + ?Sized>(df: f64, scale: &Mat<f64>, rng: &mut R) -> Result<Mat<f64>> {
    let m = scale.nrows();
    if df <= m as f64 - 1.0 {
        return Err(Error::Config(format!("inverse-Wishart df {df} too small for m = {m}")));
    }
    let ls = Chol::factor_jittered(scale.as_ref())?;
    let mut b = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        let chi: f64 = ChiSquared::new(df - i as f64)
            .expect("chi-square dof positive")
            .sample(rng);
        b[(i, i)] = chi.sqrt();
        for j in 0..i {
            b[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // W = L_S⁻ᵀ B Bᵀ L_S⁻¹ ~ Wishart(df, S⁻¹), so W⁻¹ = M Mᵀ with M = L_S B⁻ᵀ.
    let binv = lower_inverse(&b);
    let mf = ls.l() * binv.transpose();
    Ok(&mf * mf.transpose())
}

/// Unnormalized `ln IW(K; df, S)` given the lower Cholesky factor of `K`.
pub fn ln_inv_wishart_chol(k_chol: &Mat<f64>, df: f64, scale_chol: &Mat<f64>) -> f64 {
    let m = k_chol.nrows();
    let log_det: f64 = 2.0 * (0..m).map(|i| k_chol[(i, i)].ln()).sum::<f64>();
    // tr(S K⁻¹) = ‖L_K⁻¹ L_S‖²_F
    let x = lower_inverse(k_chol) * scale_chol;
    let mut tr = 0.0;
    for i in 0..m {
        for j in 0..m {
            tr += x[(i, j)] * x[(i, j)];
        }
    }
    -0.5 * (df + m as f64 + 1.0) * log_det - 0.5 * tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_row_major;
    use crate::rng::substream;

    #[test]
    fn inv_gamma_mean() {
        let mut rng = substream(1, "ig");
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_inv_gamma(5.0, 8.0, &mut rng)).sum::<f64>() / n as f64;
        // mean = 8/4 = 2, sd = 2/sqrt(3) → MC se ≈ 0.0026
        assert!((mean - 2.0).abs() < 0.015, "{mean}");
    }

    #[test]
    fn lower_inverse_is_inverse() {
        let l = from_row_major(3, &[2.0, 0.0, 0.0, 0.5, 1.5, 0.0, -1.0, 0.3, 0.7]);
        let p = &l * lower_inverse(&l);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inv_wishart_mean() {
        let s = from_row_major(2, &[2.0, 0.6, 0.6, 1.0]);
        let df = 12.0;
        let mut rng = substream(2, "iw");
        let n = 100_000;
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let d = sample_inv_wishart(df, &s, &mut rng).unwrap();
            acc[0] += d[(0, 0)];
            acc[1] += d[(0, 1)];
            acc[2] += d[(1, 0)];
            acc[3] += d[(1, 1)];
        }
        let want = [2.0 / 9.0, 0.6 / 9.0, 0.6 / 9.0, 1.0 / 9.0];
        for k in 0..4 {
            let got = acc[k] / n as f64;
            assert!((got - want[k]).abs() < 0.01 * want[k].abs().max(0.1), "{k}: {got} vs {}", want[k]);
        }
    }

    #[test]
    fn inv_wishart_one_dim_is_inv_gamma_density() {
        // IW(ν, s) with m = 1 is IG(ν/2, s/2)
        let (df, s, v) = (5.0, 3.0f64, 0.7f64);
        let k = from_row_major(1, &[v.sqrt()]);
        let ls = from_row_major(1, &[s.sqrt()]);
        let a = ln_inv_wishart_chol(&k, df, &ls);
        let b = ln_inv_gamma(v, df / 2.0, s / 2.0);
        assert!((a - b).abs() < 1e-12);
    }
}
