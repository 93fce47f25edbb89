//! Dense linear-algebra helpers on top of `faer`.
//!
//! Everything here runs sequentially so that a fixed input always produces
//! bitwise-identical output.

use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, MatRef, Par, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest and largest jitter, as multiples of the mean diagonal.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Chol {
    l: Mat<f64>,
    jitter: f64,
}

impl Chol {
    /// Plain factorization, no jitter.
    pub fn factor(a: MatRef<'_, f64>) -> Result<Self> {
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(Chol {
                l: llt.L().to_owned(),
                jitter: 0.0,
            }),
            Err(_) => Err(Error::Numerical(format!(
                "matrix of order {} is not positive definite",
                a.nrows()
            ))),
        }
    }

    /// Factorization with escalating diagonal jitter: `ε·I` with `ε` from
    /// `1e-10·mean(diag)` up to `1e-6·mean(diag)` in factors of ten.
    pub fn factor_jittered(a: MatRef<'_, f64>) -> Result<Self> {
        if let Ok(c) = Self::factor(a) {
            return Ok(c);
        }
        let n = a.nrows();
        let mean_diag = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64;
        if !(mean_diag > 0.0) || !mean_diag.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot jitter matrix of order {n} with mean diagonal {mean_diag}"
            )));
        }
        let mut eps = JITTER_START * mean_diag;
        let mut work = a.to_owned();
        while eps <= JITTER_MAX * mean_diag * (1.0 + 1e-9) {
            for i in 0..n {
                work[(i, i)] = a[(i, i)] + eps;
            }
            if let Ok(llt) = work.llt(Side::Lower) {
                return Ok(Chol {
                    l: llt.L().to_owned(),
                    jitter: eps,
                });
            }
            eps *= 10.0;
        }
        Err(Error::Numerical(format!(
            "matrix of order {n} not positive definite after jitter {:.1e}",
            JITTER_MAX * mean_diag
        )))
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// Diagonal jitter that was needed (0 when the matrix factored directly).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `ln |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// `B ← L⁻¹ B`.
    pub fn forward_in_place(&self, b: &mut Mat<f64>) {
        solve_lower_triangular_in_place(self.l.as_ref(), b.as_mut(), Par::Seq);
    }

    /// `B ← L⁻ᵀ B`.
    pub fn backward_in_place(&self, b: &mut Mat<f64>) {
        solve_upper_triangular_in_place(self.l.transpose(), b.as_mut(), Par::Seq);
    }

    /// `L⁻¹ B`.
    pub fn forward(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = b.to_owned();
        self.forward_in_place(&mut out);
        out
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = b.to_owned();
        self.forward_in_place(&mut out);
        self.backward_in_place(&mut out);
        out
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        col_to_vec(&self.solve(col(b).as_ref()))
    }

    /// `L z`.
    pub fn mul_l(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|j| self.l[(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Column vector from a slice.
pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// Symmetric matrix from a flat row-major slice.
pub fn from_row_major(n: usize, data: &[f64]) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| data[i * n + j])
}

pub fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `(C + Cᵀ)/2` in place.
pub fn symmetrize(c: &mut Mat<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(c: MatRef<'_, f64>) -> f64 {
    let n = c.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    worst
}

pub fn std_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// One draw from `N(mean, cov)` using a jittered Cholesky factor.
///
/// A covariance that is identically zero returns `mean` unchanged.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], cov: MatRef<'_, f64>, rng: &mut R) -> Result<Vec<f64>> {
    let n = mean.len();
    let z = std_normals(n, rng);
    if (0..n).all(|i| cov[(i, i)] == 0.0) {
        return Ok(mean.to_vec());
    }
    let chol = Chol::factor_jittered(cov)?;
    let lz = chol.mul_l(&z);
    Ok(mean.iter().zip(lz).map(|(m, e)| m + e).collect())
}

/// A factor `F` with `F Fᵀ = C` for a positive semidefinite `C`.
///
/// This is the Cholesky factor when `C` is numerically positive definite.
/// Otherwise it is `V √Λ₊` from the eigendecomposition, with eigenvalues in
/// `[−tol, 0)` treated as round-off and set to zero, so degenerate directions
/// get exactly zero spread instead of jitter.
pub fn psd_factor(c: MatRef<'_, f64>, tol: f64) -> Result<Mat<f64>> {
    if let Ok(chol) = Chol::factor(c) {
        return Ok(chol.l);
    }
    let n = c.nrows();
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Numerical(format!("eigendecomposition of order {n} failed")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    if let Some(i) = (0..n).find(|&i| s[i] < -tol) {
        return Err(Error::Numerical(format!(
            "covariance of order {n} has negative eigenvalue {:.3e}",
            s[i]
        )));
    }
    Ok(Mat::from_fn(n, n, |i, j| u[(i, j)] * s[j].max(0.0).sqrt()))
}

/// `F z`.
pub fn mul(f: MatRef<'_, f64>, z: &[f64]) -> Vec<f64> {
    (0..f.nrows()).map(|i| (0..f.ncols()).map(|j| f[(i, j)] * z[j]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Mat<f64> {
        from_row_major(3, &[4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0])
    }

    #[test]
    fn solve_and_logdet() {
        let a = spd3();
        let c = Chol::factor(a.as_ref()).unwrap();
        let x = c.solve_vec(&[1.0, 2.0, 3.0]);
        let back = &a * col(&x);
        for (i, want) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((back[(i, 0)] - want).abs() < 1e-12);
        }
        // det by cofactor expansion
        let det = 4.0 * (2.0 * 3.0 - 0.25) - 2.0 * (2.0 * 3.0 - 0.5 * 0.6) + 0.6 * (2.0 * 0.5 - 2.0 * 0.6);
        assert!((c.log_det() - f64::ln(det)).abs() < 1e-12);
        assert_eq!(c.jitter(), 0.0);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank-one matrix
        let a = from_row_major(2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Chol::factor(a.as_ref()).is_err());
        let c = Chol::factor_jittered(a.as_ref()).unwrap();
        assert!(c.jitter() > 0.0 && c.jitter() <= 1e-6);
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let a = from_row_major(2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Chol::factor_jittered(a.as_ref()), Err(Error::Numerical(_))));
    }

    #[test]
    fn psd_factor_handles_rank_deficiency() {
        let a = from_row_major(3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let f = psd_factor(a.as_ref(), 1e-12).unwrap();
        let back = &f * f.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
        let bad = from_row_major(2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_factor(bad.as_ref(), 1e-8).is_err());
    }

    #[test]
    fn symmetrize_removes_asymmetry() {
        let mut a = from_row_major(2, &[1.0, 0.3, 0.1, 1.0]);
        assert!(max_asymmetry(a.as_ref()) > 0.1);
        symmetrize(&mut a);
        assert_eq!(max_asymmetry(a.as_ref()), 0.0);
        assert!((a[(0, 1)] - 0.2).abs() < 1e-15);
    }
}
