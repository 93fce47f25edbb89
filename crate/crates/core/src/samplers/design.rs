use faer::Mat;

use super::ModelSpec;
use crate::data::{Dataset, OutcomeTransform, Scale};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};

/// Responses and design matrices of one model, on the model scale.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub spec: ModelSpec,
    pub plot_ids: Vec<String>,
    pub coords_km: Vec<[f64; 2]>,
    /// One response vector per outcome.
    pub y: Vec<Vec<f64>>,
    /// One `n × p_q` design matrix per outcome, intercept column first.
    pub x: Vec<Mat<f64>>,
    pub transform: OutcomeTransform,
}

impl ModelData {
    /// Builds the design from a dataset already on the model scale.
    pub fn from_dataset(data: &Dataset, spec: &ModelSpec) -> Result<Self> {
        let transform = match &data.scale {
            Scale::Model(t) => t.clone(),
            Scale::Original => {
                return Err(Error::Config("dataset must be transformed to the model scale before fitting".into()))
            }
        };
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (q, outcome) in spec.outcomes.iter().enumerate() {
            let col = data
                .outcome_column(*outcome)
                .ok_or_else(|| Error::validation(format!("outcome {outcome} missing from plot data")))?;
            y.push(col);
            let rows: Vec<Vec<f64>> = data
                .plots
                .iter()
                .map(|p| design_row(&spec.predictors[q], &data.predictor_names, &p.predictors))
                .collect::<Result<_>>()?;
            let p = spec.predictors[q].len() + 1;
            x.push(Mat::from_fn(rows.len(), p, |i, j| rows[i][j]));
        }
        Self::new(
            spec.clone(),
            data.plots.iter().map(|p| p.plot_id.clone()).collect(),
            data.plots.iter().map(|p| to_km(p.coords)).collect(),
            y,
            x,
            transform,
        )
    }

    /// Validates raw components: conformable sizes, `n > p`, full column rank.
    pub fn new(
        spec: ModelSpec,
        plot_ids: Vec<String>,
        coords_km: Vec<[f64; 2]>,
        y: Vec<Vec<f64>>,
        x: Vec<Mat<f64>>,
        transform: OutcomeTransform,
    ) -> Result<Self> {
        let n = plot_ids.len();
        let m = spec.m();
        if coords_km.len() != n || y.len() != m || x.len() != m {
            return Err(Error::validation("model data components are not conformable"));
        }
        for q in 0..m {
            let name = spec.outcomes[q];
            let p = spec.predictors[q].len() + 1;
            if y[q].len() != n || x[q].nrows() != n || x[q].ncols() != p {
                return Err(Error::validation(format!("{name}: response or design has the wrong shape")));
            }
            if n <= p {
                return Err(Error::validation(format!("{name}: need more plots ({n}) than coefficients ({p})")));
            }
            if y[q].iter().any(|v| !v.is_finite()) || (0..n).any(|i| (0..p).any(|j| !x[q][(i, j)].is_finite())) {
                return Err(Error::validation(format!("{name}: non-finite response or predictor")));
            }
            check_rank(&x[q]).map_err(|_| {
                Error::validation(format!("{name}: design matrix is rank deficient"))
            })?;
        }
        Ok(ModelData {
            spec,
            plot_ids,
            coords_km,
            y,
            x,
            transform,
        })
    }

    pub fn n(&self) -> usize {
        self.plot_ids.len()
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    /// Total number of regression coefficients.
    pub fn p_total(&self) -> usize {
        self.x.iter().map(|x| x.ncols()).sum()
    }

    /// Largest inter-plot distance, km.
    pub fn max_distance_km(&self) -> f64 {
        let c = &self.coords_km;
        let mut best = 0.0f64;
        for i in 0..c.len() {
            for j in 0..i {
                best = best.max(crate::data::distance(c[i], c[j]));
            }
        }
        best
    }

    /// Ordinary least-squares fit of outcome `q`: coefficients and residuals.
    pub fn ols(&self, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = &self.x[q];
        let xtx = x.transpose() * x;
        let chol = Chol::factor(xtx.as_ref())?;
        let xty = x.transpose() * linalg::col(&self.y[q]);
        let beta = chol.solve(xty.as_ref());
        let fit = x * &beta;
        let resid = (0..self.n()).map(|i| self.y[q][i] - fit[(i, 0)]).collect();
        Ok((linalg::col_to_vec(&beta), resid))
    }

    /// `Ψ̂_qr = e_qᵀ e_r / √((n − p_q)(n − p_r))` from per-outcome OLS residuals.
    pub fn ols_residual_cov(&self) -> Result<Mat<f64>> {
        let m = self.m();
        let n = self.n() as f64;
        let resid: Vec<Vec<f64>> = (0..m).map(|q| self.ols(q).map(|r| r.1)).collect::<Result<_>>()?;
        let dof: Vec<f64> = self.x.iter().map(|x| n - x.ncols() as f64).collect();
        Ok(Mat::from_fn(m, m, |q, r| {
            let s: f64 = resid[q].iter().zip(&resid[r]).map(|(a, b)| a * b).sum();
            s / (dof[q] * dof[r]).sqrt()
        }))
    }

    /// Responses stacked location-major: entry `i·m + q`.
    pub fn stacked_y(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = vec![0.0; self.n() * m];
        for q in 0..m {
            for i in 0..self.n() {
                out[i * m + q] = self.y[q][i];
            }
        }
        out
    }

    /// Block design `nm × p_total` matching [`stacked_y`](Self::stacked_y).
    pub fn stacked_x(&self) -> Mat<f64> {
        let m = self.m();
        let n = self.n();
        let mut out = Mat::<f64>::zeros(n * m, self.p_total());
        let mut off = 0;
        for q in 0..m {
            let xq = &self.x[q];
            for i in 0..n {
                for j in 0..xq.ncols() {
                    out[(i * m + q, off + j)] = xq[(i, j)];
                }
            }
            off += xq.ncols();
        }
        out
    }

    /// Single-outcome view used by the univariate samplers.
    pub(crate) fn outcome(&self, q: usize) -> Result<ModelData> {
        let spec = ModelSpec {
            family: self.spec.family,
            outcomes: vec![self.spec.outcomes[q]],
            predictors: vec![self.spec.predictors[q].clone()],
        };
        Ok(ModelData {
            spec,
            plot_ids: self.plot_ids.clone(),
            coords_km: self.coords_km.clone(),
            y: vec![self.y[q].clone()],
            x: vec![self.x[q].clone()],
            transform: self.transform.clone(),
        })
    }
}

/// Meters to kilometers.
pub fn to_km(c: [f64; 2]) -> [f64; 2] {
    [c[0] / 1000.0, c[1] / 1000.0]
}

/// Intercept plus the named predictors picked out of `values`.
pub fn design_row(selected: &[String], names: &[String], values: &[f64]) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(selected.len() + 1);
    row.push(1.0);
    for s in selected {
        let j = names
            .iter()
            .position(|n| n == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor '{s}'")))?;
        row.push(values[j]);
    }
    Ok(row)
}

fn check_rank(x: &Mat<f64>) -> Result<()> {
    let xtx = x.transpose() * x;
    let chol = Chol::factor(xtx.as_ref())?;
    let p = xtx.nrows();
    // A pivot that lost almost all of its column's scale signals collinearity.
    for j in 0..p {
        let pivot = chol.l()[(j, j)].powi(2);
        if !(pivot > 1e-10 * xtx[(j, j)]) {
            return Err(Error::Numerical("collinear design".into()));
        }
    }
    Ok(())
}
