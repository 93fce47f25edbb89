//! Synthetic inventories drawn from the generative model.
//!
//! Plots are a random subset of a regular grid; stands are rectangles of
//! square grid cells. Predictors are smooth random fields plus white noise.
//! The latent field is drawn exactly and jointly at plots and cells from the
//! LMC, and log-scale outcomes follow `y = Xβ + w + ε`, `ε ~ N(0, Ψ)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use faer::Mat;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Outcome, PlotObservation, PredictionUnit};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::rng::substream;
use crate::spatial::{build_lmc_cov, LmcSpec};

/// Smooth-field predictor: `mean + sd·(√(1−ν²)·f(s) + ν·z)`, with `f` a
/// unit-variance field of correlation length `length_m` and `ν` the noise share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorGen {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub length_m: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.3
}

/// Generating parameters on the log scale. Matrices are `m×m` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    /// Per outcome: intercept then one coefficient per predictor.
    pub beta: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    /// Lower-triangular coregionalization matrix; all zeros disables the field.
    pub a: Vec<f64>,
    /// Decays, 1/km.
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandLayout {
    pub count: usize,
    pub min_cells: usize,
    pub max_cells: usize,
    #[serde(default = "default_cell")]
    pub cell_m: f64,
}

fn default_cell() -> f64 {
    26.36
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_plots: usize,
    /// Width and height of the study rectangle, meters.
    pub extent_m: [f64; 2],
    #[serde(default)]
    pub origin_m: [f64; 2],
    pub grid_spacing_m: f64,
    /// Modeled outcomes, log scale, block order.
    pub outcomes: Vec<Outcome>,
    #[serde(default)]
    pub predictors: Vec<PredictorGen>,
    pub truth: TrueParams,
    #[serde(default)]
    pub stands: Option<StandLayout>,
}

impl SimConfig {
    /// Three outcomes and five canopy/terrain predictors on a 3 km × 2 km
    /// district with 146 plots on a 100 m grid and 40 small stands.
    ///
    /// Residual and spatial cross-correlations follow the plot-level pattern
    /// of a mountain spruce forest: volume and basal area nearly collinear,
    /// diameter moderately related to both.
    pub fn brixen_like(seed: u64) -> Self {
        let pred = |name: &str, mean: f64, sd: f64, length_m: f64, noise: f64| PredictorGen {
            name: name.into(),
            mean,
            sd,
            length_m,
            noise,
        };
        let corr = [1.0, 0.5, 0.9, 0.5, 1.0, 0.3, 0.9, 0.3, 1.0];
        let cov = |sd: [f64; 3]| -> Vec<f64> { (0..9).map(|k| corr[k] * sd[k / 3] * sd[k % 3]).collect() };
        let psi = cov([0.05f64.sqrt(), 0.02f64.sqrt(), 0.045f64.sqrt()]);
        let aat = linalg::from_row_major(3, &cov([0.04f64.sqrt(), 0.015f64.sqrt(), 0.035f64.sqrt()]));
        let a = Chol::factor(aat.as_ref()).expect("positive definite").l().to_owned();
        let means = [18.0, 7.0, 30.0, 10.0, 0.0];
        let slopes = [
            [0.08, 0.02, 0.0, 0.06, -0.03],
            [0.02, 0.1, 0.008, 0.0, 0.0],
            [0.07, -0.03, 0.0, 0.05, -0.02],
        ];
        let log_means = [510.8f64.ln(), 29.8f64.ln(), 44.8f64.ln()];
        let beta = (0..3)
            .map(|q| {
                let shift: f64 = slopes[q].iter().zip(&means).map(|(b, m)| b * m).sum();
                let mut b = vec![log_means[q] - shift];
                b.extend(slopes[q]);
                b
            })
            .collect();
        SimConfig {
            seed,
            n_plots: 146,
            extent_m: [3000.0, 2000.0],
            origin_m: [0.0, 0.0],
            grid_spacing_m: 100.0,
            outcomes: vec![Outcome::Gsv, Outcome::Qmd, Outcome::Ba],
            predictors: vec![
                pred("mean", means[0], 5.0, 400.0, 0.7),
                pred("sd", means[1], 2.0, 300.0, 0.7),
                pred("p95", means[2], 7.0, 400.0, 0.7),
                pred("elev", means[3], 1.5, 1500.0, 0.4),
                pred("aspect", means[4], 0.7, 800.0, 0.4),
            ],
            truth: TrueParams {
                beta,
                psi,
                a: linalg::to_row_major(a.as_ref()),
                phi: vec![6.0, 4.0, 8.0],
            },
            stands: Some(StandLayout {
                count: 40,
                min_cells: 2,
                max_cells: 5,
                cell_m: default_cell(),
            }),
        }
    }

    pub fn m(&self) -> usize {
        self.outcomes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        let p = self.predictors.len() + 1;
        let t = &self.truth;
        let bad = |msg: String| Err(Error::Config(msg));
        if m == 0 || self.outcomes.windows(2).any(|w| w[0] >= w[1]) || self.outcomes.contains(&Outcome::N) {
            return bad("outcomes must be distinct modeled outcomes in block order".into());
        }
        if self.n_plots < 2 {
            return bad("need at least 2 plots".into());
        }
        if !(self.grid_spacing_m > 0.0) || self.extent_m.iter().any(|e| !(*e > 0.0)) {
            return bad("extent and grid spacing must be positive".into());
        }
        if t.beta.len() != m || t.beta.iter().any(|b| b.len() != p) {
            return bad(format!("truth.beta must hold {m} rows of {p} coefficients"));
        }
        if t.psi.len() != m * m || t.a.len() != m * m || t.phi.len() != m {
            return bad("truth.psi, truth.a and truth.phi have the wrong sizes".into());
        }
        let psi = linalg::from_row_major(m, &t.psi);
        if linalg::max_asymmetry(psi.as_ref()) > 1e-12 || (0..m).any(|q| psi[(q, q)] < 0.0) {
            return bad("truth.psi must be symmetric with non-negative diagonal".into());
        }
        if self.lmc()?.is_none() && t.a.iter().any(|v| *v != 0.0) {
            return bad("truth.a must be lower triangular with positive diagonal, or all zero".into());
        }
        for g in &self.predictors {
            if !(g.sd >= 0.0) || !(g.length_m > 0.0) || !(0.0..=1.0).contains(&g.noise) {
                return bad(format!("predictor '{}' has invalid generator settings", g.name));
            }
        }
        if let Some(s) = &self.stands {
            if s.count == 0 || s.min_cells == 0 || s.min_cells > s.max_cells || !(s.cell_m > 0.0) {
                return bad("invalid stand layout".into());
            }
        }
        Ok(())
    }

    fn lmc(&self) -> Result<Option<LmcSpec>> {
        let t = &self.truth;
        if t.a.iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        Ok(LmcSpec::new(linalg::from_row_major(self.m(), &t.a), t.phi.clone()).ok())
    }
}

/// Generated data plus everything needed to score estimators against truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Original-scale plots (with derived N when QMD and BA are modeled) and units.
    pub dataset: Dataset,
    pub truth: TrueParams,
    /// Original-scale outcomes at every unit, same order as `dataset.units`.
    pub unit_truth: Vec<BTreeMap<Outcome, f64>>,
    /// Latent field, location-major, at plots then units.
    pub w_plots: Vec<f64>,
    pub w_units: Vec<f64>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let m = cfg.m();
    let seed = cfg.seed;

    // Plots: random subset of the regular grid.
    let nx = (cfg.extent_m[0] / cfg.grid_spacing_m).floor() as usize;
    let ny = (cfg.extent_m[1] / cfg.grid_spacing_m).floor() as usize;
    if nx * ny < cfg.n_plots {
        return Err(Error::Config(format!(
            "grid holds {} points, {} plots requested",
            nx * ny,
            cfg.n_plots
        )));
    }
    let mut rng = substream(seed, "sim/plots");
    let mut picks = sample(&mut rng, nx * ny, cfg.n_plots).into_vec();
    picks.sort_unstable();
    let h = 0.5 * cfg.grid_spacing_m;
    let plot_xy: Vec<[f64; 2]> = picks
        .iter()
        .map(|&k| {
            [
                cfg.origin_m[0] + h + (k % nx) as f64 * cfg.grid_spacing_m,
                cfg.origin_m[1] + h + (k / nx) as f64 * cfg.grid_spacing_m,
            ]
        })
        .collect();

    let (unit_xy, unit_meta) = match &cfg.stands {
        Some(layout) => stands(cfg, layout)?,
        None => (Vec::new(), Vec::new()),
    };

    // Predictors from random Fourier features, shared by plots and units.
    let mut rng = substream(seed, "sim/predictors");
    let all_xy: Vec<[f64; 2]> = plot_xy.iter().chain(&unit_xy).copied().collect();
    let n_all = all_xy.len();
    let mut preds = vec![vec![0.0; cfg.predictors.len()]; n_all];
    for (j, g) in cfg.predictors.iter().enumerate() {
        let features = 200;
        let scale = 1.0 / (g.length_m / 1000.0);
        let omega: Vec<[f64; 2]> = (0..features)
            .map(|_| {
                let z = linalg::std_normals(2, &mut rng);
                [z[0] * scale, z[1] * scale]
            })
            .collect();
        let phase: Vec<f64> = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let norm = (2.0 / features as f64).sqrt();
        let smooth = (1.0 - g.noise * g.noise).sqrt();
        for (i, xy) in all_xy.iter().enumerate() {
            let s = [xy[0] / 1000.0, xy[1] / 1000.0];
            let f: f64 = omega
                .iter()
                .zip(&phase)
                .map(|(w, b)| (w[0] * s[0] + w[1] * s[1] + b).cos())
                .sum::<f64>()
                * norm;
            let z: f64 = linalg::std_normals(1, &mut rng)[0];
            preds[i][j] = g.mean + g.sd * (smooth * f + g.noise * z);
        }
    }

    // Latent field jointly at every location.
    let mut w = vec![0.0; n_all * m];
    if let Some(lmc) = cfg.lmc()? {
        let km: Vec<[f64; 2]> = all_xy.iter().map(|c| [c[0] / 1000.0, c[1] / 1000.0]).collect();
        let cov = build_lmc_cov(&km, &lmc)?;
        let chol = Chol::factor_jittered(cov.matrix.as_ref())?;
        let mut rng = substream(seed, "sim/latent");
        w = chol.mul_l(&linalg::std_normals(n_all * m, &mut rng));
    }

    // Outcomes.
    let psi = linalg::from_row_major(m, &cfg.truth.psi);
    let psi_l = if (0..m).all(|q| psi[(q, q)] == 0.0) {
        Mat::<f64>::zeros(m, m)
    } else {
        Chol::factor_jittered(psi.as_ref())?.l().to_owned()
    };
    let mut rng = substream(seed, "sim/noise");
    let mut outcomes: Vec<BTreeMap<Outcome, f64>> = Vec::with_capacity(n_all);
    for i in 0..n_all {
        let z = linalg::std_normals(m, &mut rng);
        let mut row = BTreeMap::new();
        for (q, o) in cfg.outcomes.iter().enumerate() {
            let b = &cfg.truth.beta[q];
            let xb: f64 = b[0] + preds[i].iter().zip(&b[1..]).map(|(x, c)| x * c).sum::<f64>();
            let e: f64 = (0..=q).map(|r| psi_l[(q, r)] * z[r]).sum();
            row.insert(*o, (xb + w[i * m + q] + e).exp());
        }
        if let (Some(&ba), Some(&qmd)) = (row.get(&Outcome::Ba), row.get(&Outcome::Qmd)) {
            row.insert(Outcome::N, data::derive_stem_density(ba, qmd)?);
        }
        outcomes.push(row);
    }

    let n = plot_xy.len();
    let plots = (0..n)
        .map(|i| PlotObservation {
            plot_id: format!("P{:03}", i + 1),
            coords: plot_xy[i],
            outcomes: outcomes[i].clone(),
            predictors: preds[i].clone(),
        })
        .collect();
    let units = unit_meta
        .iter()
        .enumerate()
        .map(|(k, (stand, area))| PredictionUnit {
            unit_id: format!("U{:05}", k + 1),
            stand_id: stand.clone(),
            coords: unit_xy[k],
            area: *area,
            predictors: preds[n + k].clone(),
        })
        .collect();
    let names = cfg.predictors.iter().map(|g| g.name.clone()).collect();
    let dataset = Dataset::new(plots, units, names)?;
    Ok(SimOutput {
        dataset,
        truth: cfg.truth.clone(),
        unit_truth: outcomes[n..].to_vec(),
        w_plots: w[..n * m].to_vec(),
        w_units: w[n * m..].to_vec(),
    })
}

type UnitMeta = (String, f64);

/// Rectangular stands on a coarse lattice of slots; the last row and column
/// of cells only partly belong to the stand.
fn stands(cfg: &SimConfig, layout: &StandLayout) -> Result<(Vec<[f64; 2]>, Vec<UnitMeta>)> {
    let slot = layout.max_cells as f64 * layout.cell_m + layout.cell_m;
    let sx = (cfg.extent_m[0] / slot).floor() as usize;
    let sy = (cfg.extent_m[1] / slot).floor() as usize;
    if sx * sy < layout.count {
        return Err(Error::Config(format!("extent fits {} stands, {} requested", sx * sy, layout.count)));
    }
    let mut rng = substream(cfg.seed, "sim/stands");
    let mut slots = sample(&mut rng, sx * sy, layout.count).into_vec();
    slots.sort_unstable();
    let mut xy = Vec::new();
    let mut meta = Vec::new();
    let full = layout.cell_m * layout.cell_m;
    for (s, &k) in slots.iter().enumerate() {
        let x0 = cfg.origin_m[0] + (k % sx) as f64 * slot;
        let y0 = cfg.origin_m[1] + (k / sx) as f64 * slot;
        let cx = rng.random_range(layout.min_cells..=layout.max_cells);
        let cy = rng.random_range(layout.min_cells..=layout.max_cells);
        let frac_x: f64 = rng.random_range(0.2..=1.0);
        let frac_y: f64 = rng.random_range(0.2..=1.0);
        for j in 0..cy {
            for i in 0..cx {
                let mut area = full;
                if i + 1 == cx {
                    area *= frac_x;
                }
                if j + 1 == cy {
                    area *= frac_y;
                }
                xy.push([
                    x0 + (i as f64 + 0.5) * layout.cell_m,
                    y0 + (j as f64 + 0.5) * layout.cell_m,
                ]);
                meta.push((format!("S{:03}", s + 1), area));
            }
        }
    }
    Ok((xy, meta))
}

#[derive(Serialize)]
struct TruthFile<'a> {
    seed: u64,
    outcomes: &'a [Outcome],
    predictors: Vec<&'a str>,
    truth: &'a TrueParams,
    effective_range_km: Vec<f64>,
}

/// Writes `plots.csv`, `units.csv` (when stands exist), `truth.json` and
/// `units_truth.csv` into `dir`.
pub fn write_simulation(dir: impl AsRef<Path>, cfg: &SimConfig, out: &SimOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ds = &out.dataset;
    let plot_schema = data::PlotSchema::new(ds.outcome_names.clone(), ds.predictor_names.clone());
    data::write_plots(dir.join("plots.csv"), ds, &plot_schema)?;
    if !ds.units.is_empty() {
        data::write_units(dir.join("units.csv"), ds, &data::UnitSchema::new(ds.predictor_names.clone()))?;
        let path = dir.join("units_truth.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        let outs: Vec<Outcome> = out.unit_truth[0].keys().copied().collect();
        let mut header = vec!["unit_id".to_string(), "stand_id".to_string()];
        header.extend(outs.iter().map(|o| o.column().to_string()));
        w.write_record(&header).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        for (u, t) in ds.units.iter().zip(&out.unit_truth) {
            let mut row = vec![u.unit_id.clone(), u.stand_id.clone()];
            row.extend(outs.iter().map(|o| t[o].to_string()));
            w.write_record(&row).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let ranges = match cfg.lmc()? {
        Some(lmc) => (0..cfg.m())
            .map(|q| crate::spatial::effective_range_mv(q, &lmc))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let truth = TruthFile {
        seed: cfg.seed,
        outcomes: &cfg.outcomes,
        predictors: cfg.predictors.iter().map(|g| g.name.as_str()).collect(),
        truth: &out.truth,
        effective_range_km: ranges,
    };
    let path = dir.join("truth.json");
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
