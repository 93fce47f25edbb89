//! Samples directory: `params.csv`, `w.csv` (spatial families) and `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcceptanceLog, Draw, Family, McmcSchedule, ModelSpec, PosteriorSamples, PriorSpec};
use crate::data::OutcomeTransform;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: ModelSpec,
    priors: PriorSpec,
    schedule: McmcSchedule,
    seed: u64,
    transform: OutcomeTransform,
    plot_ids: Vec<String>,
    coords_km: Vec<[f64; 2]>,
    n_draws: usize,
    acceptance: Vec<AcceptanceLog>,
}

/// Column names of `params.csv` for a model.
pub fn param_columns(spec: &ModelSpec) -> Vec<String> {
    let m = spec.m();
    let mut cols = spec.beta_names();
    let lower = |name: &str, cols: &mut Vec<String>| {
        for i in 0..m {
            for j in 0..=i {
                cols.push(format!("{name}_{}_{}", i + 1, j + 1));
            }
        }
    };
    match spec.family {
        Family::UniNonspatial => cols.extend(spec.outcomes.iter().map(|o| format!("tau2_{o}"))),
        Family::UniSpatial => {
            cols.extend(spec.outcomes.iter().map(|o| format!("tau2_{o}")));
            cols.extend(spec.outcomes.iter().map(|o| format!("sigma2_{o}")));
        }
        Family::MvNonspatial => lower("Psi", &mut cols),
        Family::MvSpatial => {
            lower("Psi", &mut cols);
            lower("A", &mut cols);
        }
    }
    if spec.family.is_spatial() {
        cols.extend(spec.outcomes.iter().map(|o| format!("phi_{o}")));
    }
    cols
}

fn param_row(spec: &ModelSpec, d: &Draw) -> Vec<f64> {
    let m = spec.m();
    let mut row = d.beta.clone();
    let lower = |mat: &[f64], row: &mut Vec<f64>| {
        for i in 0..m {
            for j in 0..=i {
                row.push(mat[i * m + j]);
            }
        }
    };
    match spec.family {
        Family::UniNonspatial => row.extend(&d.tau2),
        Family::UniSpatial => {
            row.extend(&d.tau2);
            row.extend(&d.sigma2);
        }
        Family::MvNonspatial => lower(&d.psi, &mut row),
        Family::MvSpatial => {
            lower(&d.psi, &mut row);
            lower(&d.a, &mut row);
        }
    }
    if spec.family.is_spatial() {
        row.extend(&d.phi);
    }
    row
}

fn draw_from_row(spec: &ModelSpec, row: &[f64]) -> Draw {
    let m = spec.m();
    let p: usize = spec.p_per_outcome().iter().sum();
    let mut it = row.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { (&mut it).take(k).collect() };
    let mut d = Draw {
        beta: take(p),
        ..Default::default()
    };
    let tri = m * (m + 1) / 2;
    let unpack = |v: &[f64], symmetric: bool| -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                out[i * m + j] = v[k];
                if symmetric {
                    out[j * m + i] = v[k];
                }
                k += 1;
            }
        }
        out
    };
    match spec.family {
        Family::UniNonspatial => d.tau2 = take(m),
        Family::UniSpatial => {
            d.tau2 = take(m);
            d.sigma2 = take(m);
        }
        Family::MvNonspatial => d.psi = unpack(&take(tri), true),
        Family::MvSpatial => {
            d.psi = unpack(&take(tri), true);
            d.a = unpack(&take(tri), false);
        }
    }
    if spec.family.is_spatial() {
        d.phi = take(m);
    }
    d
}

/// Writes a samples directory, creating it if needed. Every draw is checked
/// against the parameter domains first.
pub fn write_samples(dir: impl AsRef<Path>, samples: &PosteriorSamples) -> Result<()> {
    let dir = dir.as_ref();
    samples.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = &samples.spec;

    let path = dir.join("params.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(param_columns(spec)).map_err(|e| Error::csv(&path, e))?;
    for d in &samples.draws {
        w.write_record(param_row(spec, d).iter().map(|v| v.to_string()))
            .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if spec.family.is_spatial() {
        let path = dir.join("w.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        let header: Vec<String> = samples
            .plot_ids
            .iter()
            .flat_map(|id| spec.outcomes.iter().map(move |o| format!("{id}:{o}")))
            .collect();
        w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
        for d in &samples.draws {
            w.write_record(d.w.iter().map(|v| v.to_string())).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let meta = Meta {
        spec: spec.clone(),
        priors: samples.priors.clone(),
        schedule: samples.schedule.clone(),
        seed: samples.schedule.seed,
        transform: samples.transform.clone(),
        plot_ids: samples.plot_ids.clone(),
        coords_km: samples.coords_km.clone(),
        n_draws: samples.draws.len(),
        acceptance: samples.acceptance.clone(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_matrix(path: &Path, want_header: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| Error::csv(path, e))?.iter().map(String::from).collect();
    if header != want_header {
        return Err(Error::validation(format!(
            "{}: columns do not match the model in meta.json",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::at(format!("non-numeric value '{s}' in {}", path.display()), i + 2, &header[j]))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a directory written by [`write_samples`].
pub fn read_samples(dir: impl AsRef<Path>) -> Result<PosteriorSamples> {
    let dir = dir.as_ref();
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta =
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    let spec = meta.spec;
    let rows = read_matrix(&dir.join("params.csv"), &param_columns(&spec))?;
    let mut draws: Vec<Draw> = rows.iter().map(|r| draw_from_row(&spec, r)).collect();
    if spec.family.is_spatial() {
        let header: Vec<String> = meta
            .plot_ids
            .iter()
            .flat_map(|id| spec.outcomes.iter().map(move |o| format!("{id}:{o}")))
            .collect();
        let w = read_matrix(&dir.join("w.csv"), &header)?;
        if w.len() != draws.len() {
            return Err(Error::validation("w.csv and params.csv have different draw counts"));
        }
        for (d, row) in draws.iter_mut().zip(w) {
            d.w = row;
        }
    }
    let samples = PosteriorSamples {
        spec,
        priors: meta.priors,
        schedule: meta.schedule,
        transform: meta.transform,
        plot_ids: meta.plot_ids,
        coords_km: meta.coords_km,
        draws,
        acceptance: meta.acceptance,
    };
    samples.validate()?;
    Ok(samples)
}
