//! Inventory plots, prediction units and stand-structure identities.

mod io;
mod transform;

pub use io::{load_plots, load_units, write_plots, write_units, PlotSchema, UnitSchema};
pub use transform::{transform_outcomes, OutcomeTransform, TransformKind};

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-structure outcome, in canonical block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    /// Growing stock volume, m³/ha.
    Gsv,
    /// Quadratic mean diameter, cm.
    Qmd,
    /// Basal area, m²/ha.
    Ba,
    /// Stem density, 1/ha.
    N,
}

impl Outcome {
    /// Modeled outcomes in block order.
    pub const MODELED: [Outcome; 3] = [Outcome::Gsv, Outcome::Qmd, Outcome::Ba];
    /// Reported outcomes, including the derived stem density.
    pub const REPORTED: [Outcome; 4] = [Outcome::Gsv, Outcome::Qmd, Outcome::Ba, Outcome::N];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Gsv => "GSV",
            Outcome::Qmd => "QMD",
            Outcome::Ba => "BA",
            Outcome::N => "N",
        }
    }

    /// CSV column holding this outcome.
    pub fn column(self) -> &'static str {
        match self {
            Outcome::Gsv => "gsv",
            Outcome::Qmd => "qmd",
            Outcome::Ba => "ba",
            Outcome::N => "n",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Outcome::Gsv => "m3/ha",
            Outcome::Qmd => "cm",
            Outcome::Ba => "m2/ha",
            Outcome::N => "1/ha",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gsv" => Ok(Outcome::Gsv),
            "qmd" => Ok(Outcome::Qmd),
            "ba" => Ok(Outcome::Ba),
            "n" => Ok(Outcome::N),
            other => Err(Error::Config(format!("unknown outcome '{other}'"))),
        }
    }
}

/// One inventory plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotObservation {
    pub plot_id: String,
    /// Easting/northing, meters.
    pub coords: [f64; 2],
    pub outcomes: BTreeMap<Outcome, f64>,
    /// Aligned with [`Dataset::predictor_names`].
    pub predictors: Vec<f64>,
}

/// One grid cell (or the part of it inside a stand).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionUnit {
    pub unit_id: String,
    pub stand_id: String,
    /// Cell centroid, meters.
    pub coords: [f64; 2],
    /// Area inside the stand, m².
    pub area: f64,
    pub predictors: Vec<f64>,
}

/// Scale the plot outcomes are currently expressed on.
#[derive(Debug, Clone, PartialEq)]
pub enum Scale {
    Original,
    Model(OutcomeTransform),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub plots: Vec<PlotObservation>,
    pub units: Vec<PredictionUnit>,
    /// Outcomes present on every plot, canonical order.
    pub outcome_names: Vec<Outcome>,
    pub predictor_names: Vec<String>,
    pub scale: Scale,
}

impl Dataset {
    /// Validates and assembles a dataset on the original scale.
    pub fn new(
        plots: Vec<PlotObservation>,
        units: Vec<PredictionUnit>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        if plots.len() < 2 {
            return Err(Error::validation(format!(
                "need at least 2 plots, got {}",
                plots.len()
            )));
        }
        let mut outcome_names: Vec<Outcome> = plots[0].outcomes.keys().copied().collect();
        outcome_names.sort();
        let mut ids = HashSet::new();
        for (i, p) in plots.iter().enumerate() {
            if !ids.insert(p.plot_id.as_str()) {
                return Err(Error::validation(format!("duplicate plot_id '{}'", p.plot_id)));
            }
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::validation(format!("plot '{}' has non-finite coordinates", p.plot_id)));
            }
            if p.predictors.len() != predictor_names.len() {
                return Err(Error::validation(format!(
                    "plot {i} carries {} predictors, schema has {}",
                    p.predictors.len(),
                    predictor_names.len()
                )));
            }
            if !p.outcomes.keys().copied().eq(outcome_names.iter().copied()) {
                return Err(Error::validation(format!(
                    "plot '{}' does not carry the same outcome set as the first plot",
                    p.plot_id
                )));
            }
            for (o, v) in &p.outcomes {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(Error::validation(format!(
                        "plot '{}' has non-positive {o} = {v}",
                        p.plot_id
                    )));
                }
            }
        }
        let min_d = min_pairwise_distance(plots.iter().map(|p| p.coords));
        if !(min_d > 0.0) {
            return Err(Error::validation("plot coordinates must be distinct"));
        }
        for u in &units {
            if !(u.area > 0.0) || !u.area.is_finite() {
                return Err(Error::validation(format!("unit '{}' has non-positive area", u.unit_id)));
            }
            if u.predictors.len() != predictor_names.len() {
                return Err(Error::validation(format!(
                    "unit '{}' carries {} predictors, schema has {}",
                    u.unit_id,
                    u.predictors.len(),
                    predictor_names.len()
                )));
            }
        }
        Ok(Dataset {
            plots,
            units,
            outcome_names,
            predictor_names,
            scale: Scale::Original,
        })
    }

    pub fn n_plots(&self) -> usize {
        self.plots.len()
    }

    pub fn predictor_index(&self, name: &str) -> Option<usize> {
        self.predictor_names.iter().position(|p| p == name)
    }

    /// Distinct stand ids in first-appearance order.
    pub fn stand_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.units
            .iter()
            .filter(|u| seen.insert(u.stand_id.as_str()))
            .map(|u| u.stand_id.clone())
            .collect()
    }

    /// Observed values of one outcome across plots.
    pub fn outcome_column(&self, outcome: Outcome) -> Option<Vec<f64>> {
        self.plots.iter().map(|p| p.outcomes.get(&outcome).copied()).collect()
    }

    /// Copy restricted to the plots at `idx` (units dropped).
    pub fn subset_plots(&self, idx: &[usize]) -> Dataset {
        Dataset {
            plots: idx.iter().map(|&i| self.plots[i].clone()).collect(),
            units: Vec::new(),
            outcome_names: self.outcome_names.clone(),
            predictor_names: self.predictor_names.clone(),
            scale: self.scale.clone(),
        }
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn min_pairwise_distance(coords: impl Iterator<Item = [f64; 2]>) -> f64 {
    let pts: Vec<[f64; 2]> = coords.collect();
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in 0..i {
            best = best.min(distance(pts[i], pts[j]));
        }
    }
    best
}

fn check_dbh(dbh: &[f64]) -> Result<()> {
    if dbh.is_empty() {
        return Err(Error::Domain("tree list is empty".into()));
    }
    if let Some(bad) = dbh.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::validation(format!("DBH must be positive, got {bad}")));
    }
    Ok(())
}

/// Quadratic mean diameter (cm) of a tree list with DBH in cm.
pub fn compute_qmd(dbh: &[f64]) -> Result<f64> {
    check_dbh(dbh)?;
    let mean_sq = dbh.iter().map(|d| d * d).sum::<f64>() / dbh.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Basal area (m²/ha) of a tree list with DBH in cm on a plot of `plot_area_ha`.
pub fn compute_ba(dbh: &[f64], plot_area_ha: f64) -> Result<f64> {
    check_dbh(dbh)?;
    if !(plot_area_ha > 0.0) {
        return Err(Error::Domain(format!("plot area must be positive, got {plot_area_ha}")));
    }
    let sum_sq: f64 = dbh.iter().map(|d| (d / 100.0).powi(2)).sum();
    Ok(FRAC_PI_4 * sum_sq / plot_area_ha)
}

/// Stem density (1/ha) implied by basal area (m²/ha) and QMD (cm).
pub fn derive_stem_density(ba: f64, qmd: f64) -> Result<f64> {
    if !(ba > 0.0) || !(qmd > 0.0) {
        return Err(Error::Domain(format!(
            "basal area and QMD must be positive, got ({ba}, {qmd})"
        )));
    }
    Ok(stem_density(ba, qmd))
}

#[inline]
pub(crate) fn stem_density(ba: f64, qmd: f64) -> f64 {
    let r = qmd / 100.0;
    ba / (FRAC_PI_4 * r * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn qmd_examples() {
        assert_eq!(compute_qmd(&[30.0]).unwrap(), 30.0);
        assert!((compute_qmd(&[30.0, 40.0]).unwrap() - 35.35534).abs() < 1e-5);
        assert_eq!(compute_qmd(&[10.0; 4]).unwrap(), 10.0);
        assert!(matches!(compute_qmd(&[]), Err(Error::Domain(_))));
        assert!(matches!(compute_qmd(&[10.0, -1.0]), Err(Error::Validation { .. })));
    }

    #[test]
    fn ba_examples() {
        assert!((compute_ba(&[100.0], 1.0).unwrap() - 0.7853982).abs() < 1e-7);
        assert!((compute_ba(&[30.0], 1.0).unwrap() - 0.0706858).abs() < 1e-7);
        assert!(compute_ba(&[], 1.0).is_err());
        assert!(compute_ba(&[30.0], 0.0).is_err());
    }

    #[test]
    fn stem_density_examples() {
        assert_eq!(derive_stem_density(PI / 4.0, 100.0).unwrap(), 1.0);
        assert!((derive_stem_density(44.8, 29.8).unwrap() - 642.32).abs() < 0.01);
        let trees = [20.0; 50];
        let n = derive_stem_density(compute_ba(&trees, 1.0).unwrap(), compute_qmd(&trees).unwrap()).unwrap();
        assert!((n - 50.0).abs() < 1e-10);
        assert!(derive_stem_density(0.0, 10.0).is_err());
        assert!(derive_stem_density(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn qmd_ba_density_round_trip(
            dbh in prop::collection::vec(5.0f64..120.0, 1..200),
            area in 0.01f64..2.0,
        ) {
            let ba = compute_ba(&dbh, area).unwrap();
            let qmd = compute_qmd(&dbh).unwrap();
            let n = derive_stem_density(ba, qmd).unwrap();
            let truth = dbh.len() as f64 / area;
            prop_assert!(((n - truth) / truth).abs() < 1e-10);
        }
    }

    fn plot(id: &str, x: f64, gsv: f64) -> PlotObservation {
        PlotObservation {
            plot_id: id.into(),
            coords: [x, 0.0],
            outcomes: BTreeMap::from([(Outcome::Gsv, gsv)]),
            predictors: vec![1.0],
        }
    }

    #[test]
    fn dataset_rejects_bad_plots() {
        let names = vec!["p".to_string()];
        assert!(Dataset::new(vec![plot("a", 0.0, 1.0)], vec![], names.clone()).is_err());
        assert!(Dataset::new(vec![plot("a", 0.0, 1.0), plot("a", 1.0, 1.0)], vec![], names.clone()).is_err());
        assert!(Dataset::new(vec![plot("a", 0.0, 1.0), plot("b", 0.0, 1.0)], vec![], names.clone()).is_err());
        assert!(Dataset::new(vec![plot("a", 0.0, 1.0), plot("b", 1.0, -2.0)], vec![], names.clone()).is_err());
        let ok = Dataset::new(vec![plot("a", 0.0, 1.0), plot("b", 1.0, 2.0)], vec![], names).unwrap();
        assert_eq!(ok.outcome_names, vec![Outcome::Gsv]);
    }

    #[test]
    fn outcome_order_is_canonical() {
        let mut v = vec![Outcome::N, Outcome::Ba, Outcome::Gsv, Outcome::Qmd];
        v.sort();
        assert_eq!(v, Outcome::REPORTED.to_vec());
        assert_eq!("qmd".parse::<Outcome>().unwrap(), Outcome::Qmd);
    }
}
