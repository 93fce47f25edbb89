//! TOML run and simulation configuration.
//!
//! Relative paths inside a config file resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{
    load_plots, load_units, transform_outcomes, Dataset, Outcome, OutcomeTransform, PlotSchema, TransformKind,
    UnitSchema,
};
use crate::error::{Error, Result};
use crate::evaluation::{CvModel, CvOptions};
use crate::prediction::{NAggregation, PredictOptions, DEFAULT_UNIT_CAP};
use crate::samplers::{Family, McmcSchedule, ModelData, ModelSpec, PriorSpec, Variant};
use crate::sim::SimConfig;

/// Values given on the command line; each replaces the config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory, either here or on the command line.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Replaces the data-driven default priors when present.
    pub priors: Option<PriorSpec>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub cv: CvConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub plots: PathBuf,
    pub units: Option<PathBuf>,
    /// Outcome columns present in the plot file.
    #[serde(default = "all_outcomes")]
    pub outcomes: Vec<Outcome>,
    /// Predictor columns, shared by the plot and unit files.
    #[serde(default)]
    pub predictors: Vec<String>,
}

fn all_outcomes() -> Vec<Outcome> {
    Outcome::REPORTED.to_vec()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "modeled_outcomes")]
    pub outcomes: Vec<Outcome>,
    /// Subset of the data predictors for `all_predictors`; every one if absent.
    pub predictors: Option<Vec<String>>,
    #[serde(default)]
    pub transform: TransformKind,
}

fn default_family() -> Family {
    Family::MvSpatial
}
fn default_variant() -> Variant {
    Variant::AllPredictors
}
fn modeled_outcomes() -> Vec<Outcome> {
    Outcome::MODELED.to_vec()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: default_family(),
            variant: default_variant(),
            outcomes: modeled_outcomes(),
            predictors: None,
            transform: TransformKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub n_batches: usize,
    pub batch_len: usize,
    pub burn_in_frac: f64,
    pub thin: usize,
    pub target_accept: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let s = McmcSchedule::standard(0);
        McmcConfig {
            n_batches: s.n_batches,
            batch_len: s.batch_len,
            burn_in_frac: s.burn_in_frac,
            thin: s.thin,
            target_accept: s.target_accept,
        }
    }
}

impl McmcConfig {
    pub fn schedule(&self, seed: u64) -> Result<McmcSchedule> {
        let s = McmcSchedule {
            n_batches: self.n_batches,
            batch_len: self.batch_len,
            burn_in_frac: self.burn_in_frac,
            thin: self.thin,
            target_accept: self.target_accept,
            seed,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Samples directory; `<out>/samples` if absent.
    pub samples: Option<PathBuf>,
    pub unit_cap: usize,
    /// Also write every stand's draws.
    pub export_draws: bool,
    pub n_aggregation: NAggregation,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            samples: None,
            unit_cap: DEFAULT_UNIT_CAP,
            export_draws: false,
            n_aggregation: NAggregation::Unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    /// Hex flat-to-flat width, m.
    pub cell_size: f64,
    pub origin: Option<[f64; 2]>,
    /// Models to compare; all eight if absent.
    pub models: Option<Vec<CvModel>>,
    pub unblocked: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 20,
            cell_size: 250.0,
            origin: None,
            models: None,
            unblocked: false,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} file {} does not exist", p.display())))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    /// Loads `path`, resolves its relative paths and applies `overrides`.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        cfg.apply(overrides);
        Ok(cfg)
    }

    /// Makes every relative path relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        self.out = resolve(base, &self.out);
        self.data.plots = resolve(base, &self.data.plots);
        self.data.units = self.data.units.as_ref().map(|u| resolve(base, u));
        self.predict.samples = self.predict.samples.as_ref().map(|s| resolve(base, s));
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config key 'seed' or --seed)".into()))
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.predict.samples.clone().unwrap_or_else(|| self.out.join("samples"))
    }

    pub fn transform(&self) -> OutcomeTransform {
        OutcomeTransform::uniform(self.model.transform)
    }

    /// Checks the seed and that the plot file (and, if `need_units`, the
    /// unit file) exists.
    pub fn validate(&self, need_units: bool) -> Result<()> {
        self.seed()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        require_file(&self.data.plots, "plot")?;
        match (&self.data.units, need_units) {
            (Some(u), _) => require_file(u, "unit"),
            (None, true) => Err(Error::Config("data.units is required for this command".into())),
            (None, false) => Ok(()),
        }
    }

    /// Loads the plots, and the units when configured, on the original scale.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let preds = self.data.predictors.clone();
        let plots = load_plots(&self.data.plots, &PlotSchema::new(self.data.outcomes.clone(), preds.clone()))?;
        let units = match &self.data.units {
            Some(u) => load_units(u, &UnitSchema::new(preds.clone()))?,
            None => Vec::new(),
        };
        Dataset::new(plots, units, preds)
    }

    /// Model specification; predictor names must come from the data schema.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let preds = match &m.predictors {
            Some(list) => {
                if let Some(bad) = list.iter().find(|p| !self.data.predictors.contains(p)) {
                    return Err(Error::Validation {
                        message: format!("model predictor '{bad}' is not a data predictor"),
                        row: None,
                        column: Some(bad.clone()),
                    });
                }
                list.clone()
            }
            None => self.data.predictors.clone(),
        };
        if let Some(o) = m.outcomes.iter().find(|o| !self.data.outcomes.contains(o)) {
            return Err(Error::Config(format!("model outcome {o} is not among the data outcomes")));
        }
        ModelSpec::with_variant(m.family, m.outcomes.clone(), m.variant, &preds)
    }

    /// Model-scale design for the configured fit.
    pub fn model_data(&self, data: &Dataset) -> Result<ModelData> {
        let spec = self.model_spec()?;
        let scaled = transform_outcomes(data, &self.transform())?;
        ModelData::from_dataset(&scaled, &spec)
    }

    pub fn predict_options(&self) -> Result<PredictOptions> {
        let mut o = PredictOptions::new(self.seed()?);
        o.unit_cap = self.predict.unit_cap;
        o.n_aggregation = self.predict.n_aggregation;
        Ok(o)
    }

    pub fn cv_options(&self) -> Result<CvOptions> {
        let seed = self.seed()?;
        let mut o = CvOptions::new(seed);
        o.k = self.cv.k;
        o.cell_size = self.cv.cell_size;
        o.origin = self.cv.origin;
        o.schedule = self.mcmc.schedule(seed)?;
        o.priors = self.priors.clone();
        o.transform = self.transform();
        o.unblocked = self.cv.unblocked;
        o.n_aggregation = self.predict.n_aggregation;
        Ok(o)
    }

    pub fn cv_models(&self) -> Vec<CvModel> {
        self.cv.models.clone().unwrap_or_else(CvModel::all)
    }
}

/// Reads a simulation config. The file is either a full [`SimConfig`] or
/// `preset = "brixen_like"` with an optional seed and `out`. A command-line
/// seed replaces the file's.
pub fn load_sim_config(path: impl AsRef<Path>, seed: Option<u64>) -> Result<(SimConfig, Option<PathBuf>)> {
    let path = path.as_ref();
    let mut table: toml::Table =
        toml::from_str(&read_text(path)?).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let out = match table.remove("out") {
        Some(toml::Value::String(s)) => Some(resolve(base, Path::new(&s))),
        Some(_) => return Err(Error::Config("'out' must be a string".into())),
        None => None,
    };
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} is too large for a config file")))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    let cfg = match table.remove("preset") {
        Some(toml::Value::String(name)) => {
            let seed = match table.remove("seed") {
                Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
                _ => return Err(Error::Config("a non-negative integer seed is required".into())),
            };
            if let Some(k) = table.keys().next() {
                return Err(Error::Config(format!("unexpected key '{k}' next to a preset")));
            }
            sim_preset(&name, seed)?
        }
        Some(_) => return Err(Error::Config("'preset' must be a string".into())),
        None => toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().replace('\n', " ")))?,
    };
    cfg.validate()?;
    Ok((cfg, out))
}

pub fn sim_preset(name: &str, seed: u64) -> Result<SimConfig> {
    match name {
        "brixen_like" => Ok(SimConfig::brixen_like(seed)),
        other => Err(Error::Config(format!("unknown simulation preset '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[data]
plots = "plots.csv"
predictors = ["mean", "sd"]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.model.family, Family::MvSpatial);
        assert_eq!(cfg.model.outcomes, Outcome::MODELED.to_vec());
        assert_eq!(cfg.cv.k, 20);
        assert_eq!(cfg.mcmc.schedule(1).unwrap().n_retained(), 250);
        assert_eq!(cfg.model_spec().unwrap().predictors[0], ["mean", "sd"]);
    }

    #[test]
    fn overrides_and_rebase() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.rebase(Path::new("/runs/a"));
        assert_eq!(cfg.data.plots, Path::new("/runs/a/plots.csv"));
        assert_eq!(cfg.samples_dir(), Path::new("/runs/a/out/samples"));
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("elsewhere".into()),
            ..Default::default()
        });
        assert_eq!(cfg.seed().unwrap(), 9);
        assert_eq!(cfg.out, Path::new("elsewhere"));
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = RunConfig::from_toml("[data]\nplots = \"p.csv\"\n").unwrap();
        assert!(matches!(cfg.seed(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_and_predictors_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nbogus = 2\n[data]\nplots = \"p\"\n").is_err());
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.model.predictors = Some(vec!["nope".into()]);
        assert_eq!(cfg.model_spec().unwrap_err().exit_code(), 3);
    }

    #[test]
    fn cv_models_parse() {
        let text = format!(
            "{MINIMAL}\n[cv]\nk = 5\nmodels = [{{ family = \"uni_spatial\", variant = \"intercept_only\" }}]\n"
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.cv_models().len(), 1);
        assert_eq!(cfg.cv_options().unwrap().k, 5);
    }

    #[test]
    fn sim_preset_and_seed_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sim.toml");
        fs::write(&p, "preset = \"brixen_like\"\nseed = 3\nout = \"data\"\n").unwrap();
        let (cfg, out) = load_sim_config(&p, Some(11)).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.n_plots, 146);
        assert_eq!(out.unwrap(), dir.path().join("data"));
        fs::write(&p, "preset = \"nowhere\"\nseed = 3\n").unwrap();
        assert!(load_sim_config(&p, None).is_err());
    }
}
