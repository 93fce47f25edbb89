use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Outcome, PlotObservation, PredictionUnit};
use crate::error::{Error, Result};

/// Column layout of a plot file: `plot_id,x,y,<outcomes...>,<predictors...>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSchema {
    #[serde(default = "default_plot_id")]
    pub id: String,
    #[serde(default = "default_x")]
    pub x: String,
    #[serde(default = "default_y")]
    pub y: String,
    /// Outcome columns present in the file (named by [`Outcome::column`]).
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<Outcome>,
    pub predictors: Vec<String>,
}

/// Column layout of a unit file: `unit_id,stand_id,x,y,area,<predictors...>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSchema {
    #[serde(default = "default_unit_id")]
    pub id: String,
    #[serde(default = "default_stand_id")]
    pub stand: String,
    #[serde(default = "default_x")]
    pub x: String,
    #[serde(default = "default_y")]
    pub y: String,
    #[serde(default = "default_area")]
    pub area: String,
    pub predictors: Vec<String>,
}

fn default_plot_id() -> String {
    "plot_id".into()
}
fn default_unit_id() -> String {
    "unit_id".into()
}
fn default_stand_id() -> String {
    "stand_id".into()
}
fn default_x() -> String {
    "x".into()
}
fn default_y() -> String {
    "y".into()
}
fn default_area() -> String {
    "area".into()
}
fn default_outcomes() -> Vec<Outcome> {
    Outcome::REPORTED.to_vec()
}

impl PlotSchema {
    pub fn new(outcomes: Vec<Outcome>, predictors: Vec<String>) -> Self {
        PlotSchema {
            id: default_plot_id(),
            x: default_x(),
            y: default_y(),
            outcomes,
            predictors,
        }
    }
}

impl UnitSchema {
    pub fn new(predictors: Vec<String>) -> Self {
        UnitSchema {
            id: default_unit_id(),
            stand: default_stand_id(),
            x: default_x(),
            y: default_y(),
            area: default_area(),
            predictors,
        }
    }
}

struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path, expected: &[&str]) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::validation(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::validation(format!("{}: file is empty", path.display())));
    }
    let mut columns = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        let name = name.trim().to_string();
        if columns.insert(name.clone(), i).is_some() {
            return Err(Error::Validation {
                message: format!("{}: duplicate column", path.display()),
                row: Some(1),
                column: Some(name),
            });
        }
    }
    let expected_set: HashSet<&str> = expected.iter().copied().collect();
    let mut unknown: Vec<&str> = header
        .iter()
        .map(str::trim)
        .filter(|c| !expected_set.contains(c))
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(Error::Validation {
            message: format!("{}: unknown column(s) {}", path.display(), unknown.join(", ")),
            row: Some(1),
            column: Some(unknown[0].to_string()),
        });
    }
    if let Some(missing) = expected.iter().find(|c| !columns.contains_key(**c)) {
        return Err(Error::Validation {
            message: format!("{}: missing column", path.display()),
            row: Some(1),
            column: Some(missing.to_string()),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::Validation {
                message: format!("{}: malformed record: {e}", path.display()),
                row: line,
                column: None,
            }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: no data rows", path.display())));
    }
    Ok(Table { columns, rows })
}

impl Table {
    fn text<'a>(&self, rec: &'a csv::StringRecord, line: usize, column: &str) -> Result<&'a str> {
        let s = rec[self.columns[column]].trim();
        if s.is_empty() {
            return Err(Error::at("empty cell", line, column));
        }
        Ok(s)
    }

    fn number(&self, rec: &csv::StringRecord, line: usize, column: &str) -> Result<f64> {
        let s = self.text(rec, line, column)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::at(format!("non-numeric value '{s}'"), line, column)),
        }
    }
}

/// Reads and validates a plot file. Row order is preserved.
pub fn load_plots(path: impl AsRef<Path>, schema: &PlotSchema) -> Result<Vec<PlotObservation>> {
    let path = path.as_ref();
    let mut expected: Vec<&str> = vec![&schema.id, &schema.x, &schema.y];
    expected.extend(schema.outcomes.iter().map(|o| o.column()));
    expected.extend(schema.predictors.iter().map(String::as_str));
    let table = read_table(path, &expected)?;

    let mut seen = HashSet::new();
    let mut plots = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let plot_id = table.text(rec, line, &schema.id)?.to_string();
        if !seen.insert(plot_id.clone()) {
            return Err(Error::at(format!("duplicate plot_id '{plot_id}'"), line, &schema.id));
        }
        let coords = [table.number(rec, line, &schema.x)?, table.number(rec, line, &schema.y)?];
        let mut outcomes = BTreeMap::new();
        for &o in &schema.outcomes {
            let v = table.number(rec, line, o.column())?;
            if !(v > 0.0) {
                return Err(Error::at(format!("{o} must be strictly positive, got {v}"), line, o.column()));
            }
            outcomes.insert(o, v);
        }
        let predictors = schema
            .predictors
            .iter()
            .map(|p| table.number(rec, line, p))
            .collect::<Result<Vec<_>>>()?;
        plots.push(PlotObservation {
            plot_id,
            coords,
            outcomes,
            predictors,
        });
    }
    Ok(plots)
}

/// Reads and validates a prediction-unit file. Row order is preserved.
pub fn load_units(path: impl AsRef<Path>, schema: &UnitSchema) -> Result<Vec<PredictionUnit>> {
    let path = path.as_ref();
    let mut expected: Vec<&str> = vec![&schema.id, &schema.stand, &schema.x, &schema.y, &schema.area];
    expected.extend(schema.predictors.iter().map(String::as_str));
    let table = read_table(path, &expected)?;

    let mut seen = HashSet::new();
    let mut units = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let unit_id = table.text(rec, line, &schema.id)?.to_string();
        if !seen.insert(unit_id.clone()) {
            return Err(Error::at(format!("duplicate unit_id '{unit_id}'"), line, &schema.id));
        }
        let stand_id = table.text(rec, line, &schema.stand)?.to_string();
        let coords = [table.number(rec, line, &schema.x)?, table.number(rec, line, &schema.y)?];
        let area = table.number(rec, line, &schema.area)?;
        if !(area > 0.0) {
            return Err(Error::at(format!("area must be positive, got {area}"), line, &schema.area));
        }
        let predictors = schema
            .predictors
            .iter()
            .map(|p| table.number(rec, line, p))
            .collect::<Result<Vec<_>>>()?;
        units.push(PredictionUnit {
            unit_id,
            stand_id,
            coords,
            area,
            predictors,
        });
    }
    Ok(units)
}

/// Writes plots in the layout `load_plots` reads. Floats use shortest
/// round-trip formatting, so a write/load cycle is lossless.
pub fn write_plots(path: impl AsRef<Path>, data: &Dataset, schema: &PlotSchema) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec![schema.id.clone(), schema.x.clone(), schema.y.clone()];
    header.extend(schema.outcomes.iter().map(|o| o.column().to_string()));
    header.extend(schema.predictors.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for p in &data.plots {
        let mut row = vec![p.plot_id.clone(), p.coords[0].to_string(), p.coords[1].to_string()];
        for o in &schema.outcomes {
            let v = p
                .outcomes
                .get(o)
                .ok_or_else(|| Error::validation(format!("plot '{}' lacks {o}", p.plot_id)))?;
            row.push(v.to_string());
        }
        for name in &schema.predictors {
            let j = data
                .predictor_index(name)
                .ok_or_else(|| Error::Config(format!("unknown predictor '{name}'")))?;
            row.push(p.predictors[j].to_string());
        }
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_units(path: impl AsRef<Path>, data: &Dataset, schema: &UnitSchema) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec![
        schema.id.clone(),
        schema.stand.clone(),
        schema.x.clone(),
        schema.y.clone(),
        schema.area.clone(),
    ];
    header.extend(schema.predictors.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for u in &data.units {
        let mut row = vec![
            u.unit_id.clone(),
            u.stand_id.clone(),
            u.coords[0].to_string(),
            u.coords[1].to_string(),
            u.area.to_string(),
        ];
        for name in &schema.predictors {
            let j = data
                .predictor_index(name)
                .ok_or_else(|| Error::Config(format!("unknown predictor '{name}'")))?;
            row.push(u.predictors[j].to_string());
        }
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
