//! End-to-end runs of the `forest-sae` binary on simulated data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use forest_sae::data::{load_plots, load_units, Dataset, Outcome, PlotSchema, UnitSchema};

const PREDICTORS: &str = r#"["mean", "sd", "p95", "elev", "aspect"]"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_forest-sae"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Simulated Brixen-like data in `<dir>/data`.
fn simulated(dir: &Path) {
    let o = run(&["simulate", "--seed", "5", "--out", "data"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn write_config(dir: &Path, name: &str, model: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 21
out = "out"
[data]
plots = "data/plots.csv"
units = "data/units.csv"
outcomes = ["GSV", "QMD", "BA", "N"]
predictors = {PREDICTORS}
[model]
{model}
[mcmc]
n_batches = 40
batch_len = 5
thin = 2
{extra}
"#
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn report_params(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[0].to_string()).collect()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn simulated_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let preds: Vec<String> = ["mean", "sd", "p95", "elev", "aspect"].map(String::from).to_vec();
    let plots = load_plots(
        dir.path().join("data/plots.csv"),
        &PlotSchema::new(Outcome::REPORTED.to_vec(), preds.clone()),
    )
    .unwrap();
    let units = load_units(dir.path().join("data/units.csv"), &UnitSchema::new(preds.clone())).unwrap();
    let ds = Dataset::new(plots, units, preds).unwrap();
    assert_eq!(ds.n_plots(), 146);
    assert_eq!(ds.stand_ids().len(), 40);
}

#[test]
fn uni_spatial_intercept_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let model = "family = \"uni_spatial\"\nvariant = \"intercept_only\"\noutcomes = [\"GSV\"]";
    write_config(dir.path(), "run.toml", model, "");
    let o = run(&["fit", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = report_params(&dir.path().join("out/fit_report.csv"));
    assert_eq!(
        rows,
        ["beta_GSV_intercept", "tau2_GSV", "sigma2_GSV", "phi_GSV", "eff_range_km_GSV", "R2_GSV"]
    );
    assert!(dir.path().join("out/samples/params.csv").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("T = 50"));
}

#[test]
fn mv_spatial_fit_predict_report() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    write_config(dir.path(), "run.toml", "family = \"mv_spatial\"", "[predict]\nexport_draws = true");
    let o = run(&["fit", "--config", "run.toml", "--threads", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = report_params(&dir.path().join("out/fit_report.csv"));
    let count = |prefix: &str| rows.iter().filter(|r| r.starts_with(prefix)).count();
    assert_eq!(count("Psi_"), 6);
    assert_eq!(count("AAt_"), 6);
    assert_eq!(count("eff_range_km_"), 3);
    assert_eq!(count("R2_"), 3);
    assert_eq!(count("beta_"), 18);

    let o = run(&["predict", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summaries = csv_rows(&dir.path().join("out/stand_summaries.csv"));
    assert_eq!(summaries.len(), 40 * 4);
    let draws = csv_rows(&dir.path().join("out/stand_draws.csv"));
    assert_eq!(draws.len(), 40 * 50);
    let ecdf = csv_rows(&dir.path().join("out/cv_ecdf.csv"));
    assert_eq!(ecdf.len(), 201);
    assert_eq!(&ecdf[200][1], "1");

    // report regenerates the same table from the samples directory
    let before = fs::read(dir.path().join("out/fit_report.csv")).unwrap();
    let o = run(&["report", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(before, fs::read(dir.path().join("out/fit_report.csv")).unwrap());
}

#[test]
fn single_stand_gives_one_row_per_outcome() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let units = fs::read_to_string(dir.path().join("data/units.csv")).unwrap();
    let one: Vec<&str> = units
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.split(',').nth(1) == Some("S001"))
        .map(|(_, l)| l)
        .collect();
    fs::write(dir.path().join("data/units.csv"), one.join("\n") + "\n").unwrap();
    write_config(dir.path(), "run.toml", "family = \"mv_nonspatial\"", "");
    assert!(run(&["fit", "--config", "run.toml"], dir.path()).status.success());
    let o = run(&["predict", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/stand_summaries.csv"));
    let outcomes: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(outcomes, ["GSV", "QMD", "BA", "N"]);
    assert!(rows.iter().all(|r| &r[0] == "S001"));
}

fn assert_error(o: &Output, code: i32, tag: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error code={tag}")), "{err}");
}

#[test]
fn schema_and_config_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    write_config(
        dir.path(),
        "bad_pred.toml",
        "family = \"uni_nonspatial\"\npredictors = [\"canopy\"]",
        "",
    );
    assert_error(&run(&["fit", "--config", "bad_pred.toml"], dir.path()), 3, "E_VALIDATION");

    let text = fs::read_to_string(write_config(dir.path(), "seedless.toml", "", "")).unwrap();
    fs::write(dir.path().join("seedless.toml"), text.replace("seed = 21", "")).unwrap();
    assert_error(&run(&["fit", "--config", "seedless.toml"], dir.path()), 2, "E_CONFIG");

    let o = run(&["fit", "--config", "seedless.toml", "--seed", "4", "--out", "o4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("o4/fit_report.csv").is_file());

    write_config(dir.path(), "missing.toml", "", "");
    fs::remove_file(dir.path().join("data/units.csv")).unwrap();
    assert_error(&run(&["predict", "--config", "missing.toml"], dir.path()), 2, "E_CONFIG");
}

#[test]
fn predict_rejects_samples_from_another_schema() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    write_config(dir.path(), "run.toml", "family = \"uni_nonspatial\"", "");
    assert!(run(&["fit", "--config", "run.toml"], dir.path()).status.success());
    // same files, fewer predictors declared: the unit loader sees an extra column
    let text = fs::read_to_string(dir.path().join("run.toml")).unwrap();
    fs::write(dir.path().join("narrow.toml"), text.replace(PREDICTORS, r#"["mean", "sd"]"#)).unwrap();
    assert_error(&run(&["predict", "--config", "narrow.toml"], dir.path()), 3, "E_VALIDATION");
}

#[test]
fn cv_runs_all_models_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    write_config(dir.path(), "cv.toml", "", "[cv]\nk = 3");
    let o = run(&["cv", "--config", "cv.toml", "--out", "a", "--threads", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = csv_rows(&dir.path().join("a/cv_report.csv"));
    assert_eq!(report.len(), 8 * 4 * 2);
    let o = run(&["cv", "--config", "cv.toml", "--out", "b", "--threads", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["cv_report.csv", "cv_corr.csv", "cv_folds.csv", "cv_audit.csv", "cv_status.csv", "cv_meta.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }

    write_config(dir.path(), "bigk.toml", "", "[cv]\nk = 1000");
    assert_error(&run(&["cv", "--config", "bigk.toml"], dir.path()), 2, "E_CONFIG");
}

#[test]
fn many_stand_grid_from_full_sim_config() {
    let dir = tempfile::tempdir().unwrap();
    let sim = r#"seed = 8
n_plots = 146
extent_m = [3000.0, 2000.0]
grid_spacing_m = 100.0
outcomes = ["GSV"]
out = "data"
[truth]
beta = [[6.0]]
psi = [0.1]
a = [0.0]
phi = [3.0]
[stands]
count = 824
min_cells = 1
max_cells = 1
"#;
    fs::write(dir.path().join("sim.toml"), sim).unwrap();
    let o = run(&["simulate", "--config", "sim.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = r#"seed = 2
[data]
plots = "data/plots.csv"
units = "data/units.csv"
outcomes = ["GSV"]
[model]
family = "uni_nonspatial"
outcomes = ["GSV"]
[mcmc]
n_batches = 20
batch_len = 5
thin = 2
"#;
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    assert!(run(&["fit", "--config", "run.toml"], dir.path()).status.success());
    let o = run(&["predict", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/stand_summaries.csv"));
    assert_eq!(rows.len(), 824);
    let mut stands: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    stands.dedup();
    assert_eq!(stands.len(), 824);
}
