use std::ffi::{CStr, CString};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use forest_sae_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = fs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn stem_density_matches_disc_area() {
    let mut n = 0.0;
    assert_eq!(unsafe { fs_derive_stem_density(30.0, 25.0, &mut n) }, FsStatus::Ok);
    // 30 m²/ha of trees each 25 cm across
    let disc = std::f64::consts::PI * 0.125 * 0.125;
    assert!((n - 30.0 / disc).abs() < 1e-9 * n);
    assert!(fs_last_error().is_null());

    assert_eq!(unsafe { fs_derive_stem_density(-1.0, 25.0, &mut n) }, FsStatus::Domain);
    assert!(last_error().contains("positive"));
    assert_eq!(unsafe { fs_derive_stem_density(1.0, 25.0, ptr::null_mut()) }, FsStatus::InvalidArgument);
}

#[test]
fn effective_range_is_five_percent_correlation() {
    let mut r = 0.0;
    assert_eq!(unsafe { fs_effective_range(3.0, &mut r) }, FsStatus::Ok);
    assert!(((-3.0 * r).exp() - 0.05).abs() < 1e-12);
    assert_ne!(unsafe { fs_effective_range(0.0, &mut r) }, FsStatus::Ok);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bad_arguments_are_reported_not_crashed() {
    let mut cfg: *mut FsConfig = ptr::null_mut();
    assert_eq!(unsafe { fs_config_load(ptr::null(), &mut cfg) }, FsStatus::InvalidArgument);
    let missing = cstr("/nonexistent/run.toml");
    assert_ne!(unsafe { fs_config_load(missing.as_ptr(), &mut cfg) }, FsStatus::Ok);
    assert!(cfg.is_null());
    assert_eq!(unsafe { fs_fit(ptr::null(), ptr::null_mut()) }, FsStatus::InvalidArgument);
    assert_eq!(unsafe { fs_samples_n_draws(ptr::null()) }, 0);
    assert_eq!(unsafe { fs_prediction_n_stands(ptr::null()) }, 0);
    unsafe {
        fs_config_free(ptr::null_mut());
        fs_samples_free(ptr::null_mut());
        fs_prediction_free(ptr::null_mut());
    }
}

#[test]
fn seedless_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[data]\nplots = \"plots.csv\"\n").unwrap();
    let mut cfg: *mut FsConfig = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(unsafe { fs_config_load(p.as_ptr(), &mut cfg) }, FsStatus::Ok);
    assert_eq!(unsafe { fs_fit(cfg, ptr::null_mut()) }, FsStatus::Config);
    assert!(last_error().contains("seed"));
    unsafe { fs_config_free(cfg) };
}

fn write_run_config(dir: &Path) -> PathBuf {
    let text = r#"out = "out"
[data]
plots = "data/plots.csv"
units = "data/units.csv"
outcomes = ["GSV", "QMD", "BA", "N"]
predictors = ["mean", "sd", "p95", "elev", "aspect"]
[model]
family = "mv_spatial"
outcomes = ["GSV", "QMD", "BA"]
[mcmc]
n_batches = 20
batch_len = 5
thin = 2
"#;
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_fit_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = cstr(dir.path().join("data").to_str().unwrap());
    assert_eq!(unsafe { fs_simulate_brixen_like(3, data.as_ptr()) }, FsStatus::Ok);

    let path = cstr(write_run_config(dir.path()).to_str().unwrap());
    let mut cfg: *mut FsConfig = ptr::null_mut();
    unsafe {
        assert_eq!(fs_config_load(path.as_ptr(), &mut cfg), FsStatus::Ok);
        assert_eq!(fs_config_set_seed(cfg, 17), FsStatus::Ok);

        let mut samples: *mut FsSamples = ptr::null_mut();
        assert_eq!(fs_fit(cfg, &mut samples), FsStatus::Ok, "{}", last_error());
        assert_eq!(fs_samples_n_draws(samples), 25);
        assert_eq!(fs_samples_n_outcomes(samples), 3);
        let mut r = 0.0;
        assert_eq!(fs_samples_effective_range(samples, 0, 2, &mut r), FsStatus::Ok);
        assert!(r > 0.0 && r.is_finite());
        assert_eq!(fs_samples_effective_range(samples, 25, 0, &mut r), FsStatus::InvalidArgument);
        fs_samples_free(samples);

        let dir_c = cstr(dir.path().join("out/samples").to_str().unwrap());
        let mut again: *mut FsSamples = ptr::null_mut();
        assert_eq!(fs_samples_read(dir_c.as_ptr(), &mut again), FsStatus::Ok);
        assert_eq!(fs_samples_n_draws(again), 25);
        fs_samples_free(again);

        let mut pred: *mut FsPrediction = ptr::null_mut();
        assert_eq!(fs_predict(cfg, &mut pred), FsStatus::Ok, "{}", last_error());
        assert_eq!(fs_prediction_n_stands(pred), 40);

        let mut needed = 0usize;
        assert_eq!(
            fs_prediction_stand_id(pred, 0, ptr::null_mut(), 0, &mut needed),
            FsStatus::BufferTooSmall
        );
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(fs_prediction_stand_id(pred, 0, buf.as_mut_ptr(), buf.len(), &mut needed), FsStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "S001");

        let mut gsv = FsSummary::default();
        assert_eq!(fs_prediction_summary(pred, 0, FsOutcome::Gsv as u32, &mut gsv), FsStatus::Ok);
        assert!(gsv.q025 <= gsv.q50 && gsv.q50 <= gsv.q975 && gsv.sd > 0.0);
        assert!((gsv.cv_pct - 100.0 * gsv.sd / gsv.mean).abs() < 1e-9 * gsv.cv_pct);
        // N is derived from the BA and QMD draws
        let mut n = FsSummary::default();
        assert_eq!(fs_prediction_summary(pred, 0, FsOutcome::N as u32, &mut n), FsStatus::Ok);
        assert!(n.mean > 0.0);
        assert_eq!(fs_prediction_summary(pred, 0, 9, &mut n), FsStatus::InvalidArgument);
        fs_prediction_free(pred);
        fs_config_free(cfg);
    }
    let csv = fs::read_to_string(dir.path().join("out/stand_summaries.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 40 * 4);
}

/// The generated header compiles as C and C++ and links against the shared
/// library.
#[test]
fn header_compiles_and_links() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/forest_sae.h");
    assert!(header.is_file());
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    fs::write(
        &src,
        r#"#include "forest_sae.h"
#include <math.h>
#include <stdio.h>
int main(void) {
  double n = 0.0;
  if (fs_derive_stem_density(30.0, 25.0, &n) != FS_STATUS_OK) return 1;
  if (fabs(n - 611.1549814728781) > 1e-9) return 2;
  if (fs_derive_stem_density(0.0, 25.0, &n) != FS_STATUS_DOMAIN) return 3;
  if (fs_last_error() == NULL) return 4;
  FsConfig *cfg = NULL;
  if (fs_config_load(NULL, &cfg) != FS_STATUS_INVALID_ARGUMENT) return 5;
  printf("%s\n", fs_version());
  return 0;
}
"#,
    )
    .unwrap();
    // test binaries live in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let libdir = exe.parent().unwrap().parent().unwrap();
    assert!(libdir.join("libforest_sae_ffi.so").is_file(), "cdylib missing in {}", libdir.display());
    let bin = dir.path().join("main");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(libdir)
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .args(["-lforest_sae_ffi", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));

    if let Some(cxx) = ["c++", "g++", "clang++"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    {
        let out = Command::new(cxx)
            .args(["-fsyntax-only", "-x", "c++"])
            .arg(&header)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
