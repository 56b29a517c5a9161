//! Calls the exported functions the way a C caller would, then compiles and
//! runs a real C program against the generated header and static library.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use emf_core::conformal::{calibrate_multistep, collect_residuals, critical_epsilon};
use emf_core::model::{checkpoint, AnyModel, Architecture, EmfConfig};
use emf_ffi::*;

fn small_model() -> AnyModel {
    let cfg = EmfConfig {
        lookback: 16,
        horizon: 4,
        patch_len: 4,
        stride: 4,
        embed_dim: 4,
        hidden_dim: 8,
        blocks: 1,
        ..Default::default()
    };
    AnyModel::build(&Architecture::Emforecaster(cfg), 5).unwrap()
}

fn last_error() -> String {
    let p = emf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_round_trip_matches_core() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.emfc");
    checkpoint::save(&path, &model, None).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut handle: *mut EmfModel = ptr::null_mut();
    unsafe {
        assert_eq!(emf_model_load(cpath.as_ptr(), &mut handle), EmfStatus::Ok);
        assert_eq!(emf_model_lookback(handle), 16);
        assert_eq!(emf_model_horizon(handle), 4);
        assert!(emf_model_param_count(handle) > 0);
        assert_eq!(CStr::from_ptr(emf_model_kind(handle)).to_str().unwrap(), "emforecaster");

        let inputs: Vec<f64> = (0..32).map(|t| (t as f64 * 0.3).sin()).collect();
        let mut out = vec![0.0; 8];
        assert_eq!(emf_model_predict(handle, inputs.as_ptr(), 2, out.as_mut_ptr()), EmfStatus::Ok);
        let expected = model.predict_batch(&[inputs[..16].to_vec(), inputs[16..].to_vec()]).unwrap();
        assert_eq!(out, expected.concat());

        let bytes = checkpoint::encode(&model, None);
        let mut h2: *mut EmfModel = ptr::null_mut();
        assert_eq!(emf_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut h2), EmfStatus::Ok);
        let mut out2 = vec![0.0; 8];
        assert_eq!(emf_model_predict(h2, inputs.as_ptr(), 2, out2.as_mut_ptr()), EmfStatus::Ok);
        assert_eq!(out, out2);

        let mut bad = inputs.clone();
        bad[3] = f64::NAN;
        assert_eq!(emf_model_predict(handle, bad.as_ptr(), 1, out.as_mut_ptr()), EmfStatus::Numeric);
        assert_eq!(emf_model_predict(handle, inputs.as_ptr(), 0, out.as_mut_ptr()), EmfStatus::InvalidArgument);
        assert_eq!(emf_model_predict(ptr::null(), inputs.as_ptr(), 1, out.as_mut_ptr()), EmfStatus::NullPointer);
        emf_model_free(handle);
        emf_model_free(h2);
        emf_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.emfc").to_str().unwrap()).unwrap();
    let mut handle: *mut EmfModel = ptr::null_mut();
    unsafe {
        assert_eq!(emf_model_load(missing.as_ptr(), &mut handle), EmfStatus::Io);
        assert!(last_error().contains("none.emfc"));
        let junk = b"EMFCxxxxxxxxxxxx";
        assert_eq!(emf_model_from_bytes(junk.as_ptr(), junk.len(), &mut handle), EmfStatus::BadCheckpoint);
        assert_eq!(emf_model_load(ptr::null(), &mut handle), EmfStatus::NullPointer);
        assert!(handle.is_null());
        assert_eq!(emf_model_lookback(ptr::null()), 0);
        assert!(emf_model_kind(ptr::null()).is_null());
    }
}

#[test]
fn conformal_calls_match_core() {
    let res: Vec<f64> = (1..=19).map(f64::from).collect();
    let mut eps = 0.0;
    unsafe {
        assert_eq!(emf_critical_epsilon(res.as_ptr(), res.len(), 0.1, &mut eps), EmfStatus::Ok);
        assert_eq!(eps, critical_epsilon(&res, 0.1).unwrap());
        assert_eq!(
            emf_critical_epsilon(res.as_ptr(), 3, 0.1, &mut eps),
            EmfStatus::InsufficientCalibration
        );
        assert!(last_error().contains("calibration"));
    }

    let (m, o) = (60usize, 3usize);
    let forecasts: Vec<f64> = (0..m * o).map(|i| (i as f64 * 0.7).sin()).collect();
    let targets: Vec<f64> = forecasts.iter().enumerate().map(|(i, f)| f + ((i * 37 % 11) as f64 - 5.0) / 10.0).collect();
    let rows = |v: &[f64]| v.chunks(o).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let core = calibrate_multistep(&collect_residuals(&rows(&forecasts), &rows(&targets)).unwrap(), 0.2).unwrap();

    let mut band: *mut EmfBand = ptr::null_mut();
    unsafe {
        assert_eq!(
            emf_band_calibrate(forecasts.as_ptr(), targets.as_ptr(), m, o, 0.2, &mut band),
            EmfStatus::Ok
        );
        assert_eq!(emf_band_horizon(band), o);
        let mut e = vec![0.0; o];
        assert_eq!(emf_band_epsilons(band, e.as_mut_ptr(), o), EmfStatus::Ok);
        assert_eq!(e, core.epsilons);
        assert_eq!(emf_band_epsilons(band, e.as_mut_ptr(), o + 1), EmfStatus::InvalidArgument);

        let (mut lo, mut hi) = (vec![0.0; o], vec![0.0; o]);
        let f = [1.0, 2.0, 3.0];
        assert_eq!(emf_band_interval(band, f.as_ptr(), o, lo.as_mut_ptr(), hi.as_mut_ptr()), EmfStatus::Ok);
        for t in 0..o {
            assert_eq!(lo[t], f[t] - core.epsilons[t]);
            assert_eq!(hi[t], f[t] + core.epsilons[t]);
        }

        let mut cov = EmfCoverage { ic: -1.0, jc: -1.0, miw: -1.0, n_test: 0 };
        assert_eq!(
            emf_band_coverage(band, forecasts.as_ptr(), targets.as_ptr(), m, o, &mut cov),
            EmfStatus::Ok
        );
        assert_eq!(cov.n_test, m);
        assert!(cov.jc >= 0.8 && cov.ic >= cov.jc);
        emf_band_free(band);
    }
}

#[test]
fn tos_scores_rank_by_width() {
    let r = |miw| EmfCoverage { ic: 0.9, jc: 0.9, miw, n_test: 10 };
    let reports = [r(1.0), r(2.0), r(4.0)];
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(emf_tos_scores(reports.as_ptr(), 3, 2.0 / 3.0, 0.5, 0, out.as_mut_ptr()), EmfStatus::Ok);
        assert!(out[0] > out[1] && out[1] > out[2]);
        assert_eq!(emf_tos_scores(reports.as_ptr(), 3, 2.0 / 3.0, 0.5, 1, out.as_mut_ptr()), EmfStatus::Ok);
        assert!(out[0] < out[1] && out[1] < out[2]);
        assert_eq!(emf_tos_scores(reports.as_ptr(), 1, 0.5, 0.5, 0, out.as_mut_ptr()), EmfStatus::InvalidArgument);
        assert_eq!(emf_tos_scores(reports.as_ptr(), 3, 1.5, 0.5, 0, out.as_mut_ptr()), EmfStatus::InvalidArgument);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(emf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "emf_ffi.h"

int main(int argc, char **argv) {
    EmfModel *m = NULL;
    if (emf_model_load(argv[1], &m) != EMF_STATUS_OK) {
        fprintf(stderr, "load: %s\n", emf_last_error_message());
        return 1;
    }
    size_t l = emf_model_lookback(m), o = emf_model_horizon(m);
    double x[64], y[64];
    for (size_t i = 0; i < l; i++) x[i] = (double)i / (double)l;
    if (emf_model_predict(m, x, 1, y) != EMF_STATUS_OK) return 2;
    printf("%s %zu %zu", emf_model_kind(m), l, o);
    for (size_t i = 0; i < o; i++) printf(" %.17g", y[i]);
    printf("\n");
    emf_model_free(m);

    double res[3] = {1.0, 2.0, 3.0}, eps;
    if (emf_critical_epsilon(res, 3, 0.1, &eps) != EMF_STATUS_INSUFFICIENT_CALIBRATION) return 3;
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler on PATH");
        return;
    }
    // target/<profile>/deps/<this test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libemf_ffi.a");
    assert!(lib.is_file(), "missing {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(cc.status.success(), "cc failed: {}", String::from_utf8_lossy(&cc.stderr));

    let model = small_model();
    let ck = dir.path().join("m.emfc");
    checkpoint::save(&ck, &model, None).unwrap();
    let run = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(&fields[..3], ["emforecaster", "16", "4"]);
    let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let expected = model.predict_batch(&[x]).unwrap().remove(0);
    let got: Vec<f64> = fields[3..].iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(got, expected);
}
