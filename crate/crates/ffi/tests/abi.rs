use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use countdpd::simgen::{presets, simulate};
use countdpd::{fit, ConditionalFamily, DpdConfig, FitOptions, FitResult};
use countdpd_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cdpd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn dataset(data: &countdpd::Dataset) -> *mut CdpdDataset {
    let x = data.x_flat();
    let mut out = ptr::null_mut();
    let st = unsafe { cdpd_dataset_new(data.y.as_ptr(), data.len(), x.as_ptr(), data.covariate_dim(), &mut out) };
    assert_eq!(st, CdpdStatus::Ok);
    out
}

#[test]
fn fit_through_the_abi_matches_the_library() {
    let data = simulate(&presets::poisson_arch(600, 4)).unwrap();
    let h = dataset(&data);
    assert_eq!(unsafe { cdpd_dataset_len(h) }, 600);
    assert_eq!(unsafe { cdpd_dataset_covariate_dim(h) }, 1);

    let mut f = ptr::null_mut();
    let st = unsafe { cdpd_fit(h, c("poisson").as_ptr(), c("ingarch:1,1:abs").as_ptr(), 0.3, &mut f) };
    assert_eq!(st, CdpdStatus::Ok);
    assert!(cdpd_last_error().is_null());

    let cfg = DpdConfig::for_data(0.3, ConditionalFamily::poisson(), presets::poisson_arch(10, 0).model, &data).unwrap();
    let lib = fit(&cfg, &data, None, &FitOptions::default()).unwrap();

    let d = unsafe { cdpd_fit_dim(f) };
    let mut theta = vec![0.0; d];
    assert_eq!(unsafe { cdpd_fit_theta(f, theta.as_mut_ptr(), d) }, CdpdStatus::Ok);
    assert_eq!(theta, lib.theta);
    let mut se = vec![0.0; d];
    assert_eq!(unsafe { cdpd_fit_std_errors(f, se.as_mut_ptr(), d) }, CdpdStatus::Ok);
    assert_eq!(Some(se), lib.std_errors);
    assert_eq!(unsafe { cdpd_fit_objective(f) }, lib.objective);

    let mut short = [0.0; 2];
    assert_eq!(unsafe { cdpd_fit_theta(f, short.as_mut_ptr(), 2) }, CdpdStatus::BufferTooSmall);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cdpd_fit_to_json(f, &mut json) }, CdpdStatus::Ok);
    let back: FitResult = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(back, lib);
    unsafe {
        cdpd_string_free(json);
        cdpd_fit_free(f);
        cdpd_dataset_free(h);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut h = ptr::null_mut();
    let y = [1u64];
    assert_eq!(unsafe { cdpd_dataset_new(y.as_ptr(), 1, ptr::null(), 0, &mut h) }, CdpdStatus::InvalidSpec);
    assert!(last_error().starts_with("InvalidSpec"));
    assert_eq!(unsafe { cdpd_dataset_new(ptr::null(), 5, ptr::null(), 0, &mut h) }, CdpdStatus::NullPointer);

    let bad = [1.0, f64::NAN, 2.0];
    let y = [1u64, 2, 3];
    assert_eq!(unsafe { cdpd_dataset_new(y.as_ptr(), 3, bad.as_ptr(), 1, &mut h) }, CdpdStatus::NonFiniteCovariate);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y\n3\n-2\n").unwrap();
    let p = c(path.to_str().unwrap());
    assert_eq!(unsafe { cdpd_dataset_read_csv(p.as_ptr(), &mut h) }, CdpdStatus::NegativeCount);
    assert_eq!(unsafe { cdpd_simulate_json(c("{").as_ptr(), &mut h) }, CdpdStatus::Json);

    let data = dataset(&countdpd::Dataset::counts_only(vec![0; 100]).unwrap());
    let mut f = ptr::null_mut();
    let st = unsafe { cdpd_fit(data, c("poisson").as_ptr(), c("knot:0").as_ptr(), 0.0, &mut f) };
    assert_ne!(st, CdpdStatus::Ok);
    let st = unsafe { cdpd_fit(data, c("gamma").as_ptr(), c("ingarch:1,1").as_ptr(), 0.0, &mut f) };
    assert_eq!(st, CdpdStatus::InvalidSpec);
    assert!(f.is_null());
    let invalid = [0xffu8, 0];
    let st = unsafe { cdpd_fit(data, invalid.as_ptr().cast(), c("ingarch:1,1").as_ptr(), 0.0, &mut f) };
    assert_eq!(st, CdpdStatus::InvalidUtf8);
    unsafe { cdpd_dataset_free(data) };

    assert_eq!(unsafe { cdpd_fit_dim(ptr::null()) }, 0);
    assert!(unsafe { cdpd_fit_objective(ptr::null()) }.is_nan());
    unsafe {
        cdpd_fit_free(ptr::null_mut());
        cdpd_dataset_free(ptr::null_mut());
        cdpd_string_free(ptr::null_mut());
    }
}

#[test]
fn tune_and_simulate_json() {
    let spec = serde_json::to_string(&presets::poisson_arch(500, 8)).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cdpd_simulate_json(c(&spec).as_ptr(), &mut h) }, CdpdStatus::Ok);
    let mut alpha = f64::NAN;
    let mut f = ptr::null_mut();
    let st = unsafe { cdpd_tune(h, c("poisson").as_ptr(), c("ingarch:1,1:abs").as_ptr(), &mut alpha, &mut f) };
    assert_eq!(st, CdpdStatus::Ok, "{}", last_error());
    assert!((0.0..=1.0).contains(&alpha));
    unsafe {
        cdpd_fit_free(f);
        cdpd_dataset_free(h);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cdpd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Target profile directory, two levels above this test executable.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = profile_dir().join("libcountdpd_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let theta: Vec<f64> = String::from_utf8(out.stdout).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(theta.len(), 3);
    assert!(theta[1] + theta[2] < 1.0);
}
