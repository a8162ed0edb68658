use std::ffi::{CStr, CString};
use std::ptr;

use msinet_ffi::*;

fn last_error() -> String {
    let p = msinet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn build(arch: &str, width: f64, hw: usize, seed: u64) -> *mut MsinetModel {
    let arch = CString::new(arch).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { msinet_model_build(arch.as_ptr(), width, hw, seed, &mut m) }, MsinetStatus::Ok);
    assert!(!m.is_null());
    m
}

fn images(n: usize, hw: usize) -> Vec<f64> {
    (0..n * 3 * hw * hw).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()
}

#[test]
fn confmat_metrics_match_published_row() {
    let mut out = MsinetMetrics::default();
    assert_eq!(unsafe { msinet_confmat_metrics(6338, 1167, 792, 10936, 1, &mut out) }, MsinetStatus::Ok);
    assert!((out.accuracy - 0.8981).abs() < 5e-5);
    assert!((out.f1 - 0.9178).abs() < 5e-5);

    assert_eq!(unsafe { msinet_confmat_metrics(0, 7505, 0, 11728, 0, &mut out) }, MsinetStatus::UndefinedMetric);
    assert!(last_error().contains("undefined"));
    assert_eq!(unsafe { msinet_confmat_metrics(1, 1, 1, 1, 2, &mut out) }, MsinetStatus::InvalidArgument);
    assert_eq!(unsafe { msinet_confmat_metrics(1, 1, 1, 1, 1, ptr::null_mut()) }, MsinetStatus::NullPointer);
}

#[test]
fn build_predict_and_count() {
    let m = build("modified-resnet", 0.25, 64, 1);
    let mut hw = 0;
    let mut layers = 0;
    unsafe {
        assert_eq!(msinet_model_input_size(m, &mut hw), MsinetStatus::Ok);
        assert_eq!(msinet_model_count_weight_layers(m, &mut layers), MsinetStatus::Ok);
    }
    assert_eq!((hw, layers), (64, 41));

    let x = images(2, 64);
    let mut p = [f64::NAN; 2];
    assert_eq!(unsafe { msinet_model_predict(m, x.as_ptr(), 2, p.as_mut_ptr()) }, MsinetStatus::Ok);
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    let mut again = [0.0; 2];
    unsafe { msinet_model_predict(m, x.as_ptr(), 2, again.as_mut_ptr()) };
    assert_eq!(p, again, "prediction must be deterministic");
    unsafe { msinet_model_free(m) };
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = build("cnn5", 0.25, 32, 3);
    assert_eq!(unsafe { msinet_model_save(m, path.as_ptr()) }, MsinetStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { msinet_model_load(path.as_ptr(), &mut back) }, MsinetStatus::Ok);

    let x = images(3, 32);
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    unsafe {
        msinet_model_predict(m, x.as_ptr(), 3, a.as_mut_ptr());
        msinet_model_predict(back, x.as_ptr(), 3, b.as_mut_ptr());
        msinet_model_free(m);
        msinet_model_free(back);
    }
    assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    let bad = CString::new("resnet19").unwrap();
    assert_eq!(unsafe { msinet_model_build(bad.as_ptr(), 1.0, 64, 0, &mut m) }, MsinetStatus::InvalidArgument);
    assert!(last_error().contains("resnet19"));
    assert!(m.is_null());

    let arch = CString::new("modified-resnet").unwrap();
    assert_eq!(unsafe { msinet_model_build(arch.as_ptr(), 1.0, 100, 0, &mut m) }, MsinetStatus::Shape);
    assert_eq!(unsafe { msinet_model_build(ptr::null(), 1.0, 64, 0, &mut m) }, MsinetStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"junk").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { msinet_model_load(junk.as_ptr(), &mut m) }, MsinetStatus::Checkpoint);
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { msinet_model_load(missing.as_ptr(), &mut m) }, MsinetStatus::Io);

    let mut n = 0;
    assert_eq!(unsafe { msinet_model_count_weight_layers(ptr::null_mut(), &mut n) }, MsinetStatus::NullPointer);
    let model = build("logreg", 1.0, 16, 0);
    let mut p = [0.0];
    assert_eq!(unsafe { msinet_model_predict(model, ptr::null(), 1, p.as_mut_ptr()) }, MsinetStatus::NullPointer);
    let x = images(1, 16);
    assert_eq!(unsafe { msinet_model_predict(model, x.as_ptr(), 0, p.as_mut_ptr()) }, MsinetStatus::InvalidArgument);
    unsafe {
        msinet_model_free(model);
        msinet_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/msinet.h")).unwrap();
    for sym in [
        "msinet_last_error",
        "msinet_model_build",
        "msinet_model_load",
        "msinet_model_save",
        "msinet_model_free",
        "msinet_model_input_size",
        "msinet_model_count_weight_layers",
        "msinet_model_predict",
        "msinet_confmat_metrics",
        "typedef struct MsinetModel MsinetModel;",
        "MSINET_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // the test binary lives in <target>/<profile>/deps; the static library one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libmsinet_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = std::process::Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = std::process::Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.starts_with("layers=7 "), "{text}");
    assert!(text.contains("unknown architecture `nope`"), "{text}");
}
