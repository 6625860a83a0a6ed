use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pointnorm_ffi::*;

fn cloud(n: usize, seed: u64) -> Vec<f64> {
    // deterministic spiral, no rng needed
    (0..n)
        .flat_map(|i| {
            let t = i as f64 * 0.37 + seed as f64;
            [t.cos() * (1.0 + 0.1 * t.sin()), t.sin(), (i as f64 / n as f64) - 0.5]
        })
        .collect()
}

fn last_error() -> String {
    let p = pn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model() -> *mut PnModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pn_model_new(PnPreset::Tiny, 4, 64, 1, &mut m) }, PnStatus::Ok);
    assert!(pn_last_error().is_null());
    m
}

#[test]
fn predict_round_trips_through_a_checkpoint() {
    let m = tiny_model();
    let (mut classes, mut points) = (0, 0);
    unsafe {
        assert_eq!(pn_model_num_classes(m, &mut classes), PnStatus::Ok);
        assert_eq!(pn_model_input_points(m, &mut points), PnStatus::Ok);
    }
    assert_eq!((classes, points), (4, 64));

    let coords: Vec<f64> = [cloud(64, 0), cloud(64, 5)].concat();
    let mut logits = vec![0.0; 8];
    let st = unsafe { pn_model_predict(m, coords.as_ptr(), 2, 64, logits.as_mut_ptr(), logits.len()) };
    assert_eq!(st, PnStatus::Ok);
    assert!(logits.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.pnck").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    unsafe {
        assert_eq!(pn_model_save(m, path.as_ptr()), PnStatus::Ok);
        assert_eq!(pn_model_load(path.as_ptr(), &mut loaded), PnStatus::Ok);
    }
    let mut again = vec![0.0; 8];
    let st = unsafe { pn_model_predict(loaded, coords.as_ptr(), 2, 64, again.as_mut_ptr(), again.len()) };
    assert_eq!(st, PnStatus::Ok);
    assert_eq!(logits, again);
    unsafe {
        pn_model_free(m);
        pn_model_free(loaded);
        pn_model_free(ptr::null_mut());
    }
}

#[test]
fn predict_resamples_other_cloud_sizes() {
    let m = tiny_model();
    let mut logits = [0.0; 4];
    for n in [20, 64, 300] {
        let coords = cloud(n, 2);
        let st = unsafe { pn_model_predict(m, coords.as_ptr(), 1, n, logits.as_mut_ptr(), 4) };
        assert_eq!(st, PnStatus::Ok, "n = {n}");
    }
    unsafe { pn_model_free(m) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let m = tiny_model();
    let coords = cloud(64, 0);
    let mut small = [0.0; 3];
    let st = unsafe { pn_model_predict(m, coords.as_ptr(), 1, 64, small.as_mut_ptr(), 3) };
    assert_eq!(st, PnStatus::BufferTooSmall);
    assert!(last_error().contains("4 needed"));

    let st = unsafe { pn_model_predict(m, ptr::null(), 1, 64, small.as_mut_ptr(), 4) };
    assert_eq!(st, PnStatus::NullPointer);
    unsafe { pn_model_free(m) };

    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.pnck").unwrap();
    assert_eq!(unsafe { pn_model_load(missing.as_ptr(), &mut out) }, PnStatus::Io);
    assert!(out.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.pnck");
    std::fs::write(&junk, b"NOPE and then some bytes").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pn_model_load(junk.as_ptr(), &mut out) }, PnStatus::Checkpoint);
    assert!(last_error().contains("magic"));

    assert_eq!(
        unsafe { pn_model_new(PnPreset::Tiny, 0, 64, 0, &mut out) },
        PnStatus::Config
    );
}

#[test]
fn sampling_and_grouping() {
    let coords = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 0.0, 0.0, 2.0, 0.0, 0.0];
    let mut idx = [0usize; 2];
    assert_eq!(
        unsafe { pn_farthest_point_sample(coords.as_ptr(), 4, 2, idx.as_mut_ptr()) },
        PnStatus::Ok
    );
    assert_eq!(idx, [2, 0]);
    let mut nbrs = [0usize; 4];
    let samples = [0usize, 2];
    let st = unsafe { pn_knn_group(coords.as_ptr(), 4, samples.as_ptr(), 2, 2, nbrs.as_mut_ptr()) };
    assert_eq!(st, PnStatus::Ok);
    assert_eq!(nbrs, [0, 1, 2, 3]);
    let st = unsafe { pn_farthest_point_sample(coords.as_ptr(), 4, 9, idx.as_mut_ptr()) };
    assert_ne!(st, PnStatus::Ok);
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/pointnorm.h")
}

#[test]
fn header_compiles_as_c_and_cxx() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", "-x", lang])
            .arg(header())
            .output();
        match out {
            Ok(o) => assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr)),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}

#[test]
fn c_program_links_and_runs() {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib_dir = deps.parent().unwrap();
    let lib = lib_dir.join("libpointnorm_ffi.so");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "pointnorm.h"
int main(void) {
    PnModel *m = NULL;
    if (pn_model_new(PN_PRESET_TINY, 3, 32, 7, &m) != PN_STATUS_OK) return 1;
    double pts[32 * 3];
    for (int i = 0; i < 32 * 3; i++) pts[i] = (double)((i * 37) % 11) - 5.0;
    double logits[3];
    if (pn_model_predict(m, pts, 1, 32, logits, 3) != PN_STATUS_OK) return 2;
    if (pn_model_predict(m, pts, 1, 32, logits, 2) != PN_STATUS_BUFFER_TOO_SMALL) return 3;
    if (pn_last_error() == NULL) return 4;
    pn_model_free(m);
    printf("%s\n", pn_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(lib_dir)
        .arg("-lpointnorm_ffi")
        .arg("-o")
        .arg(&exe)
        .output();
    let Ok(cc) = cc else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", lib_dir).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
