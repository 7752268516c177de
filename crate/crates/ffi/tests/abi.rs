use std::ffi::{CStr, CString};
use std::ptr;

use stnet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(stnet_last_error()) }.to_str().unwrap().to_string()
}

fn build(variant: &str, preset: i32, seed: u64) -> *mut StnetModel {
    let tag = CString::new(variant).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { stnet_model_build(tag.as_ptr(), preset, seed, &mut m) }, STNET_OK, "{}", last_error());
    assert!(!m.is_null());
    m
}

fn clip(m: *const StnetModel) -> Vec<f32> {
    let mut dims = [0usize; 4];
    assert_eq!(unsafe { stnet_model_input_dims(m, dims.as_mut_ptr()) }, STNET_OK);
    assert_eq!(dims, [16, 24, 24, 3]);
    (0..dims.iter().product::<usize>()).map(|i| (i % 97) as f32 / 96.0).collect()
}

fn predict(m: *const StnetModel, x: &[f32]) -> [f32; 2] {
    let mut p = [0f32; 2];
    assert_eq!(unsafe { stnet_model_predict(m, x.as_ptr(), x.len(), p.as_mut_ptr()) }, STNET_OK, "{}", last_error());
    p
}

#[test]
fn build_predict_save_load() {
    let m = build("c3d", STNET_PRESET_DESK, 4);
    let x = clip(m);
    let p = predict(m, &x);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-5);
    assert!(last_error().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { stnet_model_save(m, path.as_ptr()) }, STNET_OK);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { stnet_model_load(path.as_ptr(), &mut back) }, STNET_OK);
    assert_eq!(predict(back, &x), p);

    let (mut a, mut b) = (0usize, 0usize);
    unsafe {
        stnet_model_param_count(m, &mut a);
        stnet_model_param_count(back, &mut b);
        stnet_model_free(m);
        stnet_model_free(back);
    }
    assert_eq!(a, b);
    assert!(a > 0);
}

#[test]
fn full_preset_matches_reference_size() {
    let m = build("cnn_transformer", STNET_PRESET_FULL, 0);
    let mut n = 0usize;
    assert_eq!(unsafe { stnet_model_param_count(m, &mut n) }, STNET_OK);
    assert_eq!(n, 398_562);
    unsafe { stnet_model_free(m) };
}

#[test]
fn failures_report_category_codes() {
    let tag = CString::new("resnet").unwrap();
    let mut m = ptr::null_mut();
    let rc = unsafe { stnet_model_build(tag.as_ptr(), STNET_PRESET_DESK, 0, &mut m) };
    assert_eq!(rc, STNET_ERR_USAGE);
    assert!(m.is_null());
    assert!(last_error().contains("resnet"), "{}", last_error());
    assert_eq!(unsafe { CStr::from_ptr(stnet_status_name(rc)) }.to_str().unwrap(), "usage");

    let tag = CString::new("c3d").unwrap();
    assert_eq!(unsafe { stnet_model_build(tag.as_ptr(), 7, 0, &mut m) }, STNET_ERR_USAGE);
    assert_eq!(unsafe { stnet_model_build(ptr::null(), STNET_PRESET_DESK, 0, &mut m) }, STNET_ERR_USAGE);
    assert_eq!(unsafe { stnet_model_build(tag.as_ptr(), STNET_PRESET_DESK, 0, ptr::null_mut()) }, STNET_ERR_USAGE);

    let m = build("c3d", STNET_PRESET_DESK, 0);
    let x = clip(m);
    let mut p = [0f32; 2];
    let rc = unsafe { stnet_model_predict(m, x.as_ptr(), x.len() - 3, p.as_mut_ptr()) };
    assert_eq!(rc, STNET_ERR_SHAPE);
    assert!(last_error().starts_with("shape"), "{}", last_error());
    assert_eq!(unsafe { stnet_model_param_count(ptr::null(), &mut 0) }, STNET_ERR_USAGE);
    predict(m, &x);
    assert!(last_error().is_empty());
    unsafe { stnet_model_free(m) };

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.ckpt");
    std::fs::write(&file, b"not a checkpoint").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { stnet_model_load(path.as_ptr(), &mut m) }, STNET_ERR_FORMAT);
    let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { stnet_model_load(missing.as_ptr(), &mut m) }, STNET_ERR_IO);
    assert!(m.is_null());
}

#[test]
fn free_accepts_null_and_names_are_static() {
    unsafe { stnet_model_free(ptr::null_mut()) };
    for code in 0..=16 {
        assert_ne!(unsafe { CStr::from_ptr(stnet_status_name(code)) }.to_str().unwrap(), "unknown");
    }
    assert_eq!(unsafe { CStr::from_ptr(stnet_status_name(99)) }.to_str().unwrap(), "unknown");
    assert_eq!(unsafe { CStr::from_ptr(stnet_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/stnet.h")).unwrap();
    for name in [
        "stnet_last_error",
        "stnet_status_name",
        "stnet_model_build",
        "stnet_model_load",
        "stnet_model_save",
        "stnet_model_free",
        "stnet_model_input_dims",
        "stnet_model_param_count",
        "stnet_model_predict",
        "stnet_version",
        "typedef struct StnetModel StnetModel",
        "#define STNET_ERR_INSUFFICIENT_FRAMES 15",
    ] {
        assert!(header.contains(name), "{name}");
    }
    assert!(header.contains("size_t *out_dims"));
}
