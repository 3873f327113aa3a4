use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fabric_motif_ffi::*;

fn tiled(t: usize, n: usize) -> Vec<f64> {
    let tile: Vec<f64> = (0..t * t).map(|i| ((i * 37 + 11) % 176) as f64 + 40.0).collect();
    (0..n * n).map(|i| tile[(i / n % t) * t + i % n % t]).collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fm_last_error()) }.to_string_lossy().into_owned()
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let pixels = tiled(8, 64);
    unsafe {
        let mut image = ptr::null_mut();
        assert_eq!(fm_image_from_pixels(64, 64, pixels.as_ptr(), &mut image), FmStatus::Ok);
        assert_eq!((fm_image_width(image), fm_image_height(image)), (64, 64));

        let mut cfg = fm_train_config_default();
        cfg.filter_size = 9;
        let mut model = ptr::null_mut();
        assert_eq!(fm_model_train(image, &cfg, 1, &mut model), FmStatus::Ok, "{}", last_error());
        assert_eq!(fm_model_filter_size(model), 9);
        assert_eq!(fm_model_parameter_count(model), fm_model_feature_count(model) * 81);

        let path = c_path(&dir.path().join("model.json"));
        assert_eq!(fm_model_save(model, path.as_ptr()), FmStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(fm_model_load(path.as_ptr(), &mut loaded), FmStatus::Ok);
        assert_eq!(fm_model_feature_count(loaded), fm_model_feature_count(model));

        let mut map = ptr::null_mut();
        assert_eq!(fm_detect(loaded, image, f64::NAN, f64::NAN, &mut map), FmStatus::Ok);
        let mut values = vec![1.0; 64 * 64];
        assert_eq!(fm_map_values(map, values.as_mut_ptr(), values.len()), FmStatus::Ok);
        assert!(values.iter().all(|&v| v == 0.0));
        assert_eq!(fm_map_values(map, values.as_mut_ptr(), 10), FmStatus::BufferTooSmall);

        let mut mask = ptr::null_mut();
        assert_eq!(fm_segment(map, 0, 0, 0, &mut mask), FmStatus::Ok);
        assert_eq!(fm_mask_count(mask), 0);
        let mut bytes = vec![7u8; 64 * 64];
        assert_eq!(fm_mask_values(mask, bytes.as_mut_ptr(), bytes.len()), FmStatus::Ok);
        assert!(bytes.iter().all(|&b| b == 0));

        let map_path = c_path(&dir.path().join("map.png"));
        let mask_path = c_path(&dir.path().join("mask.png"));
        assert_eq!(fm_map_save(map, map_path.as_ptr()), FmStatus::Ok);
        assert_eq!(fm_mask_save(mask, mask_path.as_ptr()), FmStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(fm_image_load(mask_path.as_ptr(), &mut reloaded), FmStatus::Ok);

        fm_image_free(reloaded);
        fm_mask_free(mask);
        fm_map_free(map);
        fm_model_free(loaded);
        fm_model_free(model);
        fm_image_free(image);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(fm_model_load(missing.as_ptr(), &mut model), FmStatus::Io);
        assert!(last_error().contains("/nonexistent/model.json"));
        assert!(model.is_null());

        assert_eq!(fm_model_load(ptr::null(), &mut model), FmStatus::NullArgument);

        let flat = vec![5.0; 32 * 32];
        let mut image = ptr::null_mut();
        assert_eq!(fm_image_from_pixels(32, 32, flat.as_ptr(), &mut image), FmStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(fm_model_train(image, ptr::null(), 1, &mut model), FmStatus::Degenerate);

        let mut cfg = fm_train_config_default();
        cfg.similarity_threshold = 1.5;
        let pixels = tiled(8, 32);
        let mut textured = ptr::null_mut();
        assert_eq!(fm_image_from_pixels(32, 32, pixels.as_ptr(), &mut textured), FmStatus::Ok);
        cfg.filter_size = 9;
        assert_ne!(fm_model_train(textured, &cfg, 0, &mut model), FmStatus::Ok);

        cfg.similarity_threshold = 0.7;
        assert_eq!(fm_model_train(textured, &cfg, 0, &mut model), FmStatus::Ok);
        let mut t = 0.0;
        assert_eq!(fm_model_anomaly_threshold(model, &mut t), FmStatus::Model);
        let mut map = ptr::null_mut();
        assert_eq!(fm_detect(model, textured, f64::NAN, f64::NAN, &mut map), FmStatus::Model);
        assert_eq!(fm_model_calibrate(model, textured, &mut t), FmStatus::Ok);
        assert!(t >= 0.0);

        fm_model_free(model);
        fm_image_free(textured);
        fm_image_free(image);
        fm_image_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fabric_motif.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for item in ["typedef struct FmModel FmModel;", "FM_STATUS_IO = 3", "size_t width"] {
        assert!(text.contains(item), "{item}");
    }
}

#[test]
fn c_program_links_against_the_library() {
    let Ok(cc) = which_cc() else {
        println!("SKIP: no C compiler on PATH");
        return;
    };
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libfabric_motif_ffi.a");
    if !lib.exists() {
        println!("SKIP: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C smoke test failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("features="));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
