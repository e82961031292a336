use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tinydistill::data::ImageTensor;
use tinydistill::encoder::{Encoder, EncoderConfig};
use tinydistill::masking::{default_center_preserve, eligible_bins, masked_patch_count};
use tinydistill::ndarray::Array2;
use tinydistill_ffi::*;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        depth: 2,
        dim: 8,
        heads: 2,
        patch_size: 8,
        image_size: (16, 16),
        mlp_ratio: 2,
        mid_layer: 1,
        tap_layers: vec![1, 2],
        use_class_token: false,
    }
}

fn image(h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|i| ((i * 37 % 101) as f64) / 100.0).collect()
}

fn last_error() -> String {
    let p = td_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_encoder(dir: &Path) -> (Encoder, CString) {
    let enc = Encoder::new(small_config(), 7).unwrap();
    let path = dir.join("enc.ckpt");
    enc.save(&path).unwrap();
    (enc, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn encoder_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (enc, path) = saved_encoder(dir.path());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { td_encoder_load(path.as_ptr(), &mut h) }, TdStatus::Ok);
    assert!(!h.is_null());
    assert!(td_last_error_message().is_null());

    assert_eq!(unsafe { td_encoder_dim(h) }, 8);
    let (mut ih, mut iw) = (0, 0);
    assert_eq!(unsafe { td_encoder_image_size(h, &mut ih, &mut iw) }, TdStatus::Ok);
    assert_eq!((ih, iw), (16, 16));

    let px = image(16, 16);
    let mut out = vec![0.0; 8];
    let st = unsafe { td_encoder_embed(h, px.as_ptr(), 16, 16, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, TdStatus::Ok);
    let want = enc
        .embed(&ImageTensor::new(Array2::from_shape_vec((16, 16), px.clone()).unwrap()).unwrap())
        .unwrap();
    assert_eq!(out, want.to_vec());

    let mut short = vec![0.0; 4];
    let st = unsafe { td_encoder_embed(h, px.as_ptr(), 16, 16, short.as_mut_ptr(), short.len()) };
    assert_eq!(st, TdStatus::BufferTooSmall);
    assert!(last_error().contains("8 are needed"));

    let wrong = image(24, 24);
    let st = unsafe { td_encoder_embed(h, wrong.as_ptr(), 24, 24, out.as_mut_ptr(), out.len()) };
    assert_ne!(st, TdStatus::Ok);
    assert!(!last_error().is_empty());

    unsafe { td_encoder_free(h) };
    unsafe { td_encoder_free(ptr::null_mut()) };
}

#[test]
fn load_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { td_encoder_load(missing.as_ptr(), &mut h) }, TdStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nope.ckpt"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { td_encoder_load(junk.as_ptr(), &mut h) }, TdStatus::Corrupt);

    assert_eq!(unsafe { td_encoder_load(ptr::null(), &mut h) }, TdStatus::NullPointer);
    assert_eq!(unsafe { td_encoder_load(junk.as_ptr(), ptr::null_mut()) }, TdStatus::NullPointer);
    assert_eq!(unsafe { td_encoder_dim(ptr::null()) }, 0);
}

#[test]
fn spatial_mask_counts_and_fills_patches() {
    let px = image(32, 32);
    let mut out = vec![0.0; px.len()];
    let mut mask = vec![9u8; 16];
    let mut count = 0usize;
    let st = unsafe {
        td_spatial_mask(
            px.as_ptr(),
            32,
            32,
            8,
            0.75,
            3,
            out.as_mut_ptr(),
            out.len(),
            mask.as_mut_ptr(),
            mask.len(),
            &mut count,
        )
    };
    assert_eq!(st, TdStatus::Ok);
    assert_eq!(count, masked_patch_count(16, 0.75));
    assert_eq!(mask.iter().filter(|&&m| m == 1).count(), count);
    assert!(mask.iter().all(|&m| m <= 1));
    let mean = px.iter().sum::<f64>() / px.len() as f64;
    for y in 0..32 {
        for x in 0..32 {
            let masked = mask[(y / 8) * 4 + x / 8] == 1;
            let v = out[y * 32 + x];
            if masked {
                assert!((v - mean).abs() < 1e-12);
            } else {
                assert_eq!(v, px[y * 32 + x]);
            }
        }
    }

    let bad = unsafe {
        td_spatial_mask(px.as_ptr(), 32, 32, 8, 1.5, 3, out.as_mut_ptr(), out.len(), ptr::null_mut(), 0, ptr::null_mut())
    };
    assert_eq!(bad, TdStatus::InvalidArgument);
    let short = unsafe {
        td_spatial_mask(px.as_ptr(), 32, 32, 8, 0.75, 3, out.as_mut_ptr(), out.len(), mask.as_mut_ptr(), 3, ptr::null_mut())
    };
    assert_eq!(short, TdStatus::BufferTooSmall);
}

#[test]
fn frequency_mask_count_and_identity() {
    let px = image(32, 32);
    let mut out = vec![0.0; px.len()];
    let mut count = 0usize;
    let st = unsafe {
        td_frequency_mask(
            px.as_ptr(),
            32,
            32,
            7,
            2,
            0.4,
            11,
            out.as_mut_ptr(),
            out.len(),
            ptr::null_mut(),
            0,
            &mut count,
        )
    };
    assert_eq!(st, TdStatus::Ok);
    let e = eligible_bins(32, 32, default_center_preserve(32, 32));
    assert_eq!(count, (0.4 * e as f64).round() as usize);
    assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));

    let st = unsafe {
        td_frequency_mask(
            px.as_ptr(),
            32,
            32,
            7,
            2,
            0.0,
            11,
            out.as_mut_ptr(),
            out.len(),
            ptr::null_mut(),
            0,
            &mut count,
        )
    };
    assert_eq!(st, TdStatus::Ok);
    assert_eq!(count, 0);
    for (a, b) in out.iter().zip(&px) {
        assert!((a - b).abs() < 1e-5);
    }

    let st = unsafe {
        td_frequency_mask(ptr::null(), 32, 32, 7, 2, 0.4, 11, out.as_mut_ptr(), out.len(), ptr::null_mut(), 0, ptr::null_mut())
    };
    assert_eq!(st, TdStatus::NullPointer);
    assert!(last_error().contains("pixels"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(td_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tinydistill.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "td_last_error_message",
        "td_version",
        "td_encoder_load",
        "td_encoder_free",
        "td_encoder_dim",
        "td_encoder_image_size",
        "td_encoder_embed",
        "td_spatial_mask",
        "td_frequency_mask",
        "typedef struct TdEncoder TdEncoder",
        "TD_STATUS_OK = 0",
        "TD_STATUS_PANIC = 8",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the static library and header.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libtinydistill_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = saved_encoder(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tinydistill.h"

int main(int argc, char **argv) {
    double px[256], out[256], z[8];
    size_t count = 0;
    TdEncoder *enc = NULL;
    for (int i = 0; i < 256; i++) px[i] = (i % 17) / 16.0;
    if (td_encoder_load("/definitely/missing.ckpt", &enc) != TD_STATUS_IO) return 1;
    if (td_last_error_message() == NULL) return 2;
    if (td_encoder_load(argv[1], &enc) != TD_STATUS_OK) return 3;
    if (td_encoder_embed(enc, px, 16, 16, z, 8) != TD_STATUS_OK) return 4;
    if (td_spatial_mask(px, 16, 16, 8, 0.75, 1, out, 256, NULL, 0, &count) != TD_STATUS_OK) return 5;
    printf("%zu %zu\n", td_encoder_dim(enc), count);
    td_encoder_free(enc);
    return argc == 2 ? 0 : 6;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("capi_demo");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler (cc) is required");
    assert!(status.success());
    let out = Command::new(&bin).arg(ckpt.to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "8 3");
}
