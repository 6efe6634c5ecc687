use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ilic_ffi::*;

const TINY: &str = "model.N = 4\nmodel.M = 6\nmodel.Mz = 3\nfrm.variant = a\nfrm.channels = 2\nfenm.layers = 1\nfenm.growth = 2\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(ilic_last_error()) }.to_str().unwrap().to_string()
}

fn tiny_model(seed: u64) -> *mut IlicModel {
    let cfg = CString::new(TINY).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ilic_model_init(cfg.as_ptr(), seed, &mut m) }, IlicStatus::Ok);
    assert!(!m.is_null());
    m
}

fn gradient(h: usize, w: usize) -> Vec<u8> {
    (0..h * w * 3).map(|i| ((i * 7 + i / 5) % 251) as u8).collect()
}

#[test]
fn encode_decode_round_trip() {
    let m = tiny_model(1);
    let (h, w) = (19, 26);
    let rgb = gradient(h, w);
    let mut buf = IlicBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { ilic_encode(m, rgb.as_ptr(), h, w, 3, &mut buf) }, IlicStatus::Ok);
    assert!(buf.len > 48);
    let mut img = IlicImage { data: ptr::null_mut(), height: 0, width: 0 };
    assert_eq!(unsafe { ilic_decode(m, buf.data, buf.len, &mut img) }, IlicStatus::Ok);
    assert_eq!((img.height, img.width), (h, w));
    let mut p = 0.0;
    assert_eq!(unsafe { ilic_psnr(rgb.as_ptr(), img.data, h, w, &mut p) }, IlicStatus::Ok);
    assert!(p.is_finite() && p > 0.0);

    let mut again = IlicBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { ilic_encode(m, rgb.as_ptr(), h, w, 3, &mut again) }, IlicStatus::Ok);
    let (a, b) = unsafe { (std::slice::from_raw_parts(buf.data, buf.len), std::slice::from_raw_parts(again.data, again.len)) };
    assert_eq!(a, b);

    unsafe {
        ilic_buffer_free(&mut buf);
        ilic_buffer_free(&mut again);
        ilic_image_free(&mut img);
        ilic_buffer_free(&mut buf);
        ilic_model_free(m);
    }
    assert!(buf.data.is_null() && img.data.is_null());
}

#[test]
fn errors_set_status_and_message() {
    let m = tiny_model(2);
    let mut buf = IlicBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { ilic_encode(ptr::null(), [0u8; 3].as_ptr(), 1, 1, 0, &mut buf) }, IlicStatus::NullPointer);
    assert!(!last_error().is_empty());
    let mut img = IlicImage { data: ptr::null_mut(), height: 0, width: 0 };
    let junk = [7u8; 64];
    assert_eq!(unsafe { ilic_decode(m, junk.as_ptr(), junk.len(), &mut img) }, IlicStatus::Corrupt);
    assert!(last_error().contains("corrupt"), "{}", last_error());

    let bad = CString::new("model.N = lots").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ilic_model_init(bad.as_ptr(), 0, &mut out) }, IlicStatus::Config);
    assert!(out.is_null());
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { ilic_model_load(missing.as_ptr(), &mut out) }, IlicStatus::Io);

    let rgb = gradient(8, 8);
    let mut v = 0.0;
    assert_eq!(unsafe { ilic_ms_ssim(rgb.as_ptr(), rgb.as_ptr(), 8, 8, &mut v, ptr::null_mut()) }, IlicStatus::InvalidArgument);
    assert_eq!(unsafe { ilic_psnr(rgb.as_ptr(), rgb.as_ptr(), 8, 8, &mut v) }, IlicStatus::Ok);
    assert_eq!(v, 100.0);
    assert!(last_error().is_empty());
    unsafe { ilic_model_free(m) };
}

#[test]
fn checkpoint_save_and_load_keep_identity() {
    let m = tiny_model(3);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ilic_model_save(m, path.as_ptr()) }, IlicStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ilic_model_load(path.as_ptr(), &mut back) }, IlicStatus::Ok);
    let (mut a, mut b) = ([0u8; 8], [0u8; 8]);
    unsafe {
        assert_eq!(ilic_model_id(m, a.as_mut_ptr()), IlicStatus::Ok);
        assert_eq!(ilic_model_id(back, b.as_mut_ptr()), IlicStatus::Ok);
        ilic_model_free(m);
        ilic_model_free(back);
    }
    assert_eq!(a, b);
    assert_eq!(unsafe { CStr::from_ptr(ilic_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "ilic.h"

int main(void) {
    const char *cfg = "model.N = 4\nmodel.M = 6\nmodel.Mz = 3\nfrm.variant = a\nfrm.channels = 2\nfenm.layers = 1\nfenm.growth = 2\n";
    IlicModel *m = NULL;
    if (ilic_model_init(cfg, 5, &m) != ILIC_STATUS_OK) return 1;
    unsigned char rgb[16 * 16 * 3];
    for (int i = 0; i < (int)sizeof rgb; i++) rgb[i] = (unsigned char)(i * 13);
    IlicBuffer buf = {0};
    if (ilic_encode(m, rgb, 16, 16, 0, &buf) != ILIC_STATUS_OK) return 2;
    IlicImage img = {0};
    if (ilic_decode(m, buf.data, buf.len, &img) != ILIC_STATUS_OK) return 3;
    if (img.height != 16 || img.width != 16) return 4;
    if (ilic_decode(m, buf.data, 3, &img) != ILIC_STATUS_CORRUPT || strlen(ilic_last_error()) == 0) return 5;
    printf("%zu\n", buf.len);
    ilic_buffer_free(&buf);
    ilic_image_free(&img);
    ilic_model_free(m);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // the test binary lives in <target>/<profile>/deps, next to the library
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libilic_ffi.so").exists(), "shared library not built in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lilic_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("a C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let len: usize = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(len > 48);
}
