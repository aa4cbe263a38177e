use std::ffi::{c_void, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fednet_core::checkpoint;
use fednet_core::harness::TrainConfig;
use fednet_core::nn::FedNet;
use fednet_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = fednet_last_error();
    assert!(!p.is_null(), "no error message recorded");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

struct Vol(*mut FednetVolume);

impl Drop for Vol {
    fn drop(&mut self) {
        unsafe { fednet_volume_free(self.0) }
    }
}

fn new_volume<T>(dtype: FednetDtype, dims: [u32; 3], data: &[T]) -> Vol {
    let mut out = ptr::null_mut();
    let st = unsafe {
        fednet_volume_new(
            dtype as u8,
            dims.as_ptr(),
            [1.0f32, 1.0, 2.5].as_ptr(),
            data.as_ptr().cast(),
            &mut out,
        )
    };
    assert_eq!(st, FednetStatus::Ok);
    Vol(out)
}

fn voxels<T: Copy>(v: &Vol) -> Vec<T> {
    let mut data: *const c_void = ptr::null();
    let mut len = 0usize;
    assert_eq!(unsafe { fednet_volume_data(v.0, &mut data, &mut len) }, FednetStatus::Ok);
    unsafe { std::slice::from_raw_parts(data.cast::<T>(), len) }.to_vec()
}

#[test]
fn volume_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.mvol");
    let data: Vec<i16> = (0..24).map(|i| i * 37 - 400).collect();
    let v = new_volume(FednetDtype::I16, [2, 3, 4], &data);
    assert_eq!(unsafe { fednet_volume_write(v.0, cstr(&path).as_ptr()) }, FednetStatus::Ok);
    assert!(fednet_last_error().is_null());

    let mut r = ptr::null_mut();
    assert_eq!(unsafe { fednet_volume_read(cstr(&path).as_ptr(), &mut r) }, FednetStatus::Ok);
    let r = Vol(r);
    let mut dims = [0u32; 3];
    let mut dt = FednetDtype::U8;
    assert_eq!(unsafe { fednet_volume_info(r.0, dims.as_mut_ptr(), &mut dt) }, FednetStatus::Ok);
    assert_eq!((dims, dt), ([2, 3, 4], FednetDtype::I16));
    assert_eq!(voxels::<i16>(&r), data);
}

#[test]
fn window_maps_the_hu_endpoints() {
    let v = new_volume(FednetDtype::I16, [4, 1, 1], &[-300i16, -200, 250, 400]);
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { fednet_hu_window(v.0, &mut w) }, FednetStatus::Ok);
    let w = Vol(w);
    assert_eq!(voxels::<f32>(&w), vec![0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn dice_of_masks() {
    let a = new_volume(FednetDtype::U8, [4, 1, 1], &[1u8, 1, 0, 0]);
    let b = new_volume(FednetDtype::U8, [4, 1, 1], &[0u8, 1, 1, 0]);
    let mut d = 0.0;
    assert_eq!(unsafe { fednet_dice(a.0, b.0, &mut d) }, FednetStatus::Ok);
    assert_eq!(d, 0.5);

    let c = new_volume(FednetDtype::U8, [2, 2, 1], &[1u8, 1, 0, 0]);
    assert_eq!(unsafe { fednet_dice(a.0, c.0, &mut d) }, FednetStatus::InvalidArgument);
}

#[test]
fn error_codes_and_messages() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fednet_volume_read(ptr::null(), &mut out) }, FednetStatus::NullArgument);
    assert!(last_error().contains("path"));
    assert!(out.is_null());

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.mvol");
    assert_eq!(unsafe { fednet_volume_read(cstr(&missing).as_ptr(), &mut out) }, FednetStatus::Io);
    assert!(last_error().contains("missing.mvol"));

    let junk = dir.path().join("junk.mvol");
    std::fs::write(&junk, b"not a volume at all, clearly not").unwrap();
    assert_eq!(unsafe { fednet_volume_read(cstr(&junk).as_ptr(), &mut out) }, FednetStatus::Format);

    let st = unsafe { fednet_volume_new(9, [1u32, 1, 1].as_ptr(), [1.0f32; 3].as_ptr(), [0u8].as_ptr().cast(), &mut out) };
    assert_eq!(st, FednetStatus::InvalidArgument);
    assert!(last_error().contains("dtype"));

    let st = unsafe { fednet_volume_new(3, [0u32, 1, 1].as_ptr(), [1.0f32; 3].as_ptr(), [0u8].as_ptr().cast(), &mut out) };
    assert_eq!(st, FednetStatus::InvalidArgument);

    let mask = new_volume(FednetDtype::U8, [1, 1, 1], &[0u8]);
    assert_eq!(unsafe { fednet_hu_window(mask.0, &mut out) }, FednetStatus::InvalidArgument);
    assert!(last_error().contains("expected i16"));
    assert!(out.is_null());

    unsafe { fednet_volume_free(ptr::null_mut()) };
    unsafe { fednet_pipeline_free(ptr::null_mut()) };
}

#[test]
fn synth_labels_are_nested() {
    let (mut c, mut l) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { fednet_synth(5, [32u32, 32, 32].as_ptr(), &mut c, &mut l) }, FednetStatus::Ok);
    let (c, l) = (Vol(c), Vol(l));
    assert_eq!(voxels::<i16>(&c).len(), 32 * 32 * 32);
    let labels = voxels::<u8>(&l);
    assert!(labels.iter().all(|&v| v <= 2));
    assert!(labels.contains(&1));

    let (mut c2, mut l2) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { fednet_synth(5, [16u32, 32, 32].as_ptr(), &mut c2, &mut l2) },
        FednetStatus::InvalidArgument
    );
}

fn untrained_checkpoints(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = TrainConfig::default().spec;
    let (liver, lesion) = (dir.join("liver.ckpt"), dir.join("lesion.ckpt"));
    let (_, s) = FedNet::init::<f32>(spec.baseline(), 1).unwrap();
    checkpoint::save(&s, &liver).unwrap();
    let (_, s) = FedNet::init::<f32>(spec, 2).unwrap();
    checkpoint::save(&s, &lesion).unwrap();
    (liver, lesion)
}

#[test]
fn pipeline_infers_masks_of_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let (liver, lesion) = untrained_checkpoints(dir.path());
    let mut p = ptr::null_mut();
    let st = unsafe { fednet_pipeline_load(ptr::null(), cstr(&liver).as_ptr(), cstr(&lesion).as_ptr(), &mut p) };
    assert_eq!(st, FednetStatus::Ok);

    let (mut c, mut l) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { fednet_synth(1, [32u32, 32, 32].as_ptr(), &mut c, &mut l) }, FednetStatus::Ok);
    let (c, _l) = (Vol(c), Vol(l));
    let (mut lv, mut ls) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { fednet_pipeline_infer(p, c.0, &mut lv, &mut ls) }, FednetStatus::Ok);
    let (lv, ls) = (Vol(lv), Vol(ls));
    let (liver_mask, lesion_mask) = (voxels::<u8>(&lv), voxels::<u8>(&ls));
    assert_eq!(liver_mask.len(), 32 * 32 * 32);
    assert_eq!(lesion_mask.len(), 32 * 32 * 32);
    assert!(liver_mask.iter().chain(&lesion_mask).all(|&v| v <= 1));

    let mut unused = ptr::null_mut();
    assert_eq!(unsafe { fednet_pipeline_infer(p, ls.0, &mut unused, ptr::null_mut()) }, FednetStatus::InvalidArgument);
    assert!(unused.is_null());
    unsafe { fednet_pipeline_free(p) };
}

#[test]
fn pipeline_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (liver, lesion) = untrained_checkpoints(dir.path());
    let mut p = ptr::null_mut();
    // Swapped: the liver slot needs the baseline parameter set.
    let st = unsafe { fednet_pipeline_load(ptr::null(), cstr(&lesion).as_ptr(), cstr(&liver).as_ptr(), &mut p) };
    assert_eq!(st, FednetStatus::Format);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
}

/// Builds a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("fednet.h").exists(), "build script did not write the header");
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // Test binaries live in target/<profile>/deps; the archive one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    if !lib_dir.join("libfednet_ffi.a").exists() {
        eprintln!("static library not built at {}; skipping", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "fednet.h"
int main(void) {
    uint32_t dims[3] = {32, 32, 32};
    FednetVolume *ct = NULL, *lab = NULL, *w = NULL;
    if (fednet_synth(3, dims, &ct, &lab) != FEDNET_STATUS_OK) return 1;
    if (fednet_hu_window(ct, &w) != FEDNET_STATUS_OK) return 2;
    if (fednet_hu_window(lab, &w) != FEDNET_STATUS_INVALID_ARGUMENT) return 3;
    if (fednet_last_error() == NULL) return 4;
    double d = 0.0;
    if (fednet_dice(lab, lab, &d) != FEDNET_STATUS_OK || d != 1.0) return 5;
    printf("%s\n", fednet_version());
    fednet_volume_free(w);
    fednet_volume_free(lab);
    fednet_volume_free(ct);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(lib_dir.join("libfednet_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
