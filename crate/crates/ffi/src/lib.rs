//! C ABI over `fednet-core`.
//!
//! Every function returns a [`FednetStatus`]. On failure the message is kept
//! per thread and read with [`fednet_last_error`]. Objects are opaque handles
//! created by `*_new`/`*_read`/`*_load` and released with the matching
//! `*_free`; outputs are written through pointer arguments only on success.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fednet_core::ct::{self, AnyVolume, CtVolume, MaskVolume, SynthParams};
use fednet_core::error::{CheckpointError, MvolError};
use fednet_core::harness::{self, StagePair, TrainConfig};
use fednet_core::{metrics, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FednetStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Bad input: wrong dtype, mismatched dims, invalid config, non-UTF-8 path.
    InvalidArgument = 2,
    /// The file could not be read or written.
    Io = 3,
    /// A volume or checkpoint file is malformed or does not fit the network.
    Format = 4,
    /// Any other failure inside the library.
    Internal = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Voxel type codes; the values match the MVOL header byte.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FednetDtype {
    I16 = 1,
    F32 = 2,
    U8 = 3,
}

/// A CT (i16), probability (f32) or mask (u8) volume.
pub struct FednetVolume(AnyVolume);

/// A loaded liver/lesion model pair and the configuration used to run it.
pub struct FednetPipeline {
    models: StagePair,
    cfg: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FednetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(classify(&e), e.to_string())
    }
}

fn classify(e: &Error) -> FednetStatus {
    match e {
        Error::File { source, .. } => classify(source),
        Error::Io(_) | Error::Mvol(MvolError::Io(_)) | Error::Checkpoint(CheckpointError::Io(_)) => FednetStatus::Io,
        Error::Mvol(_) | Error::Checkpoint(_) => FednetStatus::Format,
        e if e.is_validation() => FednetStatus::InvalidArgument,
        _ => FednetStatus::Internal,
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FednetStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(FednetStatus::NullArgument, format!("`{name}` is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FednetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FednetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FednetStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn boxed(v: AnyVolume) -> *mut FednetVolume {
    Box::into_raw(Box::new(FednetVolume(v)))
}

fn as_ct<'a>(v: &'a FednetVolume, name: &str) -> Result<&'a CtVolume, Failure> {
    match &v.0 {
        AnyVolume::Ct(c) => Ok(c),
        other => Err(invalid(format!("`{name}` holds {} voxels, expected i16", other.dtype().name()))),
    }
}

fn as_mask<'a>(v: &'a FednetVolume, name: &str) -> Result<&'a MaskVolume, Failure> {
    match &v.0 {
        AnyVolume::Mask(m) => Ok(m),
        other => Err(invalid(format!("`{name}` holds {} voxels, expected u8", other.dtype().name()))),
    }
}

/// Message for the last failed call on this thread, or null after a
/// successful one. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn fednet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fednet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads an MVOL file of any voxel type.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_read(path: *const c_char, out: *mut *mut FednetVolume) -> FednetStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(ct::read_mvol(&path)?);
        Ok(())
    })
}

/// Writes a volume as MVOL.
///
/// # Safety
/// `vol` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_write(vol: *const FednetVolume, path: *const c_char) -> FednetStatus {
    guard(|| {
        let v = handle(vol, "vol")?;
        let path = path_arg(path, "path")?;
        match &v.0 {
            AnyVolume::Ct(c) => ct::write_mvol(c, &path)?,
            AnyVolume::Prob(p) => ct::write_mvol(p, &path)?,
            AnyVolume::Mask(m) => ct::write_mvol(m, &path)?,
        }
        Ok(())
    })
}

/// Copies `nx * ny * nz` voxels (x fastest) from `data` into a new volume.
/// `dtype` is a [`FednetDtype`] value.
///
/// # Safety
/// `dims` and `spacing` must point to three elements, `data` to the voxel
/// count of the given type; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_new(
    dtype: u8,
    dims: *const u32,
    spacing: *const f32,
    data: *const c_void,
    out: *mut *mut FednetVolume,
) -> FednetStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        if spacing.is_null() {
            return Err(null("spacing"));
        }
        if data.is_null() {
            return Err(null("data"));
        }
        let out = out_arg(out, "out")?;
        let d = std::slice::from_raw_parts(dims, 3);
        let d = [d[0] as usize, d[1] as usize, d[2] as usize];
        let n = d[0]
            .checked_mul(d[1])
            .and_then(|v| v.checked_mul(d[2]))
            .ok_or_else(|| invalid("dims overflow"))?;
        let s = std::slice::from_raw_parts(spacing, 3);
        let s = [s[0], s[1], s[2]];
        let v = match dtype {
            1 => {
                AnyVolume::Ct(ct::Volume::new(d, s, std::slice::from_raw_parts(data.cast::<i16>(), n).to_vec()).map_err(Error::from)?)
            }
            2 => {
                AnyVolume::Prob(ct::Volume::new(d, s, std::slice::from_raw_parts(data.cast::<f32>(), n).to_vec()).map_err(Error::from)?)
            }
            3 => {
                AnyVolume::Mask(ct::Volume::new(d, s, std::slice::from_raw_parts(data.cast::<u8>(), n).to_vec()).map_err(Error::from)?)
            }
            other => return Err(invalid(format!("unknown dtype code {other}"))),
        };
        *out = boxed(v);
        Ok(())
    })
}

/// Releases a volume. Null is ignored.
///
/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_free(vol: *mut FednetVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Writes the extents to `dims[0..3]` and the voxel type to `dtype`.
///
/// # Safety
/// `vol` must be a live handle, `dims` writable for three elements and
/// `dtype` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_info(
    vol: *const FednetVolume,
    dims: *mut u32,
    dtype: *mut FednetDtype,
) -> FednetStatus {
    guard(|| {
        let v = handle(vol, "vol")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let dt = out_arg(dtype, "dtype")?;
        let (d, t) = match &v.0 {
            AnyVolume::Ct(c) => (c.dims(), FednetDtype::I16),
            AnyVolume::Prob(p) => (p.dims(), FednetDtype::F32),
            AnyVolume::Mask(m) => (m.dims(), FednetDtype::U8),
        };
        let out = std::slice::from_raw_parts_mut(dims, 3);
        for (o, x) in out.iter_mut().zip(d) {
            *o = u32::try_from(x).map_err(|_| invalid("extent exceeds u32"))?;
        }
        *dt = t;
        Ok(())
    })
}

/// Borrows the voxel buffer. `*data` stays valid until the handle is freed;
/// `*len` is the voxel count, not bytes.
///
/// # Safety
/// `vol` must be a live handle; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_volume_data(
    vol: *const FednetVolume,
    data: *mut *const c_void,
    len: *mut usize,
) -> FednetStatus {
    guard(|| {
        let v = handle(vol, "vol")?;
        let data = out_arg(data, "data")?;
        let len = out_arg(len, "len")?;
        let (p, n) = match &v.0 {
            AnyVolume::Ct(c) => (c.voxels().as_ptr().cast(), c.len()),
            AnyVolume::Prob(p) => (p.voxels().as_ptr().cast(), p.len()),
            AnyVolume::Mask(m) => (m.voxels().as_ptr().cast(), m.len()),
        };
        *data = p;
        *len = n;
        Ok(())
    })
}

/// Maps an i16 CT volume through the fixed HU window to f32 in [0, 1].
///
/// # Safety
/// `ct_vol` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_hu_window(ct_vol: *const FednetVolume, out: *mut *mut FednetVolume) -> FednetStatus {
    guard(|| {
        let c = as_ct(handle(ct_vol, "ct_vol")?, "ct_vol")?;
        let out = out_arg(out, "out")?;
        *out = boxed(AnyVolume::Prob(ct::hu_window_normalize(c)));
        Ok(())
    })
}

/// Dice overlap of two u8 masks of equal size.
///
/// # Safety
/// `a` and `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_dice(a: *const FednetVolume, b: *const FednetVolume, out: *mut f64) -> FednetStatus {
    guard(|| {
        let a = as_mask(handle(a, "a")?, "a")?;
        let b = as_mask(handle(b, "b")?, "b")?;
        let out = out_arg(out, "out")?;
        a.check_same_dims(b).map_err(Error::from)?;
        *out = metrics::dice(a.voxels(), b.voxels()).map_err(Error::from)?;
        Ok(())
    })
}

/// One synthetic phantom: an i16 CT volume and its label volume
/// (0 background, 1 liver, 2 lesion).
///
/// # Safety
/// `dims` must point to three elements; `out_ct` and `out_labels` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_synth(
    seed: u64,
    dims: *const u32,
    out_ct: *mut *mut FednetVolume,
    out_labels: *mut *mut FednetVolume,
) -> FednetStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        let out_ct = out_arg(out_ct, "out_ct")?;
        let out_labels = out_arg(out_labels, "out_labels")?;
        let d = std::slice::from_raw_parts(dims, 3);
        let d = [d[0] as usize, d[1] as usize, d[2] as usize];
        let (img, lab) = ct::synth_generate(seed, 1, d, &SynthParams::default())
            .map_err(Error::from)?
            .pop()
            .ok_or_else(|| Failure(FednetStatus::Internal, "no volume generated".into()))?;
        *out_ct = boxed(AnyVolume::Ct(img));
        *out_labels = boxed(AnyVolume::Mask(lab));
        Ok(())
    })
}

/// Loads a liver and a lesion checkpoint. `config` may be null for the
/// default configuration; it fixes the architecture and thresholds.
///
/// # Safety
/// Paths must be NUL-terminated strings (`config` may be null); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_pipeline_load(
    config: *const c_char,
    liver_ckpt: *const c_char,
    lesion_ckpt: *const c_char,
    out: *mut *mut FednetPipeline,
) -> FednetStatus {
    guard(|| {
        let cfg = if config.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_file(path_arg(config, "config")?)?
        };
        let liver = path_arg(liver_ckpt, "liver_ckpt")?;
        let lesion = path_arg(lesion_ckpt, "lesion_ckpt")?;
        let out = out_arg(out, "out")?;
        let models = StagePair::load(&cfg, &liver, &lesion)?;
        *out = Box::into_raw(Box::new(FednetPipeline { models, cfg }));
        Ok(())
    })
}

/// Releases a pipeline. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fednet_pipeline_free(p: *mut FednetPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Segments an i16 CT volume into a liver mask and a lesion mask. Either
/// output pointer may be null when that mask is not wanted.
///
/// # Safety
/// `p` and `ct_vol` must be live handles; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fednet_pipeline_infer(
    p: *const FednetPipeline,
    ct_vol: *const FednetVolume,
    out_liver: *mut *mut FednetVolume,
    out_lesion: *mut *mut FednetVolume,
) -> FednetStatus {
    guard(|| {
        let p = handle(p, "pipeline")?;
        let c = as_ct(handle(ct_vol, "ct_vol")?, "ct_vol")?;
        let r = harness::infer_volume(&p.models, &p.cfg, c)?;
        if let Some(o) = out_liver.as_mut() {
            *o = boxed(AnyVolume::Mask(r.liver));
        }
        if let Some(o) = out_lesion.as_mut() {
            *o = boxed(AnyVolume::Mask(r.lesion));
        }
        Ok(())
    })
}
