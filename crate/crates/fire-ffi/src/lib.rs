//! C ABI over the fire library: opaque checkpoint handles, status codes,
//! and batch entry points for field evaluation, rendering, reconstruction
//! and the chamfer metric.
//!
//! Conventions:
//! * Every fallible call returns a [`FireStatus`]; `FIRE_STATUS_OK` is 0.
//! * On failure, `fire_last_error` copies a UTF-8 message for the calling
//!   thread.
//! * Point/ray buffers are tightly packed xyz triples, row-major images
//!   are width*height with row 0 at the top.
//! * A `FireCheckpoint` is immutable after load and safe to share across
//!   threads; per-call output buffers belong to the caller.

use fire_core::error::FireError;
use fire_core::fire::{reconstruct_from_depth, DepthObservation, ReconConfig};
use fire_core::geom::{vec3, Vec3};
use fire_core::render::{render_ddf, Camera, DepthImage};
use fire_core::train::Checkpoint;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FireStatus {
    Ok = 0,
    InvalidArgument = 1,
    IoError = 2,
    NumericError = 3,
    InternalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| {
        let mut b = e.borrow_mut();
        b.clear();
        b.extend_from_slice(msg.as_bytes());
        b.push(0);
    });
}

fn status_of(err: &FireError) -> FireStatus {
    match err {
        FireError::InvalidInput(_) => FireStatus::InvalidArgument,
        FireError::Parse { .. } | FireError::Io { .. } => FireStatus::IoError,
        FireError::Generation(_) | FireError::Numeric { .. } => FireStatus::NumericError,
    }
}

fn fail(err: FireError) -> FireStatus {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

fn guard(f: impl FnOnce() -> FireStatus) -> FireStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic across the FFI boundary".to_string());
            set_error(msg);
            FireStatus::InternalError
        }
    }
}

/// Copies the calling thread's last error message (NUL-terminated) into
/// `buf`; returns the full message length including the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be null when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn fire_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if msg.is_empty() {
            return 0;
        }
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static version string, NUL-terminated.
#[no_mangle]
pub extern "C" fn fire_version() -> *const c_char {
    concat!("fire ", env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque trained-model handle.
pub struct FireCheckpoint {
    inner: Checkpoint,
}

/// Pinhole camera description for the rendering entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FireCameraDesc {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

fn camera_from(desc: &FireCameraDesc) -> Result<Camera, FireError> {
    Camera::look_at(
        Vec3::from_array(desc.position),
        Vec3::from_array(desc.target),
        Vec3::from_array(desc.up),
        desc.fov_y_deg,
        desc.width as usize,
        desc.height as usize,
    )
}

/// Loads a FIRC checkpoint; on success stores the handle in `out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fire_checkpoint_load(
    path: *const c_char,
    out: *mut *mut FireCheckpoint,
) -> FireStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8".into());
                return FireStatus::InvalidArgument;
            }
        };
        match Checkpoint::load(std::path::Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(FireCheckpoint { inner: ckpt }));
                FireStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a handle returned by [`fire_checkpoint_load`].
///
/// # Safety
/// `ckpt` must be null or a pointer from `fire_checkpoint_load`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fire_checkpoint_free(ckpt: *mut FireCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Number of training shapes (latent codes) in the checkpoint.
///
/// # Safety
/// `ckpt` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fire_checkpoint_shape_count(ckpt: *const FireCheckpoint) -> usize {
    if ckpt.is_null() {
        return 0;
    }
    (*ckpt).inner.latents.len()
}

/// Latent dimensionality of the model.
///
/// # Safety
/// `ckpt` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fire_checkpoint_latent_dim(ckpt: *const FireCheckpoint) -> usize {
    if ckpt.is_null() {
        return 0;
    }
    (*ckpt).inner.config.field.latent_dim
}

/// Copies the trained latent code of a shape into `out` (length `len` must
/// equal the latent dimension).
///
/// # Safety
/// `ckpt` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fire_checkpoint_latent(
    ckpt: *const FireCheckpoint,
    shape_index: usize,
    out: *mut f64,
    len: usize,
) -> FireStatus {
    guard(|| {
        if ckpt.is_null() || out.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let ck = &(*ckpt).inner;
        match ck.latent(shape_index) {
            Ok(z) => {
                if z.len() != len {
                    set_error(format!("latent length {} != buffer length {len}", z.len()));
                    return FireStatus::InvalidArgument;
                }
                std::ptr::copy_nonoverlapping(z.as_ptr(), out, len);
                FireStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() && len > 0 {
        None
    } else if len == 0 {
        Some(&[])
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn points_from(xyz: &[f64]) -> Vec<Vec3> {
    xyz.chunks_exact(3).map(|c| vec3(c[0], c[1], c[2])).collect()
}

/// Evaluates the truncated SDF at `n_points` packed xyz points.
///
/// # Safety
/// Buffers must match the documented lengths: `z` has `z_len` doubles,
/// `points_xyz` has `3 * n_points`, `out_sdf` has `n_points`.
#[no_mangle]
pub unsafe extern "C" fn fire_sdf_eval(
    ckpt: *const FireCheckpoint,
    z: *const f64,
    z_len: usize,
    points_xyz: *const f64,
    n_points: usize,
    out_sdf: *mut f64,
) -> FireStatus {
    guard(|| {
        if ckpt.is_null() || out_sdf.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let ck = &(*ckpt).inner;
        let (Some(z), Some(xyz)) = (slice_arg(z, z_len), slice_arg(points_xyz, n_points * 3))
        else {
            set_error("null buffer with nonzero length".into());
            return FireStatus::InvalidArgument;
        };
        if z.len() != ck.config.field.latent_dim {
            set_error(format!(
                "latent length {} != model latent_dim {}",
                z.len(),
                ck.config.field.latent_dim
            ));
            return FireStatus::InvalidArgument;
        }
        let pts = points_from(xyz);
        let vals = ck.models.sdf_eval_batch(z, &pts);
        std::ptr::copy_nonoverlapping(vals.as_ptr(), out_sdf, n_points);
        FireStatus::Ok
    })
}

/// Evaluates the DDF for `n_rays` packed (p, r) pairs; writes distances
/// and hit probabilities.
///
/// # Safety
/// `p_xyz`/`r_xyz` hold `3 * n_rays` doubles; `out_d`/`out_sigma` hold
/// `n_rays` each.
#[no_mangle]
pub unsafe extern "C" fn fire_ddf_eval(
    ckpt: *const FireCheckpoint,
    z: *const f64,
    z_len: usize,
    p_xyz: *const f64,
    r_xyz: *const f64,
    n_rays: usize,
    out_d: *mut f64,
    out_sigma: *mut f64,
) -> FireStatus {
    guard(|| {
        if ckpt.is_null() || out_d.is_null() || out_sigma.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let ck = &(*ckpt).inner;
        let (Some(z), Some(ps), Some(rs)) = (
            slice_arg(z, z_len),
            slice_arg(p_xyz, n_rays * 3),
            slice_arg(r_xyz, n_rays * 3),
        ) else {
            set_error("null buffer with nonzero length".into());
            return FireStatus::InvalidArgument;
        };
        if z.len() != ck.config.field.latent_dim {
            set_error("latent length does not match the model".into());
            return FireStatus::InvalidArgument;
        }
        let (d, s) = ck
            .models
            .ddf_eval_batch(z, &points_from(ps), &points_from(rs));
        std::ptr::copy_nonoverlapping(d.as_ptr(), out_d, n_rays);
        std::ptr::copy_nonoverlapping(s.as_ptr(), out_sigma, n_rays);
        FireStatus::Ok
    })
}

/// Renders a depth map with one DDF evaluation per sphere-hit pixel.
/// `out_depth` and `out_mask` hold width*height entries; masked-out pixels
/// carry depth 0.
///
/// # Safety
/// Buffer lengths must match the camera resolution.
#[no_mangle]
pub unsafe extern "C" fn fire_render_depth(
    ckpt: *const FireCheckpoint,
    z: *const f64,
    z_len: usize,
    camera: *const FireCameraDesc,
    sigma_threshold: f64,
    threads: u32,
    out_depth: *mut f64,
    out_mask: *mut u8,
) -> FireStatus {
    guard(|| {
        if ckpt.is_null() || camera.is_null() || out_depth.is_null() || out_mask.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let ck = &(*ckpt).inner;
        let Some(z) = slice_arg(z, z_len) else {
            set_error("null latent buffer".into());
            return FireStatus::InvalidArgument;
        };
        if z.len() != ck.config.field.latent_dim {
            set_error("latent length does not match the model".into());
            return FireStatus::InvalidArgument;
        }
        let cam = match camera_from(&*camera) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match render_ddf(&ck.models, z, &cam, sigma_threshold, threads.max(1) as usize) {
            Ok((img, _evals)) => {
                std::ptr::copy_nonoverlapping(img.depth.as_ptr(), out_depth, img.depth.len());
                for (i, &m) in img.mask.iter().enumerate() {
                    *out_mask.add(i) = m as u8 * 255;
                }
                FireStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Optimizes a latent code from a posed depth map (FIRe loop). `depth` and
/// `mask` are width*height buffers; `out_z` receives the optimized code.
///
/// # Safety
/// Buffer lengths must match the camera resolution and the model latent
/// dimension.
#[no_mangle]
pub unsafe extern "C" fn fire_reconstruct_depth(
    ckpt: *const FireCheckpoint,
    camera: *const FireCameraDesc,
    depth: *const f64,
    mask: *const u8,
    iterations: u32,
    out_z: *mut f64,
    z_len: usize,
) -> FireStatus {
    guard(|| {
        if ckpt.is_null() || camera.is_null() || depth.is_null() || mask.is_null() || out_z.is_null()
        {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let ck = &(*ckpt).inner;
        if z_len != ck.config.field.latent_dim {
            set_error("out_z length does not match the model".into());
            return FireStatus::InvalidArgument;
        }
        let desc = &*camera;
        let npix = desc.width as usize * desc.height as usize;
        let (Some(depth), Some(mask)) = (slice_arg(depth, npix), slice_arg(mask, npix)) else {
            set_error("null image buffer".into());
            return FireStatus::InvalidArgument;
        };
        let cam = match camera_from(desc) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let img = DepthImage {
            width: cam.width,
            height: cam.height,
            depth: depth.to_vec(),
            mask: mask.iter().map(|&b| b >= 128).collect(),
            sigma: None,
        };
        let obs = match DepthObservation::new(img, cam) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        let mut cfg = ReconConfig::depth_mode();
        if iterations > 0 {
            cfg.iterations = iterations as usize;
            cfg.lr_switch = (iterations as usize / 2).max(1);
        }
        match reconstruct_from_depth(&ck.models, &obs, &cfg) {
            Ok((zstar, _diag)) => {
                std::ptr::copy_nonoverlapping(zstar.as_ptr(), out_z, z_len);
                FireStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Symmetric L2 chamfer distance between two packed xyz point sets.
///
/// # Safety
/// `a_xyz` holds `3 * n_a` doubles, `b_xyz` holds `3 * n_b`, and `out` is
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fire_chamfer(
    a_xyz: *const f64,
    n_a: usize,
    b_xyz: *const f64,
    n_b: usize,
    out: *mut f64,
) -> FireStatus {
    guard(|| {
        if out.is_null() {
            set_error("null pointer argument".into());
            return FireStatus::InvalidArgument;
        }
        let (Some(a), Some(b)) = (slice_arg(a_xyz, n_a * 3), slice_arg(b_xyz, n_b * 3)) else {
            set_error("null buffer with nonzero length".into());
            return FireStatus::InvalidArgument;
        };
        match fire_core::eval::chamfer(&points_from(a), &points_from(b)) {
            Ok(v) => {
                *out = v;
                FireStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
