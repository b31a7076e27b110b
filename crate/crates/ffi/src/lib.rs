//! C interface to `bcdist`.
//!
//! Every function returns a [`BcdStatus`]; results are written through out
//! pointers. Objects are opaque handles released with the matching
//! `*_free`. After a failure, [`bcd_last_error`] copies a message for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use bcdist::config::ExperimentConfig;
use bcdist::control::{ExactVolumes, VolumeProvider};
use bcdist::distance::{cap_volume, estimate_r_method1, estimate_r_method2, overlap_volume, EstimateFlag, RGrid};
use bcdist::geometry::{exact_volume, parse_tau, BoundaryPoint, HalfPlaneGeometry, TauFunction};
use bcdist::pipeline::Pipeline;
use bcdist::Error;

/// Result codes. Values 2 to 4 match the command line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    CacheMismatch = 4,
    Io = 5,
    Panic = 6,
}

/// Outcome of a half-volume distance estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcdFlag {
    Ok = 0,
    EdgeInterpolated = 1,
    NotBracketed = 2,
    Failed = 3,
}

/// Half-plane aperture `[-L, L]` with horizon `T` and unit sound speed.
pub struct BcdGeometry {
    inner: HalfPlaneGeometry,
}

/// Window function `τ` on the aperture.
pub struct BcdTau {
    inner: TauFunction,
}

/// Source of volumes `τ ↦ Vol(M(τ))`, exact or data driven.
pub struct BcdProvider {
    inner: Box<dyn VolumeProvider + Send>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BcdStatus {
    match e {
        Error::Io(_) => BcdStatus::Io,
        other => match other.exit_code() {
            2 => BcdStatus::InvalidArgument,
            4 => BcdStatus::CacheMismatch,
            _ => BcdStatus::Numerical,
        },
    }
}

struct Fail(BcdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> BcdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BcdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BcdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(BcdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(BcdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bcd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bcd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `out_geometry` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bcd_geometry_new(
    half_width: f64,
    horizon: f64,
    out_geometry: *mut *mut BcdGeometry,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_geometry, "out_geometry")?;
        let inner = HalfPlaneGeometry::unit_speed(half_width, horizon)?;
        *slot = Box::into_raw(Box::new(BcdGeometry { inner }));
        Ok(())
    })
}

/// # Safety
/// `geometry` must come from [`bcd_geometry_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bcd_geometry_free(geometry: *mut BcdGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// Parses a window such as `0.25` or `0.25|cone(0,0.3)`.
///
/// # Safety
/// `descriptor` must be a NUL-terminated string and `out_tau` valid.
#[no_mangle]
pub unsafe extern "C" fn bcd_tau_parse(descriptor: *const c_char, horizon: f64, out_tau: *mut *mut BcdTau) -> BcdStatus {
    guard(|| {
        let slot = out(out_tau, "out_tau")?;
        let inner = parse_tau(&string(descriptor, "descriptor")?, horizon)?;
        *slot = Box::into_raw(Box::new(BcdTau { inner }));
        Ok(())
    })
}

/// # Safety
/// `tau` must come from [`bcd_tau_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bcd_tau_free(tau: *mut BcdTau) {
    if !tau.is_null() {
        drop(Box::from_raw(tau));
    }
}

/// # Safety
/// Pointers must be valid handles and a writable `f64`.
#[no_mangle]
pub unsafe extern "C" fn bcd_tau_eval(tau: *const BcdTau, x1: f64, out_value: *mut f64) -> BcdStatus {
    guard(|| {
        *out(out_value, "out_value")? = deref(tau, "tau")?.inner.eval(BoundaryPoint::new(x1));
        Ok(())
    })
}

/// Closed-form `Vol(M(τ))`.
///
/// # Safety
/// Pointers must be valid handles and a writable `f64`.
#[no_mangle]
pub unsafe extern "C" fn bcd_exact_volume(
    geometry: *const BcdGeometry,
    tau: *const BcdTau,
    out_volume: *mut f64,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        *slot = exact_volume(&deref(tau, "tau")?.inner, &deref(geometry, "geometry")?.inner)?;
        Ok(())
    })
}

/// Provider of closed-form volumes.
///
/// # Safety
/// `geometry` must be a valid handle and `out_provider` writable.
#[no_mangle]
pub unsafe extern "C" fn bcd_exact_provider_new(
    geometry: *const BcdGeometry,
    out_provider: *mut *mut BcdProvider,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_provider, "out_provider")?;
        let inner = ExactVolumes::new(deref(geometry, "geometry")?.inner.clone())?;
        *slot = Box::into_raw(Box::new(BcdProvider { inner: Box::new(inner) }));
        Ok(())
    })
}

/// Data-driven provider for an experiment. Simulates and assembles into
/// `cache_dir` when the artifacts are missing, which can take minutes.
///
/// `config_path` may be null to use the preset named by `preset`
/// (`"desk"` or `"paper"`).
///
/// # Safety
/// Strings must be NUL terminated or null where allowed; `out_provider`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcd_estimated_provider_new(
    config_path: *const c_char,
    preset: *const c_char,
    cache_dir: *const c_char,
    out_provider: *mut *mut BcdProvider,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_provider, "out_provider")?;
        let config = if config_path.is_null() {
            ExperimentConfig::preset(&string(preset, "preset")?)?
        } else {
            ExperimentConfig::load(&PathBuf::from(string(config_path, "config_path")?))?
        };
        let pipeline = Pipeline::new(config, string(cache_dir, "cache_dir")?)?;
        let (op, _) = pipeline.ensure_operator()?;
        let inner = pipeline.estimated_provider(Arc::new(op));
        *slot = Box::into_raw(Box::new(BcdProvider { inner: Box::new(inner) }));
        Ok(())
    })
}

/// # Safety
/// `provider` must come from a `bcd_*_provider_new` call or be null.
#[no_mangle]
pub unsafe extern "C" fn bcd_provider_free(provider: *mut BcdProvider) {
    if !provider.is_null() {
        drop(Box::from_raw(provider));
    }
}

/// # Safety
/// Pointers must be valid handles and a writable `f64`.
#[no_mangle]
pub unsafe extern "C" fn bcd_provider_volume(
    provider: *const BcdProvider,
    tau: *const BcdTau,
    out_volume: *mut f64,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        *slot = deref(provider, "provider")?.inner.volume(&deref(tau, "tau")?.inner)?;
        Ok(())
    })
}

/// Volume of the wave cap at `(y, s)` with height `h`.
///
/// # Safety
/// `provider` must be a valid handle and `out_volume` writable.
#[no_mangle]
pub unsafe extern "C" fn bcd_cap_volume(
    provider: *const BcdProvider,
    y: f64,
    s: f64,
    h: f64,
    out_volume: *mut f64,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        *slot = cap_volume(&*deref(provider, "provider")?.inner, BoundaryPoint::new(y), s, h)?;
        Ok(())
    })
}

/// Volume shared by the cap at `(y, s, h)` and the cap around `z` of
/// radius `s + r`.
///
/// # Safety
/// `provider` must be a valid handle and `out_volume` writable.
#[no_mangle]
pub unsafe extern "C" fn bcd_overlap_volume(
    provider: *const BcdProvider,
    y: f64,
    s: f64,
    h: f64,
    z: f64,
    r: f64,
    out_volume: *mut f64,
) -> BcdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        let p = &*deref(provider, "provider")?.inner;
        *slot = overlap_volume(p, BoundaryPoint::new(y), s, h, BoundaryPoint::new(z), r)?;
        Ok(())
    })
}

/// Estimates `d(z, x(y, s))` over the increasing radii `radii[0..count]`.
///
/// `method` 1 takes the first radius whose overlap exceeds
/// `threshold · m_target` and fails with `Numerical` when none does.
/// `method` 2 interpolates the half-volume radius; when the grid does not
/// reach half the cap, `out_distance` is NaN and `out_flag` is
/// `NotBracketed`.
///
/// # Safety
/// `radii` must point to `count` values; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcd_estimate_distance(
    provider: *const BcdProvider,
    y: f64,
    s: f64,
    h: f64,
    z: f64,
    radii: *const f64,
    count: usize,
    method: u32,
    threshold: f64,
    out_distance: *mut f64,
    out_flag: *mut BcdFlag,
) -> BcdStatus {
    guard(|| {
        let dist = out(out_distance, "out_distance")?;
        let flag = out(out_flag, "out_flag")?;
        if radii.is_null() {
            return Err(null("radii"));
        }
        let p = &*deref(provider, "provider")?.inner;
        let grid = RGrid::new(std::slice::from_raw_parts(radii, count).to_vec(), s, p.horizon())?;
        let (y, z) = (BoundaryPoint::new(y), BoundaryPoint::new(z));
        let (r, f) = match method {
            1 => (Some(estimate_r_method1(p, y, s, h, z, &grid, threshold)?), EstimateFlag::Ok),
            2 => {
                let est = estimate_r_method2(p, y, s, h, z, &grid)?;
                (est.r_h, est.flag)
            }
            m => return Err(Fail(BcdStatus::InvalidArgument, format!("method must be 1 or 2, got {m}"))),
        };
        *dist = r.map_or(f64::NAN, |r| s + r);
        *flag = match f {
            EstimateFlag::Ok => BcdFlag::Ok,
            EstimateFlag::EdgeInterpolated => BcdFlag::EdgeInterpolated,
            EstimateFlag::NotBracketed => BcdFlag::NotBracketed,
            EstimateFlag::Failed => BcdFlag::Failed,
        };
        Ok(())
    })
}
