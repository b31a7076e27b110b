use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bcdist_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        bcd_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

struct Handles {
    geometry: *mut BcdGeometry,
    provider: *mut BcdProvider,
}

impl Handles {
    fn desk() -> Self {
        let mut geometry = ptr::null_mut();
        let mut provider = ptr::null_mut();
        unsafe {
            assert_eq!(bcd_geometry_new(1.0, 0.6, &mut geometry), BcdStatus::Ok);
            assert_eq!(bcd_exact_provider_new(geometry, &mut provider), BcdStatus::Ok);
        }
        Self { geometry, provider }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            bcd_provider_free(self.provider);
            bcd_geometry_free(self.geometry);
        }
    }
}

fn tau(descriptor: &str, horizon: f64) -> *mut BcdTau {
    let text = CString::new(descriptor).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { bcd_tau_parse(text.as_ptr(), horizon, &mut t) }, BcdStatus::Ok);
    t
}

#[test]
fn exact_volume_of_a_strip_matches_closed_form() {
    let h = Handles::desk();
    let t = tau("0.25", 0.6);
    let mut v = 0.0;
    let mut p = 0.0;
    unsafe {
        assert_eq!(bcd_exact_volume(h.geometry, t, &mut v), BcdStatus::Ok);
        assert_eq!(bcd_provider_volume(h.provider, t, &mut p), BcdStatus::Ok);
        bcd_tau_free(t);
    }
    let expected = 2.0 * 0.25 + 0.5 * std::f64::consts::PI * 0.0625;
    assert!((v - expected).abs() < 1e-12);
    assert_eq!(v, p);
}

#[test]
fn tau_eval_reads_the_cone() {
    let t = tau("0.25|cone(0,0.3)", 0.6);
    let mut v = 0.0;
    unsafe {
        assert_eq!(bcd_tau_eval(t, 0.0, &mut v), BcdStatus::Ok);
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(bcd_tau_eval(t, 0.2, &mut v), BcdStatus::Ok);
        assert!((v - 0.25).abs() < 1e-15);
        bcd_tau_free(t);
    }
}

#[test]
fn cap_and_overlap_volumes() {
    let h = Handles::desk();
    let (mut cap, mut overlap) = (0.0, 0.0);
    unsafe {
        assert_eq!(bcd_cap_volume(h.provider, 0.0, 0.25, 0.05, &mut cap), BcdStatus::Ok);
        assert_eq!(bcd_overlap_volume(h.provider, 0.0, 0.25, 0.05, 0.0, 0.05, &mut overlap), BcdStatus::Ok);
    }
    assert!((cap - 0.011_253_889_0).abs() < 1e-9);
    assert!((overlap - cap).abs() < 1e-12);
}

#[test]
fn half_volume_distance_brackets_the_truth() {
    let h = Handles::desk();
    let radii: Vec<f64> = (1..=340).map(|j| j as f64 * 1e-3).collect();
    let (mut d, mut flag) = (0.0, BcdFlag::NotBracketed);
    let status = unsafe {
        bcd_estimate_distance(h.provider, 0.0, 0.25, 0.05, 0.3, radii.as_ptr(), radii.len(), 2, 0.0, &mut d, &mut flag)
    };
    assert_eq!(status, BcdStatus::Ok);
    assert_eq!(flag, BcdFlag::Ok);
    let truth = (0.3f64 * 0.3 + 0.25 * 0.25).sqrt();
    assert!(d > truth && d < truth + 0.05, "d = {d}, truth = {truth}");
}

#[test]
fn unreachable_target_is_flagged() {
    let h = Handles::desk();
    let radii = [0.05, 0.1];
    let (mut d, mut flag) = (0.0, BcdFlag::Ok);
    let status = unsafe {
        bcd_estimate_distance(h.provider, 0.0, 0.25, 0.05, 0.5, radii.as_ptr(), 2, 2, 0.0, &mut d, &mut flag)
    };
    assert_eq!(status, BcdStatus::Ok);
    assert_eq!(flag, BcdFlag::NotBracketed);
    assert!(d.is_nan());
    let status = unsafe {
        bcd_estimate_distance(h.provider, 0.0, 0.25, 0.05, 0.5, radii.as_ptr(), 2, 1, 0.0, &mut d, &mut flag)
    };
    assert_eq!(status, BcdStatus::Numerical);
}

#[test]
fn errors_set_codes_and_messages() {
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(bcd_geometry_new(-1.0, 0.6, &mut g), BcdStatus::InvalidArgument);
        assert!(g.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(bcd_geometry_new(1.0, 0.6, ptr::null_mut()), BcdStatus::NullPointer);
        assert!(last_error().contains("out_geometry"));

        let bad = CString::new("cone(").unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(bcd_tau_parse(bad.as_ptr(), 0.6, &mut t), BcdStatus::InvalidArgument);
        let too_big = CString::new("0.7").unwrap();
        assert_eq!(bcd_tau_parse(too_big.as_ptr(), 0.6, &mut t), BcdStatus::InvalidArgument);

        let h = Handles::desk();
        let radii = [0.2, 0.1];
        let (mut d, mut flag) = (0.0, BcdFlag::Ok);
        let status =
            bcd_estimate_distance(h.provider, 0.0, 0.25, 0.05, 0.0, radii.as_ptr(), 2, 2, 0.0, &mut d, &mut flag);
        assert_eq!(status, BcdStatus::InvalidArgument);
        let status =
            bcd_estimate_distance(h.provider, 0.0, 0.25, 0.05, 0.0, radii.as_ptr(), 2, 7, 0.0, &mut d, &mut flag);
        assert_eq!(status, BcdStatus::InvalidArgument);
    }
}

#[test]
fn last_error_truncates_safely() {
    let mut g = ptr::null_mut();
    unsafe {
        bcd_geometry_new(f64::NAN, 0.6, &mut g);
        let full = bcd_last_error(ptr::null_mut(), 0);
        let mut buf = [1 as c_char; 4];
        assert_eq!(bcd_last_error(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(buf[3], 0);
        assert!(full > 3);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(bcd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bcdist.h")).unwrap();
    for name in [
        "bcd_last_error",
        "bcd_version",
        "bcd_geometry_new",
        "bcd_geometry_free",
        "bcd_tau_parse",
        "bcd_tau_free",
        "bcd_tau_eval",
        "bcd_exact_volume",
        "bcd_exact_provider_new",
        "bcd_estimated_provider_new",
        "bcd_provider_free",
        "bcd_provider_volume",
        "bcd_cap_volume",
        "bcd_overlap_volume",
        "bcd_estimate_distance",
        "typedef struct BcdProvider BcdProvider",
        "BCD_STATUS_CACHE_MISMATCH = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"bcdist.h\"\nint main(void) { BcdGeometry *g = 0; return bcd_geometry_new(1.0, 0.6, &g) == BCD_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
