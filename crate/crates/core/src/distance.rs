//! Distances from boundary points to interior points via wave-cap overlaps.
//!
//! For a target cap at `(y, s)` of height `h` and a boundary point `z`, the
//! overlap of the target cap with the variable cap around `z` of height `r`
//! is `m(τ2) + m(τ3) - m(τ4) - m(τ1)`, with
//!
//! ```text
//! τ1 = s·1_Γ
//! τ2 = τ_y^{s+h} ∨ τ1
//! τ3 = τ_z^{s+r} ∨ τ1
//! τ4 = τ2 ∨ τ3
//! ```
//!
//! The distance estimate is `d_h = s + r_h`, where `r_h` is read off the
//! overlap curve `r ↦ m_overlap(r)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::VolumeProvider;
use crate::error::{Error, Result};
use crate::geometry::{point_distance, BoundaryPoint, TauFunction};
use crate::wave_sim::basis::UniformGrid;

/// Radii `r_1 < … < r_N` of the variable caps for one depth `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RGrid {
    radii: Vec<f64>,
}

/// How [`RGrid::aligned`] places `s + r_j` relative to the source times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RAlignment {
    /// Window edges `T - s - r_j` fall halfway between source times, so no
    /// basis centre sits on a mask boundary.
    #[default]
    Midpoint,
    /// `s + r_j` equals a source time.
    Nodes,
}

impl RGrid {
    pub fn new(radii: Vec<f64>, s: f64, horizon: f64) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::Config("radius grid is empty".into()));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("radii must be positive".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("radii must be strictly increasing".into()));
        }
        if let Some(r) = radii.iter().find(|&&r| s + r >= horizon) {
            return Err(Error::Config(format!("radius {r} reaches past T = {horizon} at depth {s}")));
        }
        Ok(Self { radii })
    }

    pub fn uniform(first: f64, step: f64, count: usize, s: f64, horizon: f64) -> Result<Self> {
        Self::new((0..count).map(|j| first + j as f64 * step).collect(), s, horizon)
    }

    /// All radii below `T - s` aligned with the source time grid.
    pub fn aligned(s: f64, horizon: f64, times: &UniformGrid, alignment: RAlignment) -> Result<Self> {
        let keep = |r: &f64| *r > 1e-12 && s + r < horizon - 1e-12;
        let radii: Vec<f64> = match alignment {
            // T - s - r = t_0 + (k + 1/2)·step for any integer k
            RAlignment::Midpoint => {
                let base = times.origin + 0.5 * times.step;
                let k_min = (-base / times.step).ceil() as i64;
                let k_max = ((horizon - s - base) / times.step).ceil() as i64;
                (k_min..k_max).rev().map(|k| horizon - s - (base + k as f64 * times.step)).filter(keep).collect()
            }
            // s + r = t_k for the source times above s
            RAlignment::Nodes => times.points().into_iter().map(|t| t - s).filter(keep).collect(),
        };
        Self::new(radii, s, horizon)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Largest gap between consecutive radii, counting the gap from 0.
    pub fn max_step(&self) -> f64 {
        let mut prev = 0.0;
        let mut gap: f64 = 0.0;
        for &r in &self.radii {
            gap = gap.max(r - prev);
            prev = r;
        }
        gap
    }
}

fn check_cap(s: f64, h: f64, horizon: f64) -> Result<()> {
    if !(s > 0.0 && h > 0.0 && s.is_finite() && h.is_finite()) {
        return Err(Error::InvalidGeometry(format!("cap needs s > 0 and h > 0, got s = {s}, h = {h}")));
    }
    if s + h >= horizon {
        return Err(Error::InvalidGeometry(format!("cap top s + h = {} must stay below T = {horizon}", s + h)));
    }
    Ok(())
}

/// The windows `τ1 = s·1_Γ` and `τ2 = τ_y^{s+h} ∨ τ1`.
pub fn cap_taus(y: BoundaryPoint, s: f64, h: f64, horizon: f64) -> Result<(TauFunction, TauFunction)> {
    check_cap(s, h, horizon)?;
    let t1 = TauFunction::constant(s, horizon)?;
    let t2 = TauFunction::cone(y, s + h, horizon)?.join(&t1)?;
    Ok((t1, t2))
}

/// `τ3 = τ_z^{s+r} ∨ s·1_Γ` and `τ4 = τ2 ∨ τ3`.
pub fn overlap_taus(
    tau2: &TauFunction,
    z: BoundaryPoint,
    s: f64,
    r: f64,
    horizon: f64,
) -> Result<(TauFunction, TauFunction)> {
    if !(r > 0.0) || s + r >= horizon {
        return Err(Error::InvalidGeometry(format!("variable cap needs 0 < r and s + r < T, got r = {r}")));
    }
    let t1 = TauFunction::constant(s, horizon)?;
    let t3 = TauFunction::cone(z, s + r, horizon)?.join(&t1)?;
    let t4 = tau2.join(&t3)?;
    Ok((t3, t4))
}

/// `m(τ2) - m(τ1)`.
pub fn cap_volume<P: VolumeProvider + ?Sized>(provider: &P, y: BoundaryPoint, s: f64, h: f64) -> Result<f64> {
    let (t1, t2) = cap_taus(y, s, h, provider.horizon())?;
    Ok(provider.volume(&t2)? - provider.volume(&t1)?)
}

/// `m(τ2) + m(τ3) - m(τ4) - m(τ1)`, the volume of the intersection of the
/// two caps.
pub fn overlap_volume<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    z: BoundaryPoint,
    r: f64,
) -> Result<f64> {
    let horizon = provider.horizon();
    let (t1, t2) = cap_taus(y, s, h, horizon)?;
    let (t3, t4) = overlap_taus(&t2, z, s, r, horizon)?;
    Ok(overlap_from(provider, &t1, &t2, &t3, &t4)?.0)
}

/// Overlap and a rounding scale for it.
fn overlap_from<P: VolumeProvider + ?Sized>(
    provider: &P,
    t1: &TauFunction,
    t2: &TauFunction,
    t3: &TauFunction,
    t4: &TauFunction,
) -> Result<(f64, f64)> {
    let (m1, m2, m3, m4) = (provider.volume(t1)?, provider.volume(t2)?, provider.volume(t3)?, provider.volume(t4)?);
    Ok((m2 + m3 - m4 - m1, m4.abs().max(1.0)))
}

/// Points `(r_j, m_overlap(r_j))` for a whole radius grid.
pub fn overlap_curve<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    z: BoundaryPoint,
    grid: &RGrid,
) -> Result<Vec<(f64, f64)>> {
    Ok(overlap_curve_scaled(provider, y, s, h, z, grid)?.into_iter().map(|(r, o, _)| (r, o)).collect())
}

fn overlap_curve_scaled<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    z: BoundaryPoint,
    grid: &RGrid,
) -> Result<Vec<(f64, f64, f64)>> {
    let horizon = provider.horizon();
    let (t1, t2) = cap_taus(y, s, h, horizon)?;
    grid.radii()
        .iter()
        .map(|&r| {
            let (t3, t4) = overlap_taus(&t2, z, s, r, horizon)?;
            let (o, scale) = overlap_from(provider, &t1, &t2, &t3, &t4)?;
            Ok((r, o, scale))
        })
        .collect()
}

/// Overlaps below this multiple of the volumes involved count as zero.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// First grid radius at which the caps overlap by more than
/// `threshold · m_target`.
pub fn estimate_r_method1<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    z: BoundaryPoint,
    grid: &RGrid,
    threshold: f64,
) -> Result<f64> {
    let target = cap_volume(provider, y, s, h)?;
    let curve = overlap_curve_scaled(provider, y, s, h, z, grid)?;
    first_overlap(&curve, target, threshold).ok_or_else(|| {
        Error::Numerical(format!("no overlap detected for z = {} within r ≤ {}", z.x1, grid.radii().last().unwrap()))
    })
}

fn first_overlap(curve: &[(f64, f64, f64)], target: f64, threshold: f64) -> Option<f64> {
    curve.iter().find(|(_, o, scale)| *o > threshold * target + ROUNDING_FLOOR * scale).map(|p| p.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateFlag {
    Ok,
    /// Half the target was already exceeded at `r_1`; interpolated from `(0, 0)`.
    EdgeInterpolated,
    /// The overlap curve never reached the criterion on the grid.
    NotBracketed,
    /// A volume query failed; the message is logged.
    Failed,
}

impl EstimateFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateFlag::Ok => "ok",
            EstimateFlag::EdgeInterpolated => "edge-interpolated",
            EstimateFlag::NotBracketed => "not-bracketed",
            EstimateFlag::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfVolumeEstimate {
    pub r_h: Option<f64>,
    pub flag: EstimateFlag,
    pub curve: Vec<(f64, f64)>,
    pub m_target: f64,
}

/// Radius at which the overlap reaches half the target cap, by linear
/// interpolation on the overlap curve.
pub fn estimate_r_method2<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    z: BoundaryPoint,
    grid: &RGrid,
) -> Result<HalfVolumeEstimate> {
    let m_target = cap_volume(provider, y, s, h)?;
    let curve = overlap_curve(provider, y, s, h, z, grid)?;
    let (r_h, flag) = half_crossing(&curve, m_target);
    Ok(HalfVolumeEstimate { r_h, flag, curve, m_target })
}

fn half_crossing(curve: &[(f64, f64)], m_target: f64) -> (Option<f64>, EstimateFlag) {
    let half = 0.5 * m_target;
    let Some(&(r1, o1)) = curve.first() else {
        return (None, EstimateFlag::NotBracketed);
    };
    if half < o1 {
        return (Some(r1 * half / o1), EstimateFlag::EdgeInterpolated);
    }
    for w in curve.windows(2) {
        let ((ra, oa), (rb, ob)) = (w[0], w[1]);
        if oa <= half && half <= ob {
            let r = if ob > oa { ra + (half - oa) / (ob - oa) * (rb - ra) } else { ra };
            return (Some(r), EstimateFlag::Ok);
        }
    }
    (None, EstimateFlag::NotBracketed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DistanceMethod {
    /// First radius with a detectable overlap.
    FirstOverlap { threshold: f64 },
    /// Radius at which the overlap reaches half the target cap.
    HalfVolume,
}

impl DistanceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMethod::FirstOverlap { .. } => "method1",
            DistanceMethod::HalfVolume => "method2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub z: f64,
    pub r_h: Option<f64>,
    pub d_h: Option<f64>,
    pub true_distance: f64,
    pub flag: EstimateFlag,
    /// Overlap curve normalised by the target cap volume.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    pub y: f64,
    pub s: f64,
    pub h: f64,
    pub method: DistanceMethod,
    pub m_target: f64,
    pub entries: Vec<ProfileEntry>,
}

/// Distance estimates from `x(y, s)` to every `z` in `zs`.
///
/// Entries are evaluated in parallel and returned in input order. A failed
/// volume query marks its entry as failed; only a failure of the target
/// cap aborts the batch.
pub fn distance_profile<P: VolumeProvider + ?Sized>(
    provider: &P,
    y: BoundaryPoint,
    s: f64,
    h: f64,
    zs: &[f64],
    grid: &RGrid,
    method: DistanceMethod,
) -> Result<DistanceProfile> {
    let m_target = cap_volume(provider, y, s, h)?;
    if !(m_target > 0.0) {
        return Err(Error::Numerical(format!("target cap volume {m_target} is not positive")));
    }
    let entries: Vec<ProfileEntry> = zs
        .par_iter()
        .map(|&z| {
            let zp = BoundaryPoint::new(z);
            let true_distance = point_distance(zp, y, s);
            let scaled = match overlap_curve_scaled(provider, y, s, h, zp, grid) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("distance to z = {z} at s = {s} failed: {e}");
                    return ProfileEntry {
                        z,
                        r_h: None,
                        d_h: None,
                        true_distance,
                        flag: EstimateFlag::Failed,
                        curve: Vec::new(),
                    };
                }
            };
            let (r_h, flag) = match method {
                DistanceMethod::FirstOverlap { threshold } => match first_overlap(&scaled, m_target, threshold) {
                    Some(r) => (Some(r), EstimateFlag::Ok),
                    None => (None, EstimateFlag::NotBracketed),
                },
                DistanceMethod::HalfVolume => {
                    let curve: Vec<(f64, f64)> = scaled.iter().map(|&(r, o, _)| (r, o)).collect();
                    half_crossing(&curve, m_target)
                }
            };
            ProfileEntry {
                z,
                r_h,
                d_h: r_h.map(|r| s + r),
                true_distance,
                flag,
                curve: scaled.iter().map(|&(r, o, _)| (r, o / m_target)).collect(),
            }
        })
        .collect();
    Ok(DistanceProfile { y: y.x1, s, h, method, m_target, entries })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn fmt(v: f64) -> String {
    format!("{v:.10}")
}

/// Columns `y, s, h, method, z, r_h, d_h, true_distance, flag`.
pub fn write_profiles_csv<W: Write>(w: W, profiles: &[DistanceProfile]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["y", "s", "h", "method", "z", "r_h", "d_h", "true_distance", "flag"]).map_err(csv_err)?;
    for p in profiles {
        for e in &p.entries {
            out.write_record([
                fmt(p.y),
                fmt(p.s),
                fmt(p.h),
                p.method.name().to_string(),
                fmt(e.z),
                e.r_h.map(fmt).unwrap_or_default(),
                e.d_h.map(fmt).unwrap_or_default(),
                fmt(e.true_distance),
                e.flag.as_str().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Columns `y, s, h, z, r_j, m_overlap_rel`.
pub fn write_curves_csv<W: Write>(w: W, profiles: &[DistanceProfile]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["y", "s", "h", "z", "r_j", "m_overlap_rel"]).map_err(csv_err)?;
    for p in profiles {
        for e in &p.entries {
            for &(r, o) in &e.curve {
                out.write_record([fmt(p.y), fmt(p.s), fmt(p.h), fmt(e.z), fmt(r), fmt(o)]).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
