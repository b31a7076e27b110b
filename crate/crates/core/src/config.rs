//! Experiment configuration: one TOML file describing every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary_ops::{ConnectingForm, MaskMode};
use crate::control::SolverSettings;
use crate::distance::{cap_taus, DistanceMethod, RAlignment, RGrid};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, HalfPlaneGeometry, SoundSpeed};
use crate::wave_sim::basis::{build_basis, BasisConfig, ReceiverGrid, SourceBasis, UniformGrid};
use crate::wave_sim::solver::{SolverParams, SCHEME_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub geometry: HalfPlaneGeometry,
    pub basis: BasisConfig,
    pub receivers: ReceiverGrid,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub control: ControlConfig,
    pub distance: DistanceConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Tikhonov weight.
    pub alpha: f64,
    pub mask_mode: MaskMode,
    pub connecting_form: ConnectingForm,
    /// Fraction of `m̂(T·1_Γ)` below zero still clipped to zero.
    pub negative_tolerance: f64,
    pub linear: SolverSettings,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            mask_mode: MaskMode::default(),
            connecting_form: ConnectingForm::default(),
            negative_tolerance: 1e-3,
            linear: SolverSettings::default(),
        }
    }
}

/// Boundary points given as a list or a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSet {
    List(Vec<f64>),
    Grid(UniformGrid),
}

impl PointSet {
    pub fn points(&self) -> Vec<f64> {
        match self {
            PointSet::List(v) => v.clone(),
            PointSet::Grid(g) => g.points(),
        }
    }
}

/// How the radius grid is chosen for each depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum RGridRule {
    /// Aligned with the source time grid.
    Aligned { alignment: RAlignment },
    /// `first + j·step` while `s + r < T`.
    Uniform { first: f64, step: f64 },
    Explicit { radii: Vec<f64> },
}

impl RGridRule {
    pub fn build(&self, s: f64, horizon: f64, times: &UniformGrid) -> Result<RGrid> {
        match self {
            RGridRule::Aligned { alignment } => RGrid::aligned(s, horizon, times, *alignment),
            RGridRule::Uniform { first, step } => uniform_below(*first, *step, s, horizon),
            RGridRule::Explicit { radii } => RGrid::new(radii.clone(), s, horizon),
        }
    }
}

/// Uniform radii starting at `first` that keep `s + r < T`.
pub fn uniform_below(first: f64, step: f64, s: f64, horizon: f64) -> Result<RGrid> {
    if !(first > 0.0 && step > 0.0) {
        return Err(Error::Config("uniform radius grid needs positive first radius and step".into()));
    }
    let count = ((horizon - s - first) / step - 1e-9).ceil().max(0.0) as usize;
    RGrid::uniform(first, step, count, s, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    /// Boundary point above the reconstructed points.
    pub y: f64,
    pub depths: Vec<f64>,
    pub cap_height: f64,
    pub targets: PointSet,
    pub r_grid: RGridRule,
    /// Radius step of the exact-provider grid.
    #[serde(default = "default_oracle_step")]
    pub oracle_r_step: f64,
    /// 1 for first overlap, 2 for half volume.
    #[serde(default = "default_method")]
    pub method: u8,
    /// Overlap threshold of method 1 as a fraction of the target cap.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_oracle_step() -> f64 {
    0.0025
}

fn default_method() -> u8 {
    2
}

fn default_threshold() -> f64 {
    0.02
}

impl DistanceConfig {
    pub fn method_for(&self, method: u8, exact: bool) -> Result<DistanceMethod> {
        match method {
            1 => Ok(DistanceMethod::FirstOverlap { threshold: if exact { 0.0 } else { self.threshold } }),
            2 => Ok(DistanceMethod::HalfVolume),
            m => Err(Error::Config(format!("method must be 1 or 2, got {m}"))),
        }
    }
}

impl ExperimentConfig {
    /// Scaled-down configuration that runs on a workstation.
    pub fn desk() -> Self {
        Self {
            output_dir: default_output_dir(),
            geometry: HalfPlaneGeometry { half_width: 1.0, horizon: 0.6, sound_speed: SoundSpeed::UNIT },
            basis: BasisConfig {
                a_t: 1e3,
                a_x: 1e3,
                times: UniformGrid::centered(0.3, 0.05, 10),
                positions: UniformGrid::centered(0.0, 0.05, 37),
                margin_sigmas: 3.0,
            },
            receivers: ReceiverGrid {
                times: UniformGrid::new(0.0, 0.01, 121),
                positions: UniformGrid::new(-1.0, 0.025, 81),
            },
            solver: SolverParams::default(),
            control: ControlConfig::default(),
            distance: DistanceConfig {
                y: 0.0,
                depths: vec![0.1, 0.15, 0.2, 0.25],
                cap_height: 0.05,
                targets: PointSet::Grid(UniformGrid::centered(0.0, 0.05, 21)),
                r_grid: RGridRule::Aligned { alignment: RAlignment::Midpoint },
                oracle_r_step: default_oracle_step(),
                method: 2,
                threshold: default_threshold(),
            },
        }
    }

    /// The published full-scale experiment.
    pub fn paper() -> Self {
        let dxs = 0.0147;
        Self {
            output_dir: default_output_dir(),
            geometry: HalfPlaneGeometry { half_width: 2.3226, horizon: 1.249, sound_speed: SoundSpeed::UNIT },
            basis: BasisConfig {
                a_t: 4e3,
                a_x: 4e3,
                times: UniformGrid::centered(0.6245, dxs, 78),
                positions: UniformGrid::centered(0.0, dxs, 309),
                margin_sigmas: 3.0,
            },
            receivers: ReceiverGrid {
                times: UniformGrid::new(0.0, dxs / 10.0, 1701),
                positions: UniformGrid::new(-2.3226, dxs / 2.0, 633),
            },
            solver: SolverParams::default(),
            control: ControlConfig::default(),
            distance: DistanceConfig {
                y: 0.0,
                depths: vec![0.125, 0.25, 0.375, 0.5],
                cap_height: 0.025,
                targets: PointSet::Grid(UniformGrid::centered(0.0, 4.0 * dxs, 41)),
                r_grid: RGridRule::Aligned { alignment: RAlignment::Nodes },
                oracle_r_step: default_oracle_step(),
                method: 2,
                threshold: default_threshold(),
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected desk or paper"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode configuration: {e}")))
    }

    pub fn build_basis(&self) -> Result<SourceBasis> {
        build_basis(&self.basis, &self.geometry)
    }

    /// Re-checks every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let basis = self.build_basis()?;
        self.receivers.validate(&self.geometry, Some(&basis))?;
        let c = &self.control;
        if !(c.alpha > 0.0 && c.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", c.alpha)));
        }
        if !(c.negative_tolerance >= 0.0) {
            return Err(Error::Config("negative_tolerance must be non-negative".into()));
        }
        if c.linear.restart == 0 || c.linear.max_iterations == 0 || !(c.linear.rtol > 0.0) {
            return Err(Error::Config("linear solver needs positive restart, iteration cap and tolerance".into()));
        }
        let d = &self.distance;
        let horizon = self.geometry.horizon;
        self.geometry.check_point(BoundaryPoint::new(d.y)).map_err(|e| Error::Config(e.to_string()))?;
        if d.depths.is_empty() {
            return Err(Error::Config("distance block lists no depths".into()));
        }
        for &s in &d.depths {
            cap_taus(BoundaryPoint::new(d.y), s, d.cap_height, horizon).map_err(|e| Error::Config(e.to_string()))?;
            d.r_grid.build(s, horizon, &self.basis.times)?;
            uniform_below(d.oracle_r_step, d.oracle_r_step, s, horizon)?;
        }
        let zs = d.targets.points();
        if zs.is_empty() {
            return Err(Error::Config("distance block lists no target points".into()));
        }
        for z in zs {
            self.geometry.check_point(BoundaryPoint::new(z)).map_err(|e| Error::Config(e.to_string()))?;
        }
        d.method_for(d.method, false)?;
        if !(0.0..1.0).contains(&d.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1), got {}", d.threshold)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Key of the simulated dataset: acquisition and solver settings only.
    pub fn dataset_key(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            scheme: &'a str,
            geometry: &'a HalfPlaneGeometry,
            basis: &'a BasisConfig,
            receivers: &'a ReceiverGrid,
            solver: &'a SolverParams,
        }
        let key = Key {
            scheme: SCHEME_ID,
            geometry: &self.geometry,
            basis: &self.basis,
            receivers: &self.receivers,
            solver: &self.solver,
        };
        let text = toml::to_string(&key).map_err(|e| Error::Config(format!("cannot encode dataset key: {e}")))?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

/// Key of an operator assembled from `dataset_hash` with `form`.
pub fn operator_key(dataset_hash: &str, form: ConnectingForm) -> String {
    let form = match form {
        ConnectingForm::Projected => "projected",
        ConnectingForm::Adjoint => "adjoint",
    };
    hex::encode(Sha256::digest(format!("{dataset_hash}:{form}").as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::paper().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let cfg = ExperimentConfig::desk();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn dataset_key_ignores_downstream_settings() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.control.alpha = 1e-3;
        b.distance.method = 1;
        assert_eq!(a.dataset_key().unwrap(), b.dataset_key().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        b.solver.points_per_wavelength = 10.0;
        assert_ne!(a.dataset_key().unwrap(), b.dataset_key().unwrap());
    }

    #[test]
    fn rejects_cap_above_horizon() {
        let mut cfg = ExperimentConfig::desk();
        cfg.distance.depths = vec![0.58];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn desk_has_four_depths() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(cfg.distance.depths.len(), 4);
        assert_eq!(cfg.distance.targets.points().len(), 21);
    }
}
