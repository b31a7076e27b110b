//! Stage orchestration over a content-addressed cache directory.
//!
//! Datasets live in `<cache>/datasets/<key>.bcnd` where the key hashes the
//! acquisition and solver settings; operators live in
//! `<cache>/operators/<key>.bcop` keyed by dataset hash and assembly form.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::boundary_ops::{assemble_connecting_from_file, load_operator, mask_operator, project_operator, save_operator};
use crate::boundary_ops::{ConnectingOperator, MaskMode};
use crate::config::{operator_key, uniform_below, ExperimentConfig};
use crate::control::{estimate_volume, solve_control, EstimatedVolumes, ExactVolumes, VolumeProvider};
use crate::distance::{distance_profile, write_curves_csv, write_profiles_csv, DistanceProfile, EstimateFlag, RGrid};
use crate::error::{Error, Result};
use crate::geometry::{exact_volume, in_domain_of_influence, parse_tau, BoundaryPoint};
use crate::wave_sim::dataset::{file_hash, simulate_to_file, DatasetReader};
use crate::wave_sim::solver::{Forcing, InteriorField, WaveSolver};

/// A dataset on disk with its content hash.
#[derive(Debug, Clone)]
pub struct DatasetArtifact {
    pub path: PathBuf,
    pub hash: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
pub struct OperatorArtifact {
    pub path: PathBuf,
    pub dataset: DatasetArtifact,
    pub cache_hit: bool,
}

/// Which volume provider drives the distance stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Estimated,
    /// Closed-form volumes on the configured radius grid.
    Exact,
    /// Closed-form volumes on the fine oracle radius grid.
    Oracle,
}

impl ProviderKind {
    fn stem(&self) -> &'static str {
        match self {
            ProviderKind::Estimated => "distances",
            ProviderKind::Exact => "exact_distances",
            ProviderKind::Oracle => "oracle_distances",
        }
    }
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub cache_dir: PathBuf,
    config_hash: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    stage: &'a str,
    dataset_hash: Option<&'a str>,
    operator: Option<String>,
    provider: Option<&'a str>,
    method: Option<u8>,
    files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

/// Per-depth error statistics against the true distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSummary {
    pub s: f64,
    pub entries: usize,
    pub estimated: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub edge_interpolated: usize,
    pub not_bracketed: usize,
    pub failed: usize,
}

pub fn summarize(profile: &DistanceProfile) -> DepthSummary {
    let rels: Vec<f64> = profile
        .entries
        .iter()
        .filter_map(|e| e.d_h.map(|d| (d - e.true_distance).abs() / e.true_distance))
        .collect();
    let count = |f: EstimateFlag| profile.entries.iter().filter(|e| e.flag == f).count();
    DepthSummary {
        s: profile.s,
        entries: profile.entries.len(),
        estimated: rels.len(),
        max_rel_error: rels.iter().copied().fold(0.0, f64::max),
        mean_rel_error: if rels.is_empty() { 0.0 } else { rels.iter().sum::<f64>() / rels.len() as f64 },
        edge_interpolated: count(EstimateFlag::EdgeInterpolated),
        not_bracketed: count(EstimateFlag::NotBracketed),
        failed: count(EstimateFlag::Failed),
    }
}

pub fn write_summary_csv<W: Write>(w: W, summaries: &[DepthSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record([
        "s",
        "entries",
        "estimated",
        "max_rel_error",
        "mean_rel_error",
        "edge_interpolated",
        "not_bracketed",
        "failed",
    ])
    .map_err(io)?;
    for s in summaries {
        out.write_record([
            format!("{:.10}", s.s),
            s.entries.to_string(),
            s.estimated.to_string(),
            format!("{:.10}", s.max_rel_error),
            format!("{:.10}", s.mean_rel_error),
            s.edge_interpolated.to_string(),
            s.not_bracketed.to_string(),
            s.failed.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Output of one distance run.
#[derive(Debug, Clone)]
pub struct DistanceRun {
    pub profiles: Vec<DistanceProfile>,
    pub summaries: Vec<DepthSummary>,
    pub files: Vec<PathBuf>,
}

/// Summary numbers of a diagnostic field synthesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldDiagnostics {
    pub tau: String,
    pub m_hat: f64,
    /// `Vol(M(τ))` when closed-form volumes apply.
    pub exact_volume: Option<f64>,
    /// `(u, 1_{M(τ)})`.
    pub indicator_pairing: f64,
    /// `‖u - 1_{M(τ)}‖ / ‖1_{M(τ)}‖` over the synthesis window.
    pub relative_misfit: f64,
    /// Share of `‖u‖²` lying outside `M(τ)`.
    pub outside_energy: f64,
    pub iterations: usize,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let config_hash = config.hash()?;
        Ok(Self { config, cache_dir: cache_dir.into(), config_hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn dataset_path(&self) -> Result<PathBuf> {
        Ok(self.cache_dir.join("datasets").join(format!("{}.bcnd", self.config.dataset_key()?)))
    }

    fn warn_on_cost(&self, solver: &WaveSolver, sources: usize) {
        let m = solver.mesh();
        let steps = (2.0 * self.config.geometry.horizon / m.dt).ceil();
        let updates = sources as f64 * m.nx as f64 * m.nz as f64 * steps;
        if updates > 1e12 {
            log::warn!(
                "simulation needs about {updates:.2e} node updates ({sources} sources on a {}x{} mesh, {steps} steps); \
                 expect a long run",
                m.nx,
                m.nz
            );
        }
    }

    /// Simulates the dataset unless it is already cached.
    pub fn ensure_dataset(&self) -> Result<DatasetArtifact> {
        let path = self.dataset_path()?;
        let basis = self.config.build_basis()?;
        if path.exists() {
            let header = DatasetReader::open(&path)?.header;
            if header.geometry != self.config.geometry
                || header.basis != basis
                || header.receivers != self.config.receivers
                || header.solver.params != self.config.solver
            {
                return Err(Error::CacheMismatch(format!(
                    "cached dataset {} does not match the configuration",
                    path.display()
                )));
            }
            log::info!("dataset cache hit: {}", path.display());
            return Ok(DatasetArtifact { hash: file_hash(&path)?, path, cache_hit: true });
        }
        fs::create_dir_all(path.parent().expect("dataset path has a parent"))?;
        let solver = WaveSolver::new(&self.config.geometry, &self.config.receivers, &basis, &self.config.solver)?;
        self.warn_on_cost(&solver, basis.len());
        drop(solver);
        let hash =
            simulate_to_file(&self.config.geometry, &basis, &self.config.receivers, &self.config.solver, &path)?;
        log::info!("dataset written to {}", path.display());
        Ok(DatasetArtifact { path, hash, cache_hit: false })
    }

    /// Assembles the connecting operator unless it is already cached.
    pub fn ensure_operator(&self) -> Result<(ConnectingOperator, OperatorArtifact)> {
        let dataset = self.ensure_dataset()?;
        let form = self.config.control.connecting_form;
        let path = self.cache_dir.join("operators").join(format!("{}.bcop", operator_key(&dataset.hash, form)));
        if path.exists() {
            let op = load_operator(&path, &dataset.hash)?;
            log::info!("operator cache hit: {}", path.display());
            return Ok((op, OperatorArtifact { path, dataset, cache_hit: true }));
        }
        fs::create_dir_all(path.parent().expect("operator path has a parent"))?;
        let op = assemble_connecting_from_file(&dataset.path, dataset.hash.clone(), form)?;
        let report = op.symmetry_report();
        log::info!(
            "assembled [K] ({} functions): coordinate asymmetry {:.3e}, weighted asymmetry {:.3e}, \
             weighted min eigenvalue {:.3e}",
            op.len(),
            report.coordinate_asymmetry,
            report.weighted_asymmetry,
            report.weighted_min_eigenvalue
        );
        save_operator(&op, &path)?;
        Ok((op, OperatorArtifact { path, dataset, cache_hit: false }))
    }

    pub fn estimated_provider(&self, op: Arc<ConnectingOperator>) -> EstimatedVolumes {
        let c = &self.config.control;
        let mut p = EstimatedVolumes::new(op, c.alpha, c.linear, c.mask_mode);
        p.negative_tolerance = c.negative_tolerance;
        p
    }

    pub fn exact_provider(&self) -> Result<ExactVolumes> {
        ExactVolumes::new(self.config.geometry.clone())
    }

    fn r_grid(&self, s: f64, kind: ProviderKind) -> Result<RGrid> {
        let d = &self.config.distance;
        let horizon = self.config.geometry.horizon;
        match kind {
            ProviderKind::Oracle => uniform_below(d.oracle_r_step, d.oracle_r_step, s, horizon),
            _ => d.r_grid.build(s, horizon, &self.config.basis.times),
        }
    }

    /// Distance profiles for every configured depth.
    pub fn profiles<P: VolumeProvider + ?Sized>(
        &self,
        provider: &P,
        kind: ProviderKind,
        method: u8,
    ) -> Result<Vec<DistanceProfile>> {
        let d = &self.config.distance;
        let method = d.method_for(method, kind != ProviderKind::Estimated)?;
        let y = BoundaryPoint::new(d.y);
        let zs = d.targets.points();
        d.depths
            .iter()
            .map(|&s| {
                let grid = self.r_grid(s, kind)?;
                distance_profile(provider, y, s, d.cap_height, &zs, &grid, method)
            })
            .collect()
    }

    /// Runs the distance stage and writes CSVs plus a manifest to `out`.
    pub fn run_distances(&self, kind: ProviderKind, method: u8, out: &Path) -> Result<DistanceRun> {
        fs::create_dir_all(out)?;
        let stem = kind.stem();
        let mut files = Vec::new();
        let (profiles, dataset_hash, operator) = match kind {
            ProviderKind::Estimated => {
                let (op, art) = self.ensure_operator()?;
                let provider = self.estimated_provider(Arc::new(op));
                let profiles = self.profiles(&provider, kind, method)?;
                let vpath = out.join("volumes.csv");
                provider.write_report(BufWriter::new(File::create(&vpath)?))?;
                files.push(vpath);
                let (hits, misses) = provider.cache_stats();
                log::info!("volume estimates: {misses} solved, {hits} reused");
                (profiles, Some(art.dataset.hash.clone()), operator_stem(&art.path))
            }
            _ => (self.profiles(&self.exact_provider()?, kind, method)?, None, None),
        };
        let summaries: Vec<DepthSummary> = profiles.iter().map(summarize).collect();

        let ppath = out.join(format!("{stem}.csv"));
        write_profiles_csv(BufWriter::new(File::create(&ppath)?), &profiles)?;
        let cpath = out.join(format!("{stem}_curves.csv"));
        write_curves_csv(BufWriter::new(File::create(&cpath)?), &profiles)?;
        let spath = out.join(format!("{stem}_summary.csv"));
        write_summary_csv(BufWriter::new(File::create(&spath)?), &summaries)?;
        files.extend([ppath, cpath, spath]);

        for s in &summaries {
            if s.failed > 0 {
                log::warn!("s = {}: {} of {} targets failed", s.s, s.failed, s.entries);
            }
            if s.not_bracketed > 0 {
                log::warn!("s = {}: {} of {} targets were not bracketed by the radius grid", s.s, s.not_bracketed, s.entries);
            }
        }
        self.write_manifest(
            out,
            &format!("{stem}_manifest.toml"),
            Manifest {
                config_hash: &self.config_hash,
                stage: stem,
                dataset_hash: dataset_hash.as_deref(),
                operator,
                provider: Some(match kind {
                    ProviderKind::Estimated => "estimated",
                    _ => "exact",
                }),
                method: Some(method),
                files: Vec::new(),
            },
            &files,
        )?;
        Ok(DistanceRun { profiles, summaries, files })
    }

    fn write_manifest(&self, out: &Path, name: &str, mut manifest: Manifest<'_>, files: &[PathBuf]) -> Result<()> {
        for f in files {
            manifest.files.push(ManifestFile {
                name: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: file_hash(f)?,
            });
        }
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))?;
        fs::write(out.join(name), text)?;
        fs::write(out.join("config.toml"), self.config.to_toml()?)?;
        Ok(())
    }

    /// Solves the control problem for `tau`, synthesizes its wave at `T`
    /// and writes it as `x, depth, u, indicator` rows.
    pub fn diagnose(&self, tau: &str, out: &Path, stride: usize) -> Result<FieldDiagnostics> {
        let geom = &self.config.geometry;
        let tau = parse_tau(tau, geom.horizon)?;
        let (op, art) = self.ensure_operator()?;
        let masked = match self.config.control.mask_mode {
            MaskMode::Center => mask_operator(&op, &tau),
            MaskMode::Projection => project_operator(&op, &tau)?,
        };
        let sol = solve_control(&op, &masked, self.config.control.alpha, &self.config.control.linear)?;
        let m_hat = estimate_volume(&sol, &op)?;
        let solver = WaveSolver::new(geom, &self.config.receivers, &op.basis, &self.config.solver)?;
        let forcing = Forcing::from_basis(&op.basis, sol.f_coeffs.as_slice())?;
        let reach = geom.horizon * geom.sound_speed.max();
        let field = solver
            .field_at(&forcing, geom.horizon)?
            .crop(-geom.half_width - reach, geom.half_width + reach, reach);

        let inside = |x: f64, depth: f64| in_domain_of_influence(&tau, geom, x, depth);
        let chi_norm2 = weighted_sum(&field, |x, d, _| if inside(x, d) { 1.0 } else { 0.0 });
        let misfit2 = weighted_sum(&field, |x, d, u| {
            let chi = if inside(x, d) { 1.0 } else { 0.0 };
            (u - chi) * (u - chi)
        });
        let total2 = weighted_sum(&field, |_, _, u| u * u);
        let outside2 = weighted_sum(&field, |x, d, u| if inside(x, d) { 0.0 } else { u * u });
        let diag = FieldDiagnostics {
            tau: tau.descriptor(),
            m_hat,
            exact_volume: exact_volume(&tau, geom).ok(),
            indicator_pairing: weighted_sum(&field, |x, d, u| if inside(x, d) { u } else { 0.0 }),
            relative_misfit: if chi_norm2 > 0.0 { (misfit2 / chi_norm2).sqrt() } else { f64::NAN },
            outside_energy: if total2 > 0.0 { outside2 / total2 } else { 0.0 },
            iterations: sol.stats.iterations,
        };

        fs::create_dir_all(out)?;
        let fpath = out.join("field.csv");
        {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&fpath)?));
            let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(["x", "depth", "u", "indicator"]).map_err(io)?;
            let stride = stride.max(1);
            for k in (0..field.nz).step_by(stride) {
                for i in (0..field.nx).step_by(stride) {
                    let (x, d) = (field.x(i), field.depth(k));
                    w.write_record([
                        format!("{x:.6}"),
                        format!("{d:.6}"),
                        format!("{:.8e}", field.at(i, k)),
                        if inside(x, d) { "1" } else { "0" }.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
            w.flush()?;
        }
        let mpath = out.join("field_metrics.toml");
        fs::write(&mpath, toml::to_string(&diag).map_err(|e| Error::Format(e.to_string()))?)?;
        self.write_manifest(
            out,
            "field_manifest.toml",
            Manifest {
                config_hash: &self.config_hash,
                stage: "diagnose",
                dataset_hash: Some(&art.dataset.hash),
                operator: operator_stem(&art.path),
                provider: Some("estimated"),
                method: None,
                files: Vec::new(),
            },
            &[fpath, mpath],
        )?;
        Ok(diag)
    }
}

fn weighted_sum<G: Fn(f64, f64, f64) -> f64>(field: &InteriorField, g: G) -> f64 {
    let mut acc = 0.0;
    for k in 0..field.nz {
        for i in 0..field.nx {
            acc += field.weight(i, k) * g(field.x(i), field.depth(k), field.at(i, k));
        }
    }
    acc
}

fn operator_stem(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}
