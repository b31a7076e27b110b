//! Regularized control problems and volume estimates.
//!
//! For a window `τ` the control solves `([K_τ] + α[P_τ]) f = [P_τ][b]` and
//! the volume of `M(τ)` is estimated as `m̂(τ) = fᵀ G [b]`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary_ops::{mask_operator, project_operator, rhs_vector, ConnectingOperator, MaskMode, MaskedOperator};
use crate::error::{Error, Result};
use crate::geometry::{exact_volume, HalfPlaneGeometry, TauFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolver {
    #[default]
    Gmres,
    /// Dense LU factorization; for diagnostics.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub solver: LinearSolver,
    pub restart: usize,
    pub max_iterations: usize,
    pub rtol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { solver: LinearSolver::Gmres, restart: 50, max_iterations: 5000, rtol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub restarts: usize,
    /// `‖A x - b‖ / ‖b‖` at exit.
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES for `A x = b` from `x = 0`.
pub fn gmres(a: &DMatrix<f64>, b: &DVector<f64>, restart: usize, max_iterations: usize, rtol: f64) -> (DVector<f64>, SolverStats) {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let b_norm = b.norm();
    let mut stats = SolverStats { converged: true, ..Default::default() };
    if n == 0 || b_norm == 0.0 {
        return (x, stats);
    }
    let m = restart.max(1).min(n);
    let target = rtol * b_norm;
    let mut r = b.clone();
    let mut beta = b_norm;
    loop {
        if beta <= target {
            break;
        }
        if stats.iterations >= max_iterations {
            stats.converged = false;
            break;
        }
        let mut v: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
        v.push(&r / beta);
        let mut hess = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = DVector::<f64>::zeros(m + 1);
        g[0] = beta;
        let mut k = 0;
        while k < m && stats.iterations < max_iterations {
            let mut w = a * &v[k];
            for i in 0..=k {
                let hik = w.dot(&v[i]);
                hess[(i, k)] = hik;
                w.axpy(-hik, &v[i], 1.0);
            }
            let wn = w.norm();
            hess[(k + 1, k)] = wn;
            for i in 0..k {
                let t = cs[i] * hess[(i, k)] + sn[i] * hess[(i + 1, k)];
                hess[(i + 1, k)] = -sn[i] * hess[(i, k)] + cs[i] * hess[(i + 1, k)];
                hess[(i, k)] = t;
            }
            let denom = hess[(k, k)].hypot(hess[(k + 1, k)]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[(k, k)] / denom;
                sn[k] = hess[(k + 1, k)] / denom;
            }
            hess[(k, k)] = denom;
            hess[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            stats.iterations += 1;
            k += 1;
            if g[k].abs() <= target || wn == 0.0 {
                break;
            }
            v.push(w / wn);
        }
        // back substitution on the k×k triangle
        let mut y = DVector::<f64>::zeros(k);
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[(i, j)] * y[j];
            }
            y[i] = if hess[(i, i)] != 0.0 { s / hess[(i, i)] } else { 0.0 };
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &v[i], 1.0);
        }
        r = b - a * &x;
        beta = r.norm();
        if beta <= target {
            break;
        }
        stats.restarts += 1;
    }
    stats.residual = beta / b_norm;
    if beta > target {
        stats.converged = false;
    }
    (x, stats)
}

fn direct_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, SolverStats)> {
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Numerical("singular control system".into()))?;
    let b_norm = b.norm();
    let residual = if b_norm == 0.0 { 0.0 } else { (b - a * &x).norm() / b_norm };
    Ok((x, SolverStats { iterations: 1, restarts: 0, residual, converged: true }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    /// Basis coefficients; zero off the mask for centre masking.
    pub f_coeffs: DVector<f64>,
    pub tau: TauFunction,
    pub alpha: f64,
    pub stats: SolverStats,
}

/// Solves the regularized control problem for a masked operator.
pub fn solve_control(
    op: &ConnectingOperator,
    masked: &MaskedOperator,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<ControlSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("regularization weight must be positive, got {alpha}")));
    }
    let n = op.len();
    let rhs = rhs_vector(op, masked);
    let (f, stats) = match &masked.projection {
        Some(_) => {
            let a = &masked.k_tau + DMatrix::<f64>::identity(n, n) * alpha;
            run_solver(&a, &rhs, settings)?
        }
        None => {
            let idx: Vec<usize> = (0..n).filter(|&i| masked.mask[i]).collect();
            let m = idx.len();
            if m == 0 {
                return Ok(ControlSolution {
                    f_coeffs: DVector::zeros(n),
                    tau: masked.tau.clone(),
                    alpha,
                    stats: SolverStats { converged: true, ..Default::default() },
                });
            }
            let a = DMatrix::from_fn(m, m, |r, c| masked.k_tau[(idx[r], idx[c])] + if r == c { alpha } else { 0.0 });
            let b = DVector::from_iterator(m, idx.iter().map(|&i| rhs[i]));
            let (fs, stats) = run_solver(&a, &b, settings)?;
            let mut f = DVector::zeros(n);
            for (r, &i) in idx.iter().enumerate() {
                f[i] = fs[r];
            }
            (f, stats)
        }
    };
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite control for {}", masked.tau)));
    }
    Ok(ControlSolution { f_coeffs: f, tau: masked.tau.clone(), alpha, stats })
}

fn run_solver(a: &DMatrix<f64>, b: &DVector<f64>, settings: &SolverSettings) -> Result<(DVector<f64>, SolverStats)> {
    match settings.solver {
        LinearSolver::Gmres => Ok(gmres(a, b, settings.restart, settings.max_iterations, settings.rtol)),
        LinearSolver::Direct => direct_solve(a, b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEstimate {
    pub tau: String,
    pub alpha: f64,
    pub m_hat: f64,
    /// Set when a small negative estimate was reported as zero.
    pub clipped: bool,
    pub stats: SolverStats,
}

/// `m̂ = fᵀ G [b]`.
pub fn estimate_volume(sol: &ControlSolution, op: &ConnectingOperator) -> Result<f64> {
    if sol.f_coeffs.len() != op.len() {
        return Err(Error::Dimension(format!(
            "control of length {} for an operator of size {}",
            sol.f_coeffs.len(),
            op.len()
        )));
    }
    Ok(sol.f_coeffs.dot(&(&op.gram.matrix * &op.b_coeffs)))
}

/// Source of volumes `τ ↦ Vol(M(τ))`, exact or estimated from data.
pub trait VolumeProvider: Sync {
    fn volume(&self, tau: &TauFunction) -> Result<f64>;

    /// Short label used in reports.
    fn label(&self) -> &'static str;

    /// Observation time `T`.
    fn horizon(&self) -> f64;
}

/// Closed-form volumes for the unit-speed half-plane.
#[derive(Debug, Clone)]
pub struct ExactVolumes {
    pub geometry: HalfPlaneGeometry,
}

impl ExactVolumes {
    pub fn new(geometry: HalfPlaneGeometry) -> Result<Self> {
        if !geometry.sound_speed.is_unit() {
            return Err(Error::UnsupportedMedium("exact volumes need the unit sound speed".into()));
        }
        Ok(Self { geometry })
    }
}

impl VolumeProvider for ExactVolumes {
    fn volume(&self, tau: &TauFunction) -> Result<f64> {
        exact_volume(tau, &self.geometry)
    }

    fn label(&self) -> &'static str {
        "exact"
    }

    fn horizon(&self) -> f64 {
        self.geometry.horizon
    }
}

type Slot = Arc<Mutex<Option<VolumeEstimate>>>;

/// Data-driven volumes, memoised per canonical `τ`.
pub struct EstimatedVolumes {
    pub op: Arc<ConnectingOperator>,
    pub alpha: f64,
    pub settings: SolverSettings,
    pub mask_mode: MaskMode,
    /// Fraction of `m̂(T·1_Γ)` below zero that is still reported as zero.
    pub negative_tolerance: f64,
    cache: Mutex<HashMap<String, Slot>>,
    floor: Mutex<Option<f64>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl EstimatedVolumes {
    pub fn new(op: Arc<ConnectingOperator>, alpha: f64, settings: SolverSettings, mask_mode: MaskMode) -> Self {
        Self {
            op,
            alpha,
            settings,
            mask_mode,
            negative_tolerance: 1e-3,
            cache: Mutex::new(HashMap::new()),
            floor: Mutex::new(None),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    fn solve(&self, tau: &TauFunction) -> Result<VolumeEstimate> {
        let masked = match self.mask_mode {
            MaskMode::Center => mask_operator(&self.op, tau),
            MaskMode::Projection => project_operator(&self.op, tau)?,
        };
        let sol = solve_control(&self.op, &masked, self.alpha, &self.settings)?;
        if !sol.stats.converged {
            log::warn!(
                "control solve for {} stopped at residual {:.3e} after {} iterations",
                tau,
                sol.stats.residual,
                sol.stats.iterations
            );
        }
        let m_hat = estimate_volume(&sol, &self.op)?;
        Ok(VolumeEstimate { tau: tau.descriptor(), alpha: self.alpha, m_hat, clipped: false, stats: sol.stats })
    }

    fn full_volume(&self) -> Result<f64> {
        let mut floor = self.floor.lock().expect("floor lock");
        if let Some(v) = *floor {
            return Ok(v);
        }
        let basis = &self.op.basis;
        let full = TauFunction::constant(basis.horizon, basis.horizon)?;
        let v = self.estimate(&full)?.m_hat;
        *floor = Some(v);
        Ok(v)
    }

    /// Memoised estimate; concurrent queries for one key solve once.
    pub fn estimate(&self, tau: &TauFunction) -> Result<VolumeEstimate> {
        let key = tau.descriptor();
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().expect("slot lock");
        if let Some(v) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut est = self.solve(tau)?;
        if est.m_hat < 0.0 && tau.max_value() < tau.horizon() {
            drop(guard);
            let full = self.full_volume()?;
            guard = slot.lock().expect("slot lock");
            if let Some(v) = guard.as_ref() {
                return Ok(v.clone());
            }
            if est.m_hat < -self.negative_tolerance * full.abs() {
                return Err(Error::Numerical(format!("volume estimate {} for {} is negative", est.m_hat, tau)));
            }
            est.m_hat = 0.0;
            est.clipped = true;
        } else if est.m_hat < 0.0 {
            return Err(Error::Numerical(format!("volume estimate {} for {} is negative", est.m_hat, tau)));
        }
        *guard = Some(est.clone());
        Ok(est)
    }

    /// `(hits, misses)` of the memo cache.
    pub fn cache_stats(&self) -> (usize, usize) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    /// All cached estimates sorted by descriptor.
    pub fn estimates(&self) -> Vec<VolumeEstimate> {
        let slots: Vec<Slot> = self.cache.lock().expect("cache lock").values().cloned().collect();
        let mut out: Vec<VolumeEstimate> =
            slots.iter().filter_map(|s| s.lock().expect("slot lock").clone()).collect();
        out.sort_by(|a, b| a.tau.cmp(&b.tau));
        out
    }

    /// CSV with columns `tau, alpha, m_hat, iterations, residual`.
    pub fn write_report<W: Write>(&self, w: W) -> Result<()> {
        write_volume_report(w, &self.estimates())
    }
}

impl VolumeProvider for EstimatedVolumes {
    fn volume(&self, tau: &TauFunction) -> Result<f64> {
        Ok(self.estimate(tau)?.m_hat)
    }

    fn label(&self) -> &'static str {
        "estimated"
    }

    fn horizon(&self) -> f64 {
        self.op.basis.horizon
    }
}

pub fn write_volume_report<W: Write>(w: W, estimates: &[VolumeEstimate]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    csv.write_record(["tau", "alpha", "m_hat", "iterations", "residual"]).map_err(io)?;
    for e in estimates {
        csv.write_record([
            e.tau.clone(),
            format!("{:e}", e.alpha),
            format!("{:.12e}", e.m_hat),
            e.stats.iterations.to_string(),
            format!("{:.3e}", e.stats.residual),
        ])
        .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}
