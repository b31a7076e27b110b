//! Second-order finite-difference solver for `∂²_t u = c² Δu` in the lower
//! half-plane with a Neumann source on the surface.
//!
//! The mesh is vertex centred with the surface on row `k = 0`. Every outer
//! edge uses a mirrored ghost layer; on the surface the ghost carries the
//! Neumann datum `-c ∂_ν u = f`, which adds `2 c f / h` to the discrete
//! Laplacian there. Time stepping is explicit leapfrog.
//!
//! Updates are restricted to the causal window of the forcing: nodes that
//! the wave cannot have reached yet (physical cone plus a safety margin) are
//! left at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HalfPlaneGeometry;
use crate::wave_sim::basis::{gaussian_cutoff, ReceiverGrid, SourceBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Mesh points per shortest resolved wavelength.
    pub points_per_wavelength: f64,
    /// Relative spectral level that defines the shortest resolved wavelength.
    pub spectrum_floor: f64,
    /// Fraction of the leapfrog stability limit `c dt / h ≤ 1/√2`.
    pub cfl_fraction: f64,
    /// Width of the padding beyond `Γ` and below the surface. Defaults to
    /// `2 T c_max` plus five pulse widths.
    pub padding: Option<f64>,
    pub mesh_spacing: Option<f64>,
    pub time_step: Option<f64>,
    pub causal_window: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            points_per_wavelength: 8.0,
            spectrum_floor: 1e-6,
            cfl_fraction: 0.95,
            padding: None,
            mesh_spacing: None,
            time_step: None,
            causal_window: true,
        }
    }
}

pub const SCHEME_ID: &str = "fd2-leapfrog-ghost-neumann";

/// Longest mesh spacing that keeps `ppw` points per wavelength at the
/// frequency where the Gaussian spectrum falls to `floor` of its peak.
///
/// `exp(-a t²)` has spectrum `∝ exp(-ω²/(4a))`, which reaches `floor` at
/// `ω₀ = 2 sqrt(a ln(1/floor))`.
pub fn max_mesh_spacing(a_t: f64, a_x: f64, c_min: f64, ppw: f64, floor: f64) -> f64 {
    let decades = (1.0 / floor).ln();
    let omega = 2.0 * (a_t * decades).sqrt();
    let lambda_t = 2.0 * std::f64::consts::PI * c_min / omega;
    let kx = 2.0 * (a_x * decades).sqrt();
    let lambda_x = 2.0 * std::f64::consts::PI / kx;
    lambda_t.min(lambda_x) / ppw
}

/// Resolved mesh and time stepping for a given acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdMesh {
    pub h: f64,
    pub dt: f64,
    pub x0: f64,
    pub nx: usize,
    pub nz: usize,
    pub padding: f64,
    /// Surface node of each receiver position.
    pub receiver_nodes: Vec<usize>,
    /// Time steps between receiver samples.
    pub receiver_stride: usize,
    /// Time step of the first receiver sample.
    pub receiver_offset: usize,
    pub receiver_samples: usize,
}

impl FdMesh {
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn last_receiver_step(&self) -> usize {
        self.receiver_offset + self.receiver_stride * self.receiver_samples.saturating_sub(1)
    }
}

/// Surface forcing: a sum of separable terms
/// `norm · exp(-a_t (t - t_c)²) · Σ_j c_j exp(-a_x (x - x_j)²) · 1_Γ(x)`,
/// switched off after `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub a_t: f64,
    pub t_end: f64,
    pub a_x: f64,
    pub norm: f64,
    pub half_width: f64,
    pub terms: Vec<ForcingTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingTerm {
    pub t_center: f64,
    /// `(x_j, c_j)` pairs.
    pub spatial: Vec<(f64, f64)>,
}

impl Forcing {
    /// `Σ coeffs[idx] φ_idx`.
    pub fn from_basis(basis: &SourceBasis, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a basis of {} functions",
                coeffs.len(),
                basis.len()
            )));
        }
        let mut terms = Vec::new();
        for i in 0..basis.times.count {
            let spatial: Vec<(f64, f64)> = (0..basis.positions.count)
                .filter_map(|j| {
                    let c = coeffs[basis.index(i, j)];
                    (c != 0.0).then(|| (basis.positions.point(j), c))
                })
                .collect();
            if !spatial.is_empty() {
                terms.push(ForcingTerm { t_center: basis.times.point(i), spatial });
            }
        }
        Ok(Self { a_t: basis.a_t, t_end: basis.horizon, a_x: basis.a_x, norm: basis.norm, half_width: basis.half_width, terms })
    }

    /// The single basis function `φ_idx`.
    pub fn basis_function(basis: &SourceBasis, idx: usize) -> Self {
        let (t, x) = basis.center(idx);
        Self {
            a_t: basis.a_t,
            t_end: basis.horizon,
            a_x: basis.a_x,
            norm: basis.norm,
            half_width: basis.half_width,
            terms: vec![ForcingTerm { t_center: t, spatial: vec![(x, 1.0)] }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        if x.abs() > self.half_width || t > self.t_end {
            return 0.0;
        }
        let (cut_t, cut_x) = (gaussian_cutoff(self.a_t), gaussian_cutoff(self.a_x));
        let mut v = 0.0;
        for term in &self.terms {
            let u = t - term.t_center;
            if u.abs() > cut_t {
                continue;
            }
            let tf = (-self.a_t * u * u).exp();
            let sf: f64 = term
                .spatial
                .iter()
                .filter(|(xj, _)| (x - xj).abs() <= cut_x)
                .map(|(xj, c)| c * (-self.a_x * (x - xj) * (x - xj)).exp())
                .sum();
            v += tf * sf;
        }
        self.norm * v
    }

    fn time_window(&self) -> Option<(f64, f64)> {
        let cut = gaussian_cutoff(self.a_t);
        let lo = self.terms.iter().map(|t| t.t_center).fold(f64::INFINITY, f64::min);
        let hi = self.terms.iter().map(|t| t.t_center).fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo - cut, hi + cut))
    }

    fn space_window(&self) -> Option<(f64, f64)> {
        let cut = gaussian_cutoff(self.a_x);
        let xs = self.terms.iter().flat_map(|t| t.spatial.iter().map(|p| p.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if lo > hi {
            return None;
        }
        Some(((lo - cut).max(-self.half_width), (hi + cut).min(self.half_width)))
    }
}

/// Wavefield sampled on the solver mesh at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorField {
    pub time: f64,
    pub x0: f64,
    pub h: f64,
    pub nx: usize,
    pub nz: usize,
    /// Row-major over depth, then `x1`.
    pub values: Vec<f64>,
}

impl InteriorField {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[k * self.nx + i]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn depth(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Trapezoid weight of node `(i, k)`; consistent with the mirrored
    /// boundary closure, under which the discrete Laplacian is symmetric.
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        let mut w = self.h * self.h;
        if i == 0 || i + 1 == self.nx {
            w *= 0.5;
        }
        if k == 0 || k + 1 == self.nz {
            w *= 0.5;
        }
        w
    }

    /// Discrete `L²(M)` inner product.
    pub fn inner(&self, other: &InteriorField) -> Result<f64> {
        if self.nx != other.nx || self.nz != other.nz {
            return Err(Error::Dimension("interior fields live on different meshes".into()));
        }
        let mut acc = 0.0;
        for k in 0..self.nz {
            for i in 0..self.nx {
                let idx = k * self.nx + i;
                acc += self.weight(i, k) * self.values[idx] * other.values[idx];
            }
        }
        Ok(acc)
    }

    /// Weighted integral of `g(x1, depth) · u(x1, depth)`.
    pub fn integrate_with<G: Fn(f64, f64) -> f64>(&self, g: G) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.nz {
            for i in 0..self.nx {
                let v = self.at(i, k);
                if v != 0.0 {
                    acc += self.weight(i, k) * v * g(self.x(i), self.depth(k));
                }
            }
        }
        acc
    }

    /// Sub-grid covering `[x_lo, x_hi] × [0, depth_max]`.
    pub fn crop(&self, x_lo: f64, x_hi: f64, depth_max: f64) -> InteriorField {
        let i0 = (((x_lo - self.x0) / self.h).floor().max(0.0) as usize).min(self.nx - 1);
        let i1 = (((x_hi - self.x0) / self.h).ceil().max(0.0) as usize).min(self.nx - 1);
        let k1 = ((depth_max / self.h).ceil() as usize).min(self.nz - 1);
        let nx = i1 - i0 + 1;
        let nz = k1 + 1;
        let mut values = Vec::with_capacity(nx * nz);
        for k in 0..nz {
            values.extend_from_slice(&self.values[k * self.nx + i0..=k * self.nx + i1]);
        }
        InteriorField { time: self.time, x0: self.x(i0), h: self.h, nx, nz, values }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_trace: bool,
    pub snapshot_time: Option<f64>,
    /// Record the discrete energy after every step (constant speed only).
    pub track_energy: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Receiver samples, `(l, k)` row-major.
    pub trace: Vec<f64>,
    pub snapshot: Option<InteriorField>,
    /// `(t_{n+1/2}, E^{n+1/2})` pairs.
    pub energy: Vec<(f64, f64)>,
}

/// Finite-difference solver bound to one geometry and receiver grid.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    mesh: FdMesh,
    /// `(c dt / h)²` per node when the speed varies.
    coef: Option<Vec<f64>>,
    coef_const: f64,
    /// `2 c dt² / h` on the surface.
    surface_gain: Vec<f64>,
    c_max: f64,
    causal_window: bool,
}

impl WaveSolver {
    pub fn new(
        geom: &HalfPlaneGeometry,
        receivers: &ReceiverGrid,
        basis: &SourceBasis,
        params: &SolverParams,
    ) -> Result<Self> {
        geom.validate()?;
        receivers.validate(geom, None)?;
        let c_max = geom.sound_speed.max();
        let c_min = geom.sound_speed.min();
        if !(params.points_per_wavelength > 0.0 && params.spectrum_floor > 0.0 && params.spectrum_floor < 1.0) {
            return Err(Error::Config("points per wavelength and spectrum floor must be positive".into()));
        }
        if !(params.cfl_fraction > 0.0 && params.cfl_fraction <= 1.0) {
            return Err(Error::Stability(format!("CFL fraction {} must lie in (0, 1]", params.cfl_fraction)));
        }

        let dxr = receivers.positions.step;
        let h = match params.mesh_spacing {
            Some(h) => h,
            None => {
                let h_max = max_mesh_spacing(
                    basis.a_t,
                    basis.a_x,
                    c_min,
                    params.points_per_wavelength,
                    params.spectrum_floor,
                );
                dxr / (dxr / h_max).ceil()
            }
        };
        let ratio_x = dxr / h;
        if !(h > 0.0) || (ratio_x - ratio_x.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("mesh spacing {h} must divide the receiver spacing {dxr}")));
        }
        let ratio_x = ratio_x.round() as usize;

        let dtr = receivers.times.step;
        let limit = h / (c_max * std::f64::consts::SQRT_2);
        let dt = match params.time_step {
            Some(dt) => dt,
            None => {
                let dt_max = params.cfl_fraction * limit;
                dtr / (dtr / dt_max).ceil()
            }
        };
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability(format!(
                "time step {dt} exceeds the leapfrog limit h/(c_max √2) = {limit}"
            )));
        }
        let stride = dtr / dt;
        if (stride - stride.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("time step {dt} must divide the receiver interval {dtr}")));
        }
        let stride = stride.round() as usize;
        let offset = receivers.times.origin / dt;
        if (offset - offset.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "first receiver time {} is not a multiple of the time step {dt}",
                receivers.times.origin
            )));
        }
        let offset = offset.round() as usize;

        let padding = params.padding.unwrap_or(2.0 * geom.horizon * c_max + 5.0 / basis.a_x.sqrt());
        if padding < 0.0 {
            return Err(Error::Config("padding must be non-negative".into()));
        }
        let pad_nodes = (padding / h).ceil() as usize;
        let span_nodes = ratio_x * (receivers.positions.count - 1);
        let nx = span_nodes + 2 * pad_nodes + 1;
        let nz = pad_nodes + 1;
        let x0 = receivers.positions.origin - pad_nodes as f64 * h;
        let receiver_nodes = (0..receivers.positions.count).map(|k| pad_nodes + k * ratio_x).collect();

        let mesh = FdMesh {
            h,
            dt,
            x0,
            nx,
            nz,
            padding,
            receiver_nodes,
            receiver_stride: stride,
            receiver_offset: offset,
            receiver_samples: receivers.times.count,
        };

        let courant2 = |c: f64| (c * dt / h).powi(2);
        let (coef, coef_const) = match &geom.sound_speed {
            crate::geometry::SoundSpeed::Constant { value } => (None, courant2(*value)),
            speed => {
                let mut v = Vec::with_capacity(nx * nz);
                for k in 0..nz {
                    for i in 0..nx {
                        v.push(courant2(speed.at(mesh.x(i), k as f64 * h)));
                    }
                }
                (Some(v), 0.0)
            }
        };
        let surface_gain =
            (0..nx).map(|i| 2.0 * geom.sound_speed.at(mesh.x(i), 0.0) * dt * dt / h).collect();

        Ok(Self { mesh, coef, coef_const, surface_gain, c_max, causal_window: params.causal_window })
    }

    pub fn mesh(&self) -> &FdMesh {
        &self.mesh
    }

    /// Receiver trace of the forcing over the whole receiver time grid.
    pub fn simulate_trace(&self, forcing: &Forcing) -> Result<Vec<f64>> {
        Ok(self.run(forcing, RunOptions { record_trace: true, ..Default::default() })?.trace)
    }

    /// `u(t, ·)` on the full mesh.
    pub fn field_at(&self, forcing: &Forcing, time: f64) -> Result<InteriorField> {
        let out = self.run(forcing, RunOptions { snapshot_time: Some(time), ..Default::default() })?;
        Ok(out.snapshot.expect("snapshot requested"))
    }

    pub fn run(&self, forcing: &Forcing, opts: RunOptions) -> Result<RunOutput> {
        let m = &self.mesh;
        let (nx, nz, h, dt) = (m.nx, m.nz, m.h, m.dt);
        let mut out = RunOutput::default();
        if opts.record_trace {
            out.trace = vec![0.0; m.receiver_samples * m.receiver_nodes.len()];
        }
        let snap = opts.snapshot_time.map(|t| {
            let f = t / dt;
            let n = f.floor() as usize;
            (t, n, f - n as f64)
        });
        let mut last_step = 0usize;
        if opts.record_trace {
            last_step = last_step.max(m.last_receiver_step());
        }
        if let Some((_, n, frac)) = snap {
            last_step = last_step.max(if frac > 1e-12 { n + 1 } else { n });
        }

        let (Some((t_lo, _)), Some((xs_lo, xs_hi))) = (forcing.time_window(), forcing.space_window()) else {
            if let Some((t, _, _)) = snap {
                out.snapshot = Some(InteriorField { time: t, x0: m.x0, h, nx, nz, values: vec![0.0; nx * nz] });
            }
            return Ok(out);
        };

        // Surface forcing profiles: one per time term.
        let cut_x = gaussian_cutoff(forcing.a_x);
        let profiles: Vec<(f64, Vec<f64>)> = forcing
            .terms
            .iter()
            .map(|term| {
                let prof = (0..nx)
                    .map(|i| {
                        let x = m.x(i);
                        if x.abs() > forcing.half_width {
                            return 0.0;
                        }
                        let s: f64 = term
                            .spatial
                            .iter()
                            .filter(|(xj, _)| (x - xj).abs() <= cut_x)
                            .map(|(xj, c)| c * (-forcing.a_x * (x - xj) * (x - xj)).exp())
                            .sum();
                        forcing.norm * s * self.surface_gain[i]
                    })
                    .collect();
                (term.t_center, prof)
            })
            .collect();
        let cut_t = gaussian_cutoff(forcing.a_t);
        let margin = 16.0 * h;

        let mut prev = vec![0.0; nx * nz];
        let mut cur = vec![0.0; nx * nz];
        let mut src = vec![0.0; nx];
        let first_step = if self.causal_window { ((t_lo / dt).floor().max(0.0)) as usize } else { 0 };
        // u^n for n ≤ first_step is identically zero.
        let record = |n: usize, field: &[f64], out: &mut RunOutput| {
            if !opts.record_trace || n < m.receiver_offset {
                return;
            }
            let rel = n - m.receiver_offset;
            if rel % m.receiver_stride != 0 {
                return;
            }
            let l = rel / m.receiver_stride;
            if l >= m.receiver_samples {
                return;
            }
            let nr = m.receiver_nodes.len();
            for (kk, &i) in m.receiver_nodes.iter().enumerate() {
                out.trace[l * nr + kk] = field[i];
            }
        };

        let mut snapshot_lo: Option<Vec<f64>> = None;
        for n in first_step..last_step {
            let t = n as f64 * dt;
            // window for computing u^{n+1}
            let (i_lo, i_hi, k_hi) = if self.causal_window {
                let reach = self.c_max * (t + dt - t_lo).max(0.0) + margin;
                let i_lo = ((xs_lo - reach - m.x0) / h).floor().max(0.0) as usize;
                let i_hi = (((xs_hi + reach - m.x0) / h).ceil().max(0.0) as usize).min(nx - 1);
                let k_hi = ((reach / h).ceil() as usize).min(nz - 1);
                (i_lo.min(nx - 1), i_hi, k_hi)
            } else {
                (0, nx - 1, nz - 1)
            };

            src[i_lo..=i_hi].iter_mut().for_each(|v| *v = 0.0);
            let mut active = false;
            for (tc, prof) in profiles.iter().filter(|_| t <= forcing.t_end) {
                let u = t - tc;
                if u.abs() > cut_t {
                    continue;
                }
                active = true;
                let g = (-forcing.a_t * u * u).exp();
                for i in i_lo..=i_hi {
                    src[i] += g * prof[i];
                }
            }

            // prev <- u^{n+1}
            let first = n == 0;
            for k in 0..=k_hi {
                let row = k * nx;
                let up = if k == 0 { nx } else { row - nx };
                let down = if k + 1 == nz { row - nx } else { row + nx };
                let cur_row = &cur[row..row + nx];
                let cur_up = &cur[up..up + nx];
                let cur_down = &cur[down..down + nx];
                let prev_row = &mut prev[row..row + nx];
                let step = |i: usize, left: f64, right: f64, coef: f64| -> f64 {
                    let lap = left + right + cur_up[i] + cur_down[i] - 4.0 * cur_row[i];
                    coef * lap
                };
                let lo_in = i_lo.max(1);
                let hi_in = i_hi.min(nx - 2);
                match &self.coef {
                    None => {
                        let c = self.coef_const;
                        for i in lo_in..=hi_in {
                            prev_row[i] = update(first, cur_row[i], prev_row[i], step(i, cur_row[i - 1], cur_row[i + 1], c));
                        }
                        if i_lo == 0 {
                            prev_row[0] = update(first, cur_row[0], prev_row[0], step(0, cur_row[1], cur_row[1], c));
                        }
                        if i_hi == nx - 1 {
                            let e = nx - 1;
                            prev_row[e] = update(first, cur_row[e], prev_row[e], step(e, cur_row[e - 1], cur_row[e - 1], c));
                        }
                    }
                    Some(coef) => {
                        let coef = &coef[row..row + nx];
                        for i in lo_in..=hi_in {
                            prev_row[i] =
                                update(first, cur_row[i], prev_row[i], step(i, cur_row[i - 1], cur_row[i + 1], coef[i]));
                        }
                        if i_lo == 0 {
                            prev_row[0] =
                                update(first, cur_row[0], prev_row[0], step(0, cur_row[1], cur_row[1], coef[0]));
                        }
                        if i_hi == nx - 1 {
                            let e = nx - 1;
                            prev_row[e] =
                                update(first, cur_row[e], prev_row[e], step(e, cur_row[e - 1], cur_row[e - 1], coef[e]));
                        }
                    }
                }
                if k == 0 && active {
                    let scale = if first { 0.5 } else { 1.0 };
                    for i in i_lo..=i_hi {
                        prev_row[i] += scale * src[i];
                    }
                }
            }
            std::mem::swap(&mut prev, &mut cur);
            // cur = u^{n+1}, prev = u^n
            record(n + 1, &cur, &mut out);
            if opts.track_energy {
                out.energy.push(((n as f64 + 0.5) * dt, self.energy(&prev, &cur)));
            }
            if let Some((_, ns, _)) = snap {
                if n + 1 == ns {
                    snapshot_lo = Some(cur.clone());
                }
            }
        }

        if let Some((t, ns, frac)) = snap {
            let lo = if ns <= first_step {
                vec![0.0; nx * nz]
            } else if ns == last_step {
                cur.clone()
            } else {
                snapshot_lo.unwrap_or_else(|| vec![0.0; nx * nz])
            };
            let values = if frac > 1e-12 {
                // cur holds u^{ns+1}
                lo.iter().zip(&cur).map(|(a, b)| (1.0 - frac) * a + frac * b).collect()
            } else {
                lo
            };
            out.snapshot = Some(InteriorField { time: t, x0: m.x0, h, nx, nz, values });
        }
        Ok(out)
    }

    /// `E^{n+1/2} = ½‖(u^{n+1} - u^n)/dt‖² + ½⟨u^{n+1}, A u^n⟩` with
    /// `A = -c² Δ_h`, conserved by leapfrog in the absence of forcing.
    fn energy(&self, un: &[f64], un1: &[f64]) -> f64 {
        let m = &self.mesh;
        let (nx, nz, h, dt) = (m.nx, m.nz, m.h, m.dt);
        let c2 = self.coef_const * h * h / (dt * dt);
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for k in 0..nz {
            for i in 0..nx {
                let mut w = h * h;
                if i == 0 || i + 1 == nx {
                    w *= 0.5;
                }
                if k == 0 || k + 1 == nz {
                    w *= 0.5;
                }
                let idx = k * nx + i;
                let v = (un1[idx] - un[idx]) / dt;
                kinetic += w * v * v;
                let at = |ii: usize, kk: usize| un[kk * nx + ii];
                let left = if i == 0 { at(1, k) } else { at(i - 1, k) };
                let right = if i + 1 == nx { at(nx - 2, k) } else { at(i + 1, k) };
                let up = if k == 0 { at(i, 1) } else { at(i, k - 1) };
                let down = if k + 1 == nz { at(i, nz - 2) } else { at(i, k + 1) };
                let lap = (left + right + up + down - 4.0 * un[idx]) / (h * h);
                potential += w * un1[idx] * (-c2 * lap);
            }
        }
        0.5 * (kinetic + potential)
    }
}

#[inline(always)]
fn update(first: bool, cur: f64, prev: f64, lap_term: f64) -> f64 {
    if first {
        // zero initial displacement and velocity
        0.5 * lap_term + cur
    } else {
        2.0 * cur - prev + lap_term
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave_sim::basis::{build_basis, BasisConfig, UniformGrid};

    fn small_setup() -> (HalfPlaneGeometry, SourceBasis, ReceiverGrid) {
        let geom = HalfPlaneGeometry::unit_speed(0.5, 0.3).unwrap();
        let basis = build_basis(
            &BasisConfig {
                a_t: 1e3,
                a_x: 1e3,
                times: UniformGrid::centered(0.15, 0.05, 4),
                positions: UniformGrid::centered(0.0, 0.05, 17),
                margin_sigmas: 3.0,
            },
            &geom,
        )
        .unwrap();
        let receivers =
            ReceiverGrid { times: UniformGrid::new(0.0, 0.01, 61), positions: UniformGrid::new(-0.5, 0.025, 41) };
        (geom, basis, receivers)
    }

    #[test]
    fn mesh_rule_aligns_receivers() {
        let (geom, basis, receivers) = small_setup();
        let solver = WaveSolver::new(&geom, &receivers, &basis, &SolverParams::default()).unwrap();
        let m = solver.mesh();
        assert!((m.h - 0.003125).abs() < 1e-15);
        assert!((m.dt - 0.002).abs() < 1e-15);
        assert_eq!(m.receiver_stride, 5);
        for (k, &i) in m.receiver_nodes.iter().enumerate() {
            assert!((m.x(i) - receivers.positions.point(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unstable_time_step() {
        let (geom, basis, receivers) = small_setup();
        let params = SolverParams { time_step: Some(0.0025), ..Default::default() };
        assert!(matches!(WaveSolver::new(&geom, &receivers, &basis, &params), Err(Error::Stability(_))));
    }

    #[test]
    fn zero_forcing_gives_zero_trace() {
        let (geom, basis, receivers) = small_setup();
        let solver = WaveSolver::new(&geom, &receivers, &basis, &SolverParams::default()).unwrap();
        let f = Forcing::from_basis(&basis, &vec![0.0; basis.len()]).unwrap();
        assert!(solver.simulate_trace(&f).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_window_does_not_change_the_trace() {
        let (geom, basis, receivers) = small_setup();
        let on = WaveSolver::new(&geom, &receivers, &basis, &SolverParams::default()).unwrap();
        let off = WaveSolver::new(
            &geom,
            &receivers,
            &basis,
            &SolverParams { causal_window: false, ..Default::default() },
        )
        .unwrap();
        let f = Forcing::basis_function(&basis, basis.index(1, 5));
        let a = on.simulate_trace(&f).unwrap();
        let b = off.simulate_trace(&f).unwrap();
        let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn energy_is_conserved_after_the_source_switches_off() {
        let (geom, basis, receivers) = small_setup();
        let solver = WaveSolver::new(&geom, &receivers, &basis, &SolverParams::default()).unwrap();
        let f = Forcing::basis_function(&basis, basis.index(0, 8));
        let out = solver
            .run(&f, RunOptions { snapshot_time: Some(0.4), track_energy: true, ..Default::default() })
            .unwrap();
        let late: Vec<f64> = out.energy.iter().filter(|(t, _)| *t > 0.28).map(|p| p.1).collect();
        let (lo, hi) = late.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
        assert!(lo > 0.0);
        assert!((hi - lo) / hi < 1e-10, "energy drift {}", (hi - lo) / hi);
    }

    #[test]
    fn positive_source_raises_the_surface() {
        let (geom, basis, receivers) = small_setup();
        let solver = WaveSolver::new(&geom, &receivers, &basis, &SolverParams::default()).unwrap();
        let j = 8;
        let trace = solver.simulate_trace(&Forcing::basis_function(&basis, basis.index(0, j))).unwrap();
        // receiver directly above the source centre, shortly after the pulse
        let k = receivers.positions.index_of(basis.positions.point(j), 1e-9).unwrap();
        let l = receivers.times.index_of(0.15, 1e-9).unwrap();
        assert!(trace[receivers.index(l, k)] > 0.0);
    }
}
