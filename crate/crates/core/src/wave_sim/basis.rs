//! Gaussian source basis and receiver sampling grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HalfPlaneGeometry;
use crate::quadrature::CompositeRule;

/// `count` points `origin + i·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub origin: f64,
    pub step: f64,
    pub count: usize,
}

impl UniformGrid {
    pub fn new(origin: f64, step: f64, count: usize) -> Self {
        Self { origin, step, count }
    }

    /// `count` points centred on `mid`.
    pub fn centered(mid: f64, step: f64, count: usize) -> Self {
        let origin = mid - 0.5 * step * count.saturating_sub(1) as f64;
        Self { origin, step, count }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn first(&self) -> f64 {
        self.origin
    }

    pub fn last(&self) -> f64 {
        self.point(self.count.saturating_sub(1))
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point equal to `x` up to `rel_tol · step`.
    pub fn index_of(&self, x: f64, rel_tol: f64) -> Option<usize> {
        let f = (x - self.origin) / self.step;
        let i = f.round();
        if (f - i).abs() <= rel_tol && i >= 0.0 && (i as usize) < self.count {
            Some(i as usize)
        } else {
            None
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config(format!("{what} grid is empty")));
        }
        if !(self.step > 0.0 && self.step.is_finite() && self.origin.is_finite()) {
            return Err(Error::Config(format!("{what} grid needs a positive finite spacing, got {}", self.step)));
        }
        Ok(())
    }
}

/// Parameters of the Gaussian source basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub a_t: f64,
    pub a_x: f64,
    pub times: UniformGrid,
    pub positions: UniformGrid,
    /// Required distance from every centre to the edges of `(0, T) × Γ`,
    /// in units of `σ = 1/sqrt(2a)`.
    #[serde(default = "default_margin")]
    pub margin_sigmas: f64,
}

fn default_margin() -> f64 {
    3.0
}

/// `φ_{i,j}(t, x) = C exp(-a_t (t - t_i)² - a_x (x - x_j)²)` restricted to `(0, T) × Γ`.
///
/// Basis functions are indexed `i · N_x + j` (time index major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBasis {
    pub a_t: f64,
    pub a_x: f64,
    pub times: UniformGrid,
    pub positions: UniformGrid,
    pub norm: f64,
    pub half_width: f64,
    pub horizon: f64,
}

/// `σ = 1/sqrt(2a)` for the pulse `exp(-a u²)`.
pub fn gaussian_sigma(a: f64) -> f64 {
    1.0 / (2.0 * a).sqrt()
}

/// Offset beyond which `exp(-a u²)` drops below `1e-17`.
pub fn gaussian_cutoff(a: f64) -> f64 {
    (39.2 / a).sqrt()
}

pub fn build_basis(config: &BasisConfig, geom: &HalfPlaneGeometry) -> Result<SourceBasis> {
    if !(config.a_t > 0.0 && config.a_t.is_finite()) || !(config.a_x > 0.0 && config.a_x.is_finite()) {
        return Err(Error::Config(format!(
            "Gaussian sharpness must be positive, got a_t = {}, a_x = {}",
            config.a_t, config.a_x
        )));
    }
    config.times.validate("source time")?;
    config.positions.validate("source position")?;
    let (t_margin, x_margin) =
        (config.margin_sigmas * gaussian_sigma(config.a_t), config.margin_sigmas * gaussian_sigma(config.a_x));
    let (t_lo, t_hi) = (config.times.first(), config.times.last());
    if t_lo - t_margin < 0.0 || t_hi + t_margin > geom.horizon {
        return Err(Error::Config(format!(
            "source times [{t_lo}, {t_hi}] need a margin of {t_margin} inside (0, {})",
            geom.horizon
        )));
    }
    let (x_lo, x_hi) = (config.positions.first(), config.positions.last());
    let l = geom.half_width;
    if x_lo - x_margin < -l - 1e-12 || x_hi + x_margin > l + 1e-12 {
        return Err(Error::Config(format!(
            "source positions [{x_lo}, {x_hi}] need a margin of {x_margin} inside [-{l}, {l}]"
        )));
    }

    let mut basis = SourceBasis {
        a_t: config.a_t,
        a_x: config.a_x,
        times: config.times,
        positions: config.positions,
        norm: 1.0,
        half_width: l,
        horizon: geom.horizon,
    };
    // Normalise with a centre in the middle of the grids, then confirm every
    // other basis function is within 0.1% of unit norm.
    let (tn, xn) = (basis.time_factor_norms_sq(), basis.space_factor_norms_sq());
    let ref_sq = tn[tn.len() / 2] * xn[xn.len() / 2];
    basis.norm = 1.0 / ref_sq.sqrt();
    let c2 = basis.norm * basis.norm;
    let worst = tn
        .iter()
        .flat_map(|a| xn.iter().map(move |b| (c2 * a * b).sqrt()))
        .map(|n| (n - 1.0).abs())
        .fold(0.0, f64::max);
    if worst > 1e-3 {
        return Err(Error::Config(format!(
            "basis norms deviate from 1 by {worst:.2e}; increase the margin to the domain edges"
        )));
    }
    Ok(basis)
}

impl SourceBasis {
    pub fn len(&self) -> usize {
        self.times.count * self.positions.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i_time: usize, j_pos: usize) -> usize {
        i_time * self.positions.count + j_pos
    }

    /// `(i, j)` of basis function `idx`.
    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.positions.count, idx % self.positions.count)
    }

    /// Centre `(t_i, x_j)` of basis function `idx`.
    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.split(idx);
        (self.times.point(i), self.positions.point(j))
    }

    /// Unnormalised time factor `exp(-a_t (t - t_i)²)`, zero off `[0, T]`.
    pub fn time_factor(&self, i: usize, t: f64) -> f64 {
        if !(0.0..=self.horizon).contains(&t) {
            return 0.0;
        }
        let u = t - self.times.point(i);
        (-self.a_t * u * u).exp()
    }

    /// Unnormalised space factor `exp(-a_x (x - x_j)²)`, zero off `Γ`.
    pub fn space_factor(&self, j: usize, x: f64) -> f64 {
        if x.abs() > self.half_width {
            return 0.0;
        }
        let u = x - self.positions.point(j);
        (-self.a_x * u * u).exp()
    }

    pub fn eval(&self, idx: usize, t: f64, x: f64) -> f64 {
        let (i, j) = self.split(idx);
        self.norm * self.time_factor(i, t) * self.space_factor(j, x)
    }

    /// Quadrature rule over `(0, upper)` resolving the time pulses.
    pub fn time_rule(&self, upper: f64) -> CompositeRule {
        let panel = (0.5 * gaussian_sigma(self.a_t)).min(0.25 * self.times.step);
        CompositeRule::new(0.0, upper, panel)
    }

    /// Quadrature rule over `Γ` resolving the space pulses.
    pub fn space_rule(&self) -> CompositeRule {
        let panel = (0.5 * gaussian_sigma(self.a_x)).min(0.25 * self.positions.step);
        CompositeRule::new(-self.half_width, self.half_width, panel)
    }

    fn time_factor_norms_sq(&self) -> Vec<f64> {
        let rule = self.time_rule(self.horizon);
        (0..self.times.count).map(|i| rule.integrate(|t| self.time_factor(i, t).powi(2))).collect()
    }

    fn space_factor_norms_sq(&self) -> Vec<f64> {
        let rule = self.space_rule();
        (0..self.positions.count).map(|j| rule.integrate(|x| self.space_factor(j, x).powi(2))).collect()
    }

    /// Identity of the basis used to check stage compatibility.
    pub fn descriptor(&self) -> String {
        format!(
            "a_t={:?};a_x={:?};t=({:?},{:?},{});x=({:?},{:?},{});C={:?};L={:?};T={:?}",
            self.a_t,
            self.a_x,
            self.times.origin,
            self.times.step,
            self.times.count,
            self.positions.origin,
            self.positions.step,
            self.positions.count,
            self.norm,
            self.half_width,
            self.horizon
        )
    }
}

/// Receiver sampling grid on `(0, 2T) × Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverGrid {
    pub times: UniformGrid,
    pub positions: UniformGrid,
}

impl ReceiverGrid {
    pub fn len(&self) -> usize {
        self.times.count * self.positions.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index `l · N_x + k` of sample `(t_l, x_k)`.
    pub fn index(&self, l: usize, k: usize) -> usize {
        l * self.positions.count + k
    }

    pub fn validate(&self, geom: &HalfPlaneGeometry, basis: Option<&SourceBasis>) -> Result<()> {
        self.times.validate("receiver time")?;
        self.positions.validate("receiver position")?;
        let l = geom.half_width;
        let tol = 1e-9 * l;
        if self.positions.first() < -l - tol || self.positions.last() > l + tol {
            return Err(Error::Config(format!(
                "receiver positions [{}, {}] leave [-{l}, {l}]",
                self.positions.first(),
                self.positions.last()
            )));
        }
        let two_t = 2.0 * geom.horizon;
        if self.times.first() < 0.0 || self.times.last() > two_t + self.times.step {
            return Err(Error::Config(format!(
                "receiver times [{}, {}] leave [0, {two_t}]",
                self.times.first(),
                self.times.last()
            )));
        }
        if self.times.first() > 0.5 * self.times.step || self.times.last() < two_t - 0.5 * self.times.step {
            return Err(Error::Config(format!(
                "receiver times [{}, {}] must cover [0, {two_t}]",
                self.times.first(),
                self.times.last()
            )));
        }
        if let Some(basis) = basis {
            let ratio = basis.positions.step / self.positions.step;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                return Err(Error::Config(format!(
                    "receiver spacing {} must divide the source spacing {}",
                    self.positions.step, basis.positions.step
                )));
            }
        }
        Ok(())
    }
}
