//! Half-plane geometry for the boundary control pipeline.
//!
//! The medium is the lower half-plane `{(x1, depth) : depth >= 0}` and the
//! accessible boundary is the segment `Γ = [-L, L] × {0}`. Time profiles on
//! `Γ` are represented as the pointwise maximum of a constant floor and a
//! finite set of cones `τ_y^R(z) = R - d_Γ(z, y)`.
//!
//! For the constant unit sound speed this module also provides exact volumes
//! of domains of influence and of wave caps. These are the reference values
//! the data-driven estimates are checked against.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(x1, 0)` on the accessible boundary.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x1: f64,
}

impl BoundaryPoint {
    pub const fn new(x1: f64) -> Self {
        Self { x1 }
    }
}

impl From<f64> for BoundaryPoint {
    fn from(x1: f64) -> Self {
        Self { x1 }
    }
}

/// Sound speed sampled on a regular `(x1, depth)` grid, bilinearly
/// interpolated and clamped at the grid edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedSpeed {
    pub x0: f64,
    pub depth0: f64,
    pub dx: f64,
    pub ddepth: f64,
    pub nx: usize,
    pub ndepth: usize,
    /// Row-major over depth, then x1.
    pub values: Vec<f64>,
}

impl GriddedSpeed {
    pub fn sample(&self, x1: f64, depth: f64) -> f64 {
        let fx = ((x1 - self.x0) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let fz = ((depth - self.depth0) / self.ddepth).clamp(0.0, (self.ndepth - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let k = (fz.floor() as usize).min(self.ndepth.saturating_sub(2));
        if self.nx == 1 || self.ndepth == 1 {
            let i = fx.round() as usize;
            let k = fz.round() as usize;
            return self.values[k * self.nx + i];
        }
        let wx = fx - i as f64;
        let wz = fz - k as f64;
        let v = |kk: usize, ii: usize| self.values[kk * self.nx + ii];
        (1.0 - wz) * ((1.0 - wx) * v(k, i) + wx * v(k, i + 1))
            + wz * ((1.0 - wx) * v(k + 1, i) + wx * v(k + 1, i + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SoundSpeed {
    Constant { value: f64 },
    Gridded(GriddedSpeed),
}

impl SoundSpeed {
    pub const UNIT: SoundSpeed = SoundSpeed::Constant { value: 1.0 };

    pub fn at(&self, x1: f64, depth: f64) -> f64 {
        match self {
            SoundSpeed::Constant { value } => *value,
            SoundSpeed::Gridded(g) => g.sample(x1, depth),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            SoundSpeed::Constant { value } => *value,
            SoundSpeed::Gridded(g) => g.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            SoundSpeed::Constant { value } => *value,
            SoundSpeed::Gridded(g) => g.values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, SoundSpeed::Constant { value } if *value == 1.0)
    }

    fn validate(&self) -> Result<()> {
        if let SoundSpeed::Gridded(g) = self {
            if g.nx == 0 || g.ndepth == 0 || g.values.len() != g.nx * g.ndepth {
                return Err(Error::InvalidGeometry(format!(
                    "gridded sound speed has {} values for a {}x{} grid",
                    g.values.len(),
                    g.ndepth,
                    g.nx
                )));
            }
            if !(g.dx > 0.0 && g.ddepth > 0.0) {
                return Err(Error::InvalidGeometry("gridded sound speed spacing must be positive".into()));
            }
        }
        let (lo, hi) = (self.min(), self.max());
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "sound speed must be strictly positive and bounded, got range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Accessible aperture `Γ = [-L, L]`, control horizon `T` and medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneGeometry {
    pub half_width: f64,
    pub horizon: f64,
    pub sound_speed: SoundSpeed,
}

impl HalfPlaneGeometry {
    pub fn new(half_width: f64, horizon: f64, sound_speed: SoundSpeed) -> Result<Self> {
        let geom = Self { half_width, horizon, sound_speed };
        geom.validate()?;
        Ok(geom)
    }

    /// Unit sound speed, the setting in which exact volumes are available.
    pub fn unit_speed(half_width: f64, horizon: f64) -> Result<Self> {
        Self::new(half_width, horizon, SoundSpeed::UNIT)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidGeometry(format!("L must be positive, got {}", self.half_width)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidGeometry(format!("T must be positive, got {}", self.horizon)));
        }
        self.sound_speed.validate()
    }

    pub fn contains(&self, z: BoundaryPoint) -> bool {
        z.x1.abs() <= self.half_width
    }

    pub fn check_point(&self, z: BoundaryPoint) -> Result<()> {
        if self.contains(z) {
            Ok(())
        } else {
            Err(Error::InvalidGeometry(format!(
                "boundary point {} lies outside [-{}, {}]",
                z.x1, self.half_width, self.half_width
            )))
        }
    }

    fn require_unit_speed(&self) -> Result<()> {
        if self.sound_speed.is_unit() {
            Ok(())
        } else {
            Err(Error::UnsupportedMedium(
                "exact volumes and distances are only available for unit sound speed".into(),
            ))
        }
    }
}

/// Distance between two boundary points, measured along the boundary.
pub trait BoundaryMetric {
    fn distance(&self, a: BoundaryPoint, b: BoundaryPoint) -> f64;
}

/// Flat boundary with unit sound speed: `d_Γ(a, b) = |a - b|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatBoundary;

impl BoundaryMetric for FlatBoundary {
    fn distance(&self, a: BoundaryPoint, b: BoundaryPoint) -> f64 {
        (a.x1 - b.x1).abs()
    }
}

/// Cone `τ_y^R(z) = R - d_Γ(z, y)` with apex `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub apex: BoundaryPoint,
    pub reach: f64,
}

impl Cone {
    pub fn new(apex: impl Into<BoundaryPoint>, reach: f64) -> Self {
        Self { apex: apex.into(), reach }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.apex.x1.total_cmp(&other.apex.x1).then(self.reach.total_cmp(&other.reach))
    }
}

/// Boundary time profile `τ = floor ∨ τ_{y_1}^{R_1} ∨ … ∨ τ_{y_k}^{R_k}`.
///
/// Cones are kept sorted so that two representations of the same join
/// compare and hash identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauFunction {
    floor: f64,
    cones: Vec<Cone>,
    horizon: f64,
}

impl TauFunction {
    pub fn new(floor: f64, cones: Vec<Cone>, horizon: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::InvalidTau(format!("floor must be a non-negative time, got {floor}")));
        }
        for c in &cones {
            if !(c.reach.is_finite() && c.apex.x1.is_finite()) {
                return Err(Error::InvalidTau(format!("non-finite cone {c:?}")));
            }
        }
        let mut cones = cones;
        cones.sort_by(Cone::total_cmp);
        cones.dedup();
        let tau = Self { floor, cones, horizon };
        let peak = tau.max_value();
        if peak > horizon {
            return Err(Error::InvalidTau(format!("tau reaches {peak}, exceeding the horizon T = {horizon}")));
        }
        Ok(tau)
    }

    /// `τ ≡ value` on the whole aperture.
    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        Self::new(value, Vec::new(), horizon)
    }

    pub fn cone(apex: impl Into<BoundaryPoint>, reach: f64, horizon: f64) -> Result<Self> {
        Self::new(0.0, vec![Cone::new(apex, reach)], horizon)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Largest value of `τ` on `Γ̄`, attained at the floor or at an apex.
    pub fn max_value(&self) -> f64 {
        self.cones.iter().map(|c| c.reach).fold(self.floor, f64::max).max(0.0)
    }

    pub fn eval(&self, z: BoundaryPoint) -> f64 {
        self.eval_with(z, &FlatBoundary)
    }

    pub fn eval_with<M: BoundaryMetric + ?Sized>(&self, z: BoundaryPoint, metric: &M) -> f64 {
        self.cones
            .iter()
            .map(|c| c.reach - metric.distance(z, c.apex))
            .fold(self.floor, f64::max)
            .max(0.0)
    }

    /// Pointwise maximum of two profiles.
    pub fn join(&self, other: &TauFunction) -> Result<TauFunction> {
        if self.horizon != other.horizon {
            return Err(Error::InvalidTau(format!(
                "cannot join profiles with horizons {} and {}",
                self.horizon, other.horizon
            )));
        }
        let mut cones = self.cones.clone();
        cones.extend_from_slice(&other.cones);
        TauFunction::new(self.floor.max(other.floor), cones, self.horizon)
    }

    /// Membership of `(t, z)` in `S_τ = {T - τ(z) < t < T}`.
    pub fn in_support(&self, t: f64, z: BoundaryPoint) -> bool {
        in_space_time_support(self, t, z)
    }

    /// Canonical textual form, e.g. `0.25|cone(0,0.3)`.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TauFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.floor)?;
        for c in &self.cones {
            write!(f, "|cone({},{})", c.apex.x1, c.reach)?;
        }
        Ok(())
    }
}

/// Parses a descriptor against an explicit horizon.
///
/// Grammar: `item ('|' item)*`, where an item is either a floor value or
/// `cone(y,R)`. Several floors combine by maximum.
pub fn parse_tau(descriptor: &str, horizon: f64) -> Result<TauFunction> {
    let mut floor = 0.0_f64;
    let mut cones = Vec::new();
    for raw in descriptor.split('|') {
        let item = raw.trim();
        if item.is_empty() {
            continue;
        }
        if let Some(body) = item.strip_prefix("cone(").and_then(|b| b.strip_suffix(')')) {
            let mut parts = body.split(',');
            let (Some(y), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::InvalidTau(format!("malformed cone `{item}`")));
            };
            let y = parse_f64(y)?;
            let r = parse_f64(r)?;
            cones.push(Cone::new(y, r));
        } else {
            floor = floor.max(parse_f64(item)?);
        }
    }
    TauFunction::new(floor, cones, horizon)
}

fn parse_f64(s: &str) -> Result<f64> {
    f64::from_str(s.trim()).map_err(|_| Error::InvalidTau(format!("cannot parse `{s}` as a number")))
}

pub fn tau_eval(tau: &TauFunction, z: BoundaryPoint) -> f64 {
    tau.eval(z)
}

pub fn tau_join(a: &TauFunction, b: &TauFunction) -> Result<TauFunction> {
    a.join(b)
}

/// `T - τ(z) < t < T`. The interval is open at both ends.
pub fn in_space_time_support(tau: &TauFunction, t: f64, z: BoundaryPoint) -> bool {
    let horizon = tau.horizon;
    horizon - tau.eval(z) < t && t < horizon
}

/// Whether `(x1, depth)` lies in `M(τ)`, tested straight from the
/// definition `∃ z ∈ Γ̄ : |x - z| ≤ τ(z)`.
///
/// On every smooth piece of `τ` the function `z ↦ τ(z) - |x - z|` is either
/// monotone (cone flanks) or maximised at the projection of `x` (floor),
/// so its maximum over `Γ̄` is attained at one of a finite set of
/// candidate points.
pub fn in_domain_of_influence(tau: &TauFunction, geom: &HalfPlaneGeometry, x1: f64, depth: f64) -> bool {
    let l = geom.half_width;
    let reach = |z: f64| {
        let zp = BoundaryPoint::new(z);
        tau.eval(zp) - ((x1 - z).powi(2) + depth * depth).sqrt()
    };
    let mut best = reach(x1.clamp(-l, l)).max(reach(-l)).max(reach(l));
    for c in tau.cones() {
        let y = c.apex.x1;
        if y.abs() <= l {
            best = best.max(reach(y));
        }
        let drop = c.reach - tau.floor();
        if drop > 0.0 {
            for z in [y - drop, y + drop] {
                if z.abs() <= l {
                    best = best.max(reach(z));
                }
            }
        }
    }
    best >= 0.0
}

/// One piece of the depth profile of a domain of influence.
#[derive(Debug, Clone, Copy)]
enum Piece {
    /// Constant depth on `[lo, hi]`.
    Flat { lo: f64, hi: f64, depth: f64 },
    /// Lower half circle centred on the boundary.
    Arc { center: f64, radius: f64 },
}

impl Piece {
    fn value(&self, x: f64) -> f64 {
        match *self {
            Piece::Flat { lo, hi, depth } => {
                if (lo..=hi).contains(&x) {
                    depth
                } else {
                    0.0
                }
            }
            Piece::Arc { center, radius } => {
                let u = x - center;
                (radius * radius - u * u).max(0.0).sqrt()
            }
        }
    }

    /// `∫_a^b value(x) dx`, with `[a, b]` inside the piece's support.
    fn integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            Piece::Flat { depth, .. } => depth * (b - a),
            Piece::Arc { center, radius } => {
                let antiderivative = |x: f64| {
                    let u = (x - center).clamp(-radius, radius);
                    0.5 * (u * (radius * radius - u * u).max(0.0).sqrt()
                        + radius * radius * (u / radius).clamp(-1.0, 1.0).asin())
                };
                antiderivative(b) - antiderivative(a)
            }
        }
    }

    fn endpoints(&self) -> [f64; 2] {
        match *self {
            Piece::Flat { lo, hi, .. } => [lo, hi],
            Piece::Arc { center, radius } => [center - radius, center + radius],
        }
    }
}

fn profile_pieces(tau: &TauFunction, half_width: f64) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let s = tau.floor();
    if s > 0.0 {
        pieces.push(Piece::Flat { lo: -half_width, hi: half_width, depth: s });
        pieces.push(Piece::Arc { center: -half_width, radius: s });
        pieces.push(Piece::Arc { center: half_width, radius: s });
    }
    for c in tau.cones() {
        if c.reach > 0.0 {
            pieces.push(Piece::Arc { center: c.apex.x1, radius: c.reach });
        }
    }
    pieces
}

fn crossings(a: &Piece, b: &Piece, out: &mut Vec<f64>) {
    match (*a, *b) {
        (Piece::Arc { center: y1, radius: r1 }, Piece::Arc { center: y2, radius: r2 }) => {
            if y1 != y2 {
                out.push(((r1 * r1 - r2 * r2) + (y2 * y2 - y1 * y1)) / (2.0 * (y2 - y1)));
            }
        }
        (Piece::Flat { depth, .. }, Piece::Arc { center, radius })
        | (Piece::Arc { center, radius }, Piece::Flat { depth, .. }) => {
            if radius > depth {
                let w = (radius * radius - depth * depth).sqrt();
                out.push(center - w);
                out.push(center + w);
            }
        }
        (Piece::Flat { .. }, Piece::Flat { .. }) => {}
    }
}

/// Area of `M(τ)` for unit sound speed.
///
/// `M(τ)` is the region below the upper envelope of the profile pieces: a
/// flat strip of depth `floor` over `Γ`, quarter disks at its ends, and one
/// half disk of radius `R` per cone. Between consecutive breakpoints (piece
/// endpoints and pairwise crossings) a single piece is on top, and its
/// integral is taken in closed form.
pub fn exact_volume(tau: &TauFunction, geom: &HalfPlaneGeometry) -> Result<f64> {
    geom.require_unit_speed()?;
    for c in tau.cones() {
        geom.check_point(c.apex)?;
    }
    let pieces = profile_pieces(tau, geom.half_width);
    if pieces.is_empty() {
        return Ok(0.0);
    }
    let mut breaks = Vec::with_capacity(pieces.len() * pieces.len() + 2 * pieces.len());
    for (i, p) in pieces.iter().enumerate() {
        breaks.extend_from_slice(&p.endpoints());
        for q in &pieces[i + 1..] {
            crossings(p, q, &mut breaks);
        }
    }
    let lo = pieces.iter().map(|p| p.endpoints()[0]).fold(f64::INFINITY, f64::min);
    let hi = pieces.iter().map(|p| p.endpoints()[1]).fold(f64::NEG_INFINITY, f64::max);
    breaks.retain(|x| x.is_finite() && *x >= lo && *x <= hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut area = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let top = pieces
            .iter()
            .max_by(|p, q| p.value(mid).total_cmp(&q.value(mid)))
            .expect("non-empty");
        if top.value(mid) > 0.0 {
            area += top.integral(a, b);
        }
    }
    Ok(area)
}

/// Options for the grid-counting area oracle.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    /// Cells along the longer side of the bounding box at the first level.
    pub initial_cells: usize,
    /// Stop once successive levels agree to this relative tolerance.
    pub rel_tol: f64,
    pub max_levels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { initial_cells: 512, rel_tol: 1e-4, max_levels: 7 }
    }
}

/// Area of the set `{(x1, depth) in box : inside(x1, depth)}` by
/// cell-centre counting, doubling the resolution until successive counts
/// agree to `opts.rel_tol`.
pub fn count_area<F>(bbox: [f64; 4], opts: QuadratureOptions, inside: F) -> f64
where
    F: Fn(f64, f64) -> bool,
{
    let [x_lo, x_hi, d_lo, d_hi] = bbox;
    let (wx, wd) = (x_hi - x_lo, d_hi - d_lo);
    if wx <= 0.0 || wd <= 0.0 {
        return 0.0;
    }
    let count = |n_long: usize| {
        let h = wx.max(wd) / n_long as f64;
        let nx = (wx / h).ceil() as usize;
        let nd = (wd / h).ceil() as usize;
        let (hx, hd) = (wx / nx as f64, wd / nd as f64);
        let mut hits = 0usize;
        for k in 0..nd {
            let d = d_lo + (k as f64 + 0.5) * hd;
            for i in 0..nx {
                if inside(x_lo + (i as f64 + 0.5) * hx, d) {
                    hits += 1;
                }
            }
        }
        hits as f64 * hx * hd
    };
    let mut n = opts.initial_cells.max(4);
    let mut prev = count(n);
    for _ in 0..opts.max_levels {
        n *= 2;
        let next = count(n);
        if (next - prev).abs() <= opts.rel_tol * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        prev = next;
    }
    prev
}

/// Grid-counting estimate of the area of `M(τ)`, using the membership
/// predicate [`in_domain_of_influence`]. Independent of [`exact_volume`].
pub fn quadrature_volume(tau: &TauFunction, geom: &HalfPlaneGeometry, opts: QuadratureOptions) -> Result<f64> {
    geom.require_unit_speed()?;
    let reach = tau.max_value();
    if reach <= 0.0 {
        return Ok(0.0);
    }
    let l = geom.half_width;
    Ok(count_area([-l - reach, l + reach, 0.0, reach], opts, |x, d| {
        in_domain_of_influence(tau, geom, x, d)
    }))
}

/// Wave cap `cap_Γ(y, s, h) = M(y, s + h) \ M°(Γ, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveCapSpec {
    pub y: BoundaryPoint,
    pub depth: f64,
    pub height: f64,
}

impl WaveCapSpec {
    /// Validates `s > 0`, `h > 0`, `s + h ≤ T`, `y ∈ Γ`. The caller is
    /// responsible for staying below the cut distance of `y`.
    pub fn new(y: impl Into<BoundaryPoint>, depth: f64, height: f64, geom: &HalfPlaneGeometry) -> Result<Self> {
        let y = y.into();
        geom.check_point(y)?;
        if !(depth > 0.0 && height > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "wave cap needs positive depth and height, got s = {depth}, h = {height}"
            )));
        }
        if depth + height > geom.horizon {
            return Err(Error::InvalidGeometry(format!(
                "wave cap reaches s + h = {} beyond T = {}",
                depth + height,
                geom.horizon
            )));
        }
        Ok(Self { y, depth, height })
    }

    pub fn outer_radius(&self) -> f64 {
        self.depth + self.height
    }

    /// Half width of the chord at depth `s`.
    pub fn half_chord(&self) -> f64 {
        let r = self.outer_radius();
        (r * r - self.depth * self.depth).max(0.0).sqrt()
    }

    /// Diameter of a minor circular segment: its chord.
    pub fn diameter(&self) -> f64 {
        2.0 * self.half_chord()
    }

    /// The point `x(y, s)` the cap shrinks to.
    pub fn apex_point(&self) -> (f64, f64) {
        (self.y.x1, self.depth)
    }

    /// Membership for a cap well inside the aperture.
    pub fn contains(&self, x1: f64, depth: f64) -> bool {
        let r = self.outer_radius();
        depth >= self.depth && (x1 - self.y.x1).powi(2) + depth * depth <= r * r
    }

    fn require_interior(&self, geom: &HalfPlaneGeometry) -> Result<()> {
        if self.y.x1.abs() + self.outer_radius() <= geom.half_width {
            Ok(())
        } else {
            Err(Error::InvalidGeometry(format!(
                "wave cap around {} with radius {} reaches past the aperture edge",
                self.y.x1,
                self.outer_radius()
            )))
        }
    }
}

/// Area of the circular segment `{|x - y| ≤ R, depth ≥ s}`, `R = s + h`.
pub fn exact_cap_volume(cap: &WaveCapSpec, geom: &HalfPlaneGeometry) -> Result<f64> {
    geom.require_unit_speed()?;
    cap.require_interior(geom)?;
    let r = cap.outer_radius();
    let s = cap.depth;
    Ok(r * r * (s / r).clamp(-1.0, 1.0).acos() - s * (r * r - s * s).max(0.0).sqrt())
}

/// Euclidean distance from `(z, 0)` to the closed wave cap.
///
/// The cap is convex and lies below its chord, so the nearest point is the
/// foot of the perpendicular on the chord when it falls inside the chord and
/// the nearer chord endpoint otherwise.
pub fn exact_cap_distance(z: BoundaryPoint, cap: &WaveCapSpec, geom: &HalfPlaneGeometry) -> Result<f64> {
    geom.require_unit_speed()?;
    cap.require_interior(geom)?;
    let offset = (z.x1 - cap.y.x1).abs();
    let overhang = (offset - cap.half_chord()).max(0.0);
    Ok((overhang * overhang + cap.depth * cap.depth).sqrt())
}

/// `d(z, x(y, s)) = sqrt(|z - y|² + s²)`.
pub fn point_distance(z: BoundaryPoint, y: BoundaryPoint, depth: f64) -> f64 {
    ((z.x1 - y.x1).powi(2) + depth * depth).sqrt()
}

/// `2Ls + πs²/2`, the area of `M(s·1_Γ)`.
pub fn strip_volume(half_width: f64, s: f64) -> f64 {
    2.0 * half_width * s + 0.5 * PI * s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom() -> HalfPlaneGeometry {
        HalfPlaneGeometry::unit_speed(1.0, 0.6).unwrap()
    }

    #[test]
    fn eval_examples() {
        let t = 1.249;
        let floor = TauFunction::constant(0.25, t).unwrap();
        assert_eq!(floor.eval(0.7.into()), 0.25);
        let cone = TauFunction::cone(0.0, 0.3, t).unwrap();
        assert_eq!(cone.eval(0.0.into()), 0.3);
        let both = TauFunction::new(0.25, vec![Cone::new(0.0, 0.3)], t).unwrap();
        assert_relative_eq!(both.eval(0.1.into()), 0.25);
        assert_relative_eq!(both.eval(0.0.into()), 0.3);
    }

    #[test]
    fn negative_cone_values_clamp_to_zero() {
        let cone = TauFunction::cone(0.0, 0.1, 1.0).unwrap();
        assert_eq!(cone.eval(0.5.into()), 0.0);
    }

    #[test]
    fn construction_rejects_tau_above_horizon() {
        assert!(matches!(TauFunction::constant(0.7, 0.6), Err(Error::InvalidTau(_))));
        assert!(TauFunction::cone(0.0, 0.61, 0.6).is_err());
        let a = TauFunction::constant(0.5, 0.6).unwrap();
        let b = TauFunction::cone(0.0, 0.6, 0.6).unwrap();
        assert!(a.join(&b).is_ok());
        assert!(TauFunction::constant(-0.1, 0.6).is_err());
    }

    #[test]
    fn join_of_three_is_pointwise_max() {
        let t = 0.6;
        let t1 = TauFunction::constant(0.25, t).unwrap();
        let t2 = TauFunction::cone(0.0, 0.3, t).unwrap();
        let t3 = TauFunction::cone(0.5, 0.4, t).unwrap();
        let t4 = t1.join(&t2).unwrap().join(&t3).unwrap();
        for k in 0..=40 {
            let z = BoundaryPoint::new(-1.0 + 0.05 * k as f64);
            let want = t1.eval(z).max(t2.eval(z)).max(t3.eval(z));
            assert_eq!(t4.eval(z), want);
        }
        assert_eq!(t1.join(&t2).unwrap().eval(0.0.into()), 0.3);
    }

    #[test]
    fn support_examples() {
        let full = TauFunction::constant(0.6, 0.6).unwrap();
        let empty = TauFunction::constant(0.0, 0.6).unwrap();
        for &(t, z) in &[(0.01, -1.0), (0.3, 0.2), (0.59, 0.9)] {
            assert!(in_space_time_support(&full, t, BoundaryPoint::new(z)));
            assert!(!in_space_time_support(&empty, t, BoundaryPoint::new(z)));
        }
        let floor = TauFunction::constant(0.25, 1.249).unwrap();
        assert!(in_space_time_support(&floor, 1.1, 0.3.into()));
        // open interval: the left end is excluded
        let tau = TauFunction::constant(0.25, 0.5).unwrap();
        assert!(!in_space_time_support(&tau, 0.25, 0.0.into()));
        assert!(!in_space_time_support(&tau, 0.5, 0.0.into()));
    }

    #[test]
    fn descriptor_round_trip_and_canonical_order() {
        let t = 0.6;
        let a = TauFunction::new(0.25, vec![Cone::new(0.5, 0.35), Cone::new(0.0, 0.3)], t).unwrap();
        let b = TauFunction::new(0.25, vec![Cone::new(0.0, 0.3), Cone::new(0.5, 0.35)], t).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.descriptor(), "0.25|cone(0,0.3)|cone(0.5,0.35)");
        assert_eq!(parse_tau(&a.descriptor(), t).unwrap(), a);
        assert!(parse_tau("cone(0,0.3", t).is_err());
        assert!(parse_tau("abc", t).is_err());
    }

    #[test]
    fn exact_volume_closed_forms() {
        let g = HalfPlaneGeometry::unit_speed(2.232, 1.249).unwrap();
        let strip = TauFunction::constant(0.25, 1.249).unwrap();
        assert_relative_eq!(exact_volume(&strip, &g).unwrap(), 1.214_174_770_424_681, max_relative = 1e-13);
        let cone = TauFunction::cone(0.0, 0.3, 1.249).unwrap();
        assert_relative_eq!(exact_volume(&cone, &g).unwrap(), 0.141_371_669_411_540_7, max_relative = 1e-13);
        let zero = TauFunction::constant(0.0, 1.249).unwrap();
        assert_eq!(exact_volume(&zero, &g).unwrap(), 0.0);
    }

    #[test]
    fn exact_volume_rejects_variable_medium() {
        let g = HalfPlaneGeometry::new(1.0, 0.6, SoundSpeed::Constant { value: 2.0 }).unwrap();
        let tau = TauFunction::constant(0.25, 0.6).unwrap();
        assert!(matches!(exact_volume(&tau, &g), Err(Error::UnsupportedMedium(_))));
    }

    #[test]
    fn cap_volume_matches_closed_form_and_inclusion() {
        let g = geom();
        let cap = WaveCapSpec::new(0.0, 0.25, 0.05, &g).unwrap();
        let v = exact_cap_volume(&cap, &g).unwrap();
        assert_relative_eq!(v, 0.011_253_889_031_701_09, max_relative = 1e-12);
        let t1 = TauFunction::constant(0.25, 0.6).unwrap();
        let t2 = t1.join(&TauFunction::cone(0.0, 0.3, 0.6).unwrap()).unwrap();
        let diff = exact_volume(&t2, &g).unwrap() - exact_volume(&t1, &g).unwrap();
        assert_relative_eq!(diff, v, max_relative = 1e-10);
        let thin = WaveCapSpec::new(0.0, 0.25, 1e-9, &g).unwrap();
        assert!(exact_cap_volume(&thin, &g).unwrap() < 1e-12);
    }

    #[test]
    fn cap_distance_examples() {
        let g = geom();
        let cap = WaveCapSpec::new(0.0, 0.25, 0.05, &g).unwrap();
        assert_relative_eq!(exact_cap_distance(0.0.into(), &cap, &g).unwrap(), 0.25);
        let z = BoundaryPoint::new(0.5);
        let d = exact_cap_distance(z, &cap, &g).unwrap();
        let dp = point_distance(z, cap.y, cap.depth);
        assert!(d <= dp && d >= dp - cap.diameter(), "{d} vs {dp}");
        let tiny = WaveCapSpec::new(0.0, 0.25, 1e-10, &g).unwrap();
        assert_relative_eq!(exact_cap_distance(z, &tiny, &g).unwrap(), dp, max_relative = 1e-4);
    }

    #[test]
    fn cap_near_edge_is_rejected() {
        let g = geom();
        let cap = WaveCapSpec::new(0.9, 0.25, 0.05, &g).unwrap();
        assert!(exact_cap_volume(&cap, &g).is_err());
        assert!(WaveCapSpec::new(0.0, 0.5, 0.2, &g).is_err());
        assert!(WaveCapSpec::new(0.0, 0.0, 0.2, &g).is_err());
    }

    #[test]
    fn membership_predicate_agrees_with_union_of_disks() {
        let g = geom();
        let tau = TauFunction::new(0.2, vec![Cone::new(0.0, 0.35), Cone::new(-0.4, 0.3)], 0.6).unwrap();
        for i in 0..60 {
            for k in 0..20 {
                let (x, d) = (-1.3 + 2.6 * i as f64 / 59.0, 0.4 * k as f64 / 19.0);
                let strip = if x.abs() <= 1.0 { d <= 0.2 } else { (x.abs() - 1.0).hypot(d) <= 0.2 };
                let union = strip || x.hypot(d) <= 0.35 || (x + 0.4).hypot(d) <= 0.3;
                assert_eq!(in_domain_of_influence(&tau, &g, x, d), union, "at ({x}, {d})");
            }
        }
    }

    #[test]
    fn gridded_speed_interpolates() {
        let g = GriddedSpeed { x0: 0.0, depth0: 0.0, dx: 1.0, ddepth: 1.0, nx: 2, ndepth: 2, values: vec![1.0, 2.0, 3.0, 4.0] };
        assert_relative_eq!(g.sample(0.5, 0.5), 2.5);
        assert_relative_eq!(g.sample(-3.0, 0.0), 1.0);
        assert_relative_eq!(g.sample(9.0, 9.0), 4.0);
    }
}
