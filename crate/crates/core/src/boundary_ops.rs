//! Discrete boundary operators: Gram matrix, the time operators `J` and `R`,
//! the connecting operator `[K]` and masking by a space-time window.
//!
//! With `A1 = (φ_k, JΛφ_j)`, `A2 = (φ_k, RΛφ_j)` and `A3 = (φ_k, RJφ_j)`
//! the connecting operator in basis coordinates is
//! `[K] = G⁻¹A1 - (G⁻¹A2)(G⁻¹A3)` ([`ConnectingForm::Projected`]).
//! The default [`ConnectingForm::Adjoint`] uses `RΛ^T R = (Λ^T)*` instead:
//! `[K] = G⁻¹(A1 - Bᵀ)` with `B_kj = (Λφ_k, Jφ_j)` on `(0, T)` and
//! `Jψ(t) = ½ ∫_t^T ψ`, so `RJφ_j` is never projected onto the basis.
//!
//! `A1` and `A2` are evaluated by moving `J` and `R` onto the analytic basis
//! function, so traces are only ever integrated against smooth weights on
//! the receiver grid and never interpolated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_space_time_support, BoundaryPoint, TauFunction};
use crate::wave_sim::basis::{ReceiverGrid, SourceBasis, UniformGrid};
use crate::wave_sim::dataset::{DatasetReader, NtDDataset};

/// `∫_lo^hi exp(-a (s - c)²) ds`.
pub fn gaussian_integral(a: f64, c: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let r = a.sqrt();
    0.5 * (std::f64::consts::PI / a).sqrt() * (libm::erf(r * (hi - c)) - libm::erf(r * (lo - c)))
}

/// Weights `w` with `Σ w_l f(g_l) = ∫_lo^hi` of the piecewise linear
/// interpolant of the samples. The interval is clipped to the grid.
pub fn interval_weights(grid: &UniformGrid, lo: f64, hi: f64) -> Vec<f64> {
    let n = grid.count;
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    let lo = lo.max(grid.first());
    let hi = hi.min(grid.last());
    if hi <= lo {
        return w;
    }
    let h = grid.step;
    let first = (((lo - grid.origin) / h).floor().max(0.0) as usize).min(n - 2);
    let last = (((hi - grid.origin) / h).ceil().max(1.0) as usize).min(n - 1);
    for l in first..last {
        let (a, b) = (grid.point(l), grid.point(l + 1));
        let (ta, tb) = (((lo - a) / h).clamp(0.0, 1.0), ((hi - a) / h).clamp(0.0, 1.0));
        if tb <= ta || b <= lo || a >= hi {
            continue;
        }
        let quad = 0.5 * (tb * tb - ta * ta);
        w[l] += h * (tb - ta - quad);
        w[l + 1] += h * quad;
    }
    w
}

fn interpolate(grid: &UniformGrid, samples: &[f64], t: f64) -> f64 {
    let n = grid.count;
    if n == 1 {
        return samples[0];
    }
    let f = ((t - grid.origin) / grid.step).clamp(0.0, (n - 1) as f64);
    let l = (f.floor() as usize).min(n - 2);
    let th = f - l as f64;
    (1.0 - th) * samples[l] + th * samples[l + 1]
}

/// `Jf(t) = ½ ∫_t^{2T-t} f(s) ds` at every grid time in `[0, T]`, using the
/// trapezoid rule on the piecewise linear interpolant of the samples.
/// Returns `(times, values)`.
pub fn time_integrate_j(grid: &UniformGrid, samples: &[f64], horizon: f64) -> (Vec<f64>, Vec<f64>) {
    // cumulative integral at grid nodes
    let mut cum = vec![0.0; grid.count];
    for l in 1..grid.count {
        cum[l] = cum[l - 1] + 0.5 * grid.step * (samples[l - 1] + samples[l]);
    }
    let antiderivative = |t: f64| -> f64 {
        let n = grid.count;
        let f = ((t - grid.origin) / grid.step).clamp(0.0, (n - 1) as f64);
        let l = (f.floor() as usize).min(n.saturating_sub(2));
        let th = f - l as f64;
        if n < 2 {
            return 0.0;
        }
        let (a, b) = (samples[l], samples[l + 1]);
        cum[l] + grid.step * (a * th + 0.5 * (b - a) * th * th)
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for l in 0..grid.count {
        let t = grid.point(l);
        if t > horizon + 1e-12 * horizon {
            break;
        }
        times.push(t);
        values.push(0.5 * (antiderivative(2.0 * horizon - t) - antiderivative(t)));
    }
    (times, values)
}

/// `Rf(t) = f(T - t)` at every grid time in `[0, T]`. Exact when the grid is
/// symmetric about `T/2`, linear interpolation otherwise.
pub fn time_reverse_r(grid: &UniformGrid, samples: &[f64], horizon: f64) -> (Vec<f64>, Vec<f64>) {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for l in 0..grid.count {
        let t = grid.point(l);
        if t > horizon + 1e-12 * horizon {
            break;
        }
        times.push(t);
        let tr = horizon - t;
        let v = match grid.index_of(tr, 1e-9) {
            Some(m) => samples[m],
            None => interpolate(grid, samples, tr),
        };
        values.push(v);
    }
    (times, values)
}

fn time_gram(basis: &SourceBasis) -> DMatrix<f64> {
    let rule = basis.time_rule(basis.horizon);
    let n = basis.times.count;
    let vals: Vec<Vec<f64>> = (0..n).map(|i| rule.nodes.iter().map(|&t| basis.time_factor(i, t)).collect()).collect();
    DMatrix::from_fn(n, n, |a, b| rule.weights.iter().zip(vals[a].iter().zip(&vals[b])).map(|(w, (x, y))| w * x * y).sum())
}

fn space_gram(basis: &SourceBasis) -> DMatrix<f64> {
    let rule = basis.space_rule();
    let n = basis.positions.count;
    let vals: Vec<Vec<f64>> =
        (0..n).map(|j| rule.nodes.iter().map(|&x| basis.space_factor(j, x)).collect()).collect();
    DMatrix::from_fn(n, n, |a, b| rule.weights.iter().zip(vals[a].iter().zip(&vals[b])).map(|(w, (x, y))| w * x * y).sum())
}

/// `C² (T ⊗ X)` in the basis index layout `i · N_x + j`.
fn kron_scaled(time: &DMatrix<f64>, space: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let (nt, nx) = (time.nrows(), space.nrows());
    DMatrix::from_fn(nt * nx, nt * nx, |r, c| {
        let (i, j) = (r / nx, r % nx);
        let (k, l) = (c / nx, c % nx);
        scale * time[(i, k)] * space[(j, l)]
    })
}

/// `G_{kj} = (φ_k, φ_j)` with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Numerical("Gram matrix is not positive definite".into()))?;
        Ok(Self { matrix, chol })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// `‖G - Gᵀ‖_F / ‖G‖_F`.
    pub fn asymmetry(&self) -> f64 {
        relative_asymmetry(&self.matrix)
    }
}

pub fn gram_matrix(basis: &SourceBasis) -> Result<GramMatrix> {
    GramMatrix::from_matrix(kron_scaled(&time_gram(basis), &space_gram(basis), basis.norm * basis.norm))
}

/// `‖A - Aᵀ‖_F / ‖A‖_F`, zero for the zero matrix.
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// `(φ_k, g)` for samples of `g` on the receiver grid restricted to
/// `(0, T) × Γ`; samples are laid out `(l, k)`.
pub fn basis_moments(basis: &SourceBasis, receivers: &ReceiverGrid, samples: &[f64]) -> Result<DVector<f64>> {
    if samples.len() != receivers.len() {
        return Err(Error::Dimension(format!("{} samples on a grid of {}", samples.len(), receivers.len())));
    }
    let tw = interval_weights(&receivers.times, 0.0, basis.horizon);
    let time_table = DMatrix::from_fn(basis.times.count, receivers.times.count, |i, l| {
        basis.norm * tw[l] * basis.time_factor(i, receivers.times.point(l))
    });
    let space = space_weights(basis, receivers);
    let u = DMatrix::from_row_slice(receivers.times.count, receivers.positions.count, samples);
    Ok(flatten(&(time_table * u * space)))
}

/// Basis coefficients of receiver-grid samples: solves `G c = (φ_k, g)`.
pub fn project_to_basis(
    gram: &GramMatrix,
    basis: &SourceBasis,
    receivers: &ReceiverGrid,
    samples: &[f64],
) -> Result<DVector<f64>> {
    Ok(gram.solve(&basis_moments(basis, receivers, samples)?))
}

/// `X[k, j] = w_k χ_j(x_k)`: trapezoid pairing of receiver samples with the
/// space factors over `Γ`.
fn space_weights(basis: &SourceBasis, receivers: &ReceiverGrid) -> DMatrix<f64> {
    let w = interval_weights(&receivers.positions, -basis.half_width, basis.half_width);
    DMatrix::from_fn(receivers.positions.count, basis.positions.count, |k, j| {
        w[k] * basis.space_factor(j, receivers.positions.point(k))
    })
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    // row-major over (time index, position index)
    DVector::from_iterator(m.nrows() * m.ncols(), (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])))
}

/// `(φ_k, b)` for `b(t, x) = T - t`.
pub fn b_moments(basis: &SourceBasis) -> DVector<f64> {
    let t_rule = basis.time_rule(basis.horizon);
    let x_rule = basis.space_rule();
    let tm: Vec<f64> =
        (0..basis.times.count).map(|i| t_rule.integrate(|t| (basis.horizon - t) * basis.time_factor(i, t))).collect();
    let xm: Vec<f64> = (0..basis.positions.count).map(|j| x_rule.integrate(|x| basis.space_factor(j, x))).collect();
    DVector::from_iterator(basis.len(), tm.iter().flat_map(|a| xm.iter().map(move |b| basis.norm * a * b)))
}

/// Per-source trace processing shared by the in-memory and streaming paths.
struct TraceKernel {
    /// `C w_l J*ψ_i(t_l)` over `[0, 2T]`.
    j_table: DMatrix<f64>,
    /// `C w_l ψ_i(T - t_l)` over `[0, T]`.
    r_table: DMatrix<f64>,
    /// `C w_l Jψ_i(t_l)` over `[0, T]`.
    jf_table: DMatrix<f64>,
    space: DMatrix<f64>,
    nt: usize,
    nx: usize,
}

impl TraceKernel {
    fn new(basis: &SourceBasis, receivers: &ReceiverGrid) -> Self {
        let horizon = basis.horizon;
        let a = basis.a_t;
        let w2 = interval_weights(&receivers.times, 0.0, 2.0 * horizon);
        let w1 = interval_weights(&receivers.times, 0.0, horizon);
        let (nts, ntr) = (basis.times.count, receivers.times.count);
        // (Jf, g) = ∫_0^{2T} f(s) · ½ ∫_0^{min(s, 2T - s)} g(t) dt ds
        let j_table = DMatrix::from_fn(nts, ntr, |i, l| {
            let s = receivers.times.point(l);
            let upper = s.min(2.0 * horizon - s).min(horizon);
            basis.norm * w2[l] * 0.5 * gaussian_integral(a, basis.times.point(i), 0.0, upper)
        });
        // (Rf, g) = ∫_0^T f(s) g(T - s) ds
        let r_table = DMatrix::from_fn(nts, ntr, |i, l| {
            let s = receivers.times.point(l);
            basis.norm * w1[l] * basis.time_factor(i, horizon - s)
        });
        // Jψ_i(t) = ½ ∫_t^T ψ_i on (0, T)
        let jf_table = DMatrix::from_fn(nts, ntr, |i, l| {
            let t = receivers.times.point(l);
            basis.norm * w1[l] * 0.5 * gaussian_integral(a, basis.times.point(i), t, horizon)
        });
        Self { j_table, r_table, jf_table, space: space_weights(basis, receivers), nt: ntr, nx: receivers.positions.count }
    }

    fn columns(&self, trace: &[f64]) -> [DVector<f64>; 3] {
        let u = DMatrix::from_row_slice(self.nt, self.nx, trace);
        let v = u * &self.space;
        [flatten(&(&self.j_table * &v)), flatten(&(&self.r_table * &v)), flatten(&(&self.jf_table * &v))]
    }
}

/// `(φ_k, RJφ_j)`; separable, with `RJψ_i(t) = ½ ∫_{T-t}^T ψ_i`.
pub fn rj_moments(basis: &SourceBasis) -> DMatrix<f64> {
    let rule = basis.time_rule(basis.horizon);
    let horizon = basis.horizon;
    let n = basis.times.count;
    let time = DMatrix::from_fn(n, n, |k, i| {
        let c = basis.times.point(i);
        rule.integrate(|t| basis.time_factor(k, t) * 0.5 * gaussian_integral(basis.a_t, c, horizon - t, horizon))
    });
    kron_scaled(&time, &space_gram(basis), basis.norm * basis.norm)
}

/// Discrete connecting operator together with the data it was built from.
#[derive(Clone, Debug)]
pub struct ConnectingOperator {
    /// `[K]` in basis coordinates.
    pub k: DMatrix<f64>,
    pub gram: GramMatrix,
    /// Basis coefficients of `b(t, x) = T - t`.
    pub b_coeffs: DVector<f64>,
    pub basis: SourceBasis,
    pub dataset_hash: String,
}

impl ConnectingOperator {
    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `G [K]`: the Gram-weighted form `(φ_k, K φ_j)`.
    pub fn weighted(&self) -> DMatrix<f64> {
        &self.gram.matrix * &self.k
    }

    /// `(f, K h)` for basis coefficient vectors.
    pub fn pairing(&self, f: &DVector<f64>, h: &DVector<f64>) -> f64 {
        f.dot(&(&self.gram.matrix * (&self.k * h)))
    }

    pub fn symmetry_report(&self) -> SymmetryReport {
        let weighted = self.weighted();
        let sym = 0.5 * (&weighted + weighted.transpose());
        let min_eig = sym.clone().symmetric_eigenvalues().min();
        SymmetryReport {
            coordinate_asymmetry: relative_asymmetry(&self.k),
            weighted_asymmetry: relative_asymmetry(&weighted),
            weighted_min_eigenvalue: min_eig,
            weighted_norm: sym.norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `‖K - Kᵀ‖_F / ‖K‖_F` for the coordinate matrix `[K]`.
    pub coordinate_asymmetry: f64,
    /// The same for `G[K]`, the matrix of the bilinear form.
    pub weighted_asymmetry: f64,
    pub weighted_min_eigenvalue: f64,
    pub weighted_norm: f64,
}

/// How the term `RΛ^T RJ` of the connecting operator is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectingForm {
    /// `[RΛ^T][RJ]`: `RJφ_j` is projected onto the basis first.
    Projected,
    /// `(φ_k, RΛ^T RJφ_j) = (Λ^T φ_k, Jφ_j)`: the trace of `φ_k` is paired
    /// with the analytic `Jφ_j` and no projection is needed.
    #[default]
    Adjoint,
}

/// Trace moments of a dataset: `A1`, `A2` and `B = (Λφ_k, Jφ_j)`.
struct Moments {
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    /// Column `j` holds `(Λφ_j, Jφ_k)` over `k`, i.e. `Bᵀ`.
    bt: DMatrix<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self { a1: DMatrix::zeros(n, n), a2: DMatrix::zeros(n, n), bt: DMatrix::zeros(n, n) }
    }

    fn set(&mut self, j: usize, cols: [DVector<f64>; 3]) {
        let [c1, c2, c3] = cols;
        self.a1.set_column(j, &c1);
        self.a2.set_column(j, &c2);
        self.bt.set_column(j, &c3);
    }
}

fn finish_operator(
    basis: &SourceBasis,
    moments: Moments,
    form: ConnectingForm,
    dataset_hash: String,
) -> Result<ConnectingOperator> {
    let gram = gram_matrix(basis)?;
    let Moments { a1, a2, bt } = moments;
    let k = match form {
        ConnectingForm::Projected => {
            let a3 = rj_moments(basis);
            let k1 = gram.solve_matrix(&a1);
            let k2 = gram.solve_matrix(&a2);
            let k3 = gram.solve_matrix(&a3);
            k1 - k2 * k3
        }
        ConnectingForm::Adjoint => gram.solve_matrix(&(a1 - bt.transpose())),
    };
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("connecting operator has non-finite entries".into()));
    }
    let b_coeffs = gram.solve(&b_moments(basis));
    Ok(ConnectingOperator { k, gram, b_coeffs, basis: basis.clone(), dataset_hash })
}

fn check_grids(basis: &SourceBasis, receivers: &ReceiverGrid) -> Result<()> {
    let two_t = 2.0 * basis.horizon;
    if receivers.times.last() < two_t - 1e-9 * two_t {
        return Err(Error::Config(format!(
            "receiver times end at {} before 2T = {two_t}",
            receivers.times.last()
        )));
    }
    Ok(())
}

/// Assembles `[K]` from an in-memory dataset with the default form.
pub fn assemble_connecting(dataset: &NtDDataset) -> Result<ConnectingOperator> {
    assemble_connecting_with(dataset, ConnectingForm::default())
}

/// Assembles `[K]` from an in-memory dataset, columns in parallel.
pub fn assemble_connecting_with(dataset: &NtDDataset, form: ConnectingForm) -> Result<ConnectingOperator> {
    let basis = dataset.basis();
    let receivers = dataset.receivers();
    check_grids(basis, receivers)?;
    let kernel = TraceKernel::new(basis, receivers);
    let cols: Vec<[DVector<f64>; 3]> =
        (0..dataset.len()).into_par_iter().map(|j| kernel.columns(dataset.trace(j))).collect();
    let mut moments = Moments::zeros(basis.len());
    for (j, c) in cols.into_iter().enumerate() {
        moments.set(j, c);
    }
    finish_operator(basis, moments, form, dataset.content_hash()?)
}

/// Assembles `[K]` while streaming traces from disk.
pub fn assemble_connecting_from_file(
    path: &Path,
    dataset_hash: String,
    form: ConnectingForm,
) -> Result<ConnectingOperator> {
    let mut reader = DatasetReader::open(path)?;
    let basis = reader.header.basis.clone();
    let receivers = reader.header.receivers;
    check_grids(&basis, &receivers)?;
    let kernel = TraceKernel::new(&basis, &receivers);
    let n = basis.len();
    let m = reader.header.samples_per_source;
    let mut moments = Moments::zeros(n);
    let chunk = 4 * rayon::current_num_threads().max(1);
    let mut next = 0;
    while next < n {
        let count = chunk.min(n - next);
        let mut block = vec![0.0; count * m];
        for trace in block.chunks_mut(m) {
            if !reader.next_trace(trace)? {
                return Err(Error::Format("dataset ends early".into()));
            }
        }
        let cols: Vec<[DVector<f64>; 3]> = block.par_chunks(m).map(|t| kernel.columns(t)).collect();
        for (off, c) in cols.into_iter().enumerate() {
            moments.set(next + off, c);
        }
        next += count;
    }
    finish_operator(&basis, moments, form, dataset_hash)
}

/// How the window `S_τ` is imposed on `[K]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Keep the basis functions whose centre lies in `S_τ`.
    #[default]
    Center,
    /// Use the `L²` projection onto `S_τ` expressed in the basis.
    Projection,
}

/// `mask[idx]` is true when the centre of `φ_idx` lies in `S_τ`.
pub fn support_mask(basis: &SourceBasis, tau: &TauFunction) -> Vec<bool> {
    (0..basis.len())
        .map(|idx| {
            let (t, x) = basis.center(idx);
            in_space_time_support(tau, t, BoundaryPoint::new(x))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MaskedOperator {
    /// `[K]` with masked rows and columns zeroed, or `[P][K][P]`.
    pub k_tau: DMatrix<f64>,
    pub mask: Vec<bool>,
    /// Basis form of the projection onto `S_τ` when [`MaskMode::Projection`]
    /// is used.
    pub projection: Option<DMatrix<f64>>,
    pub tau: TauFunction,
}

impl MaskedOperator {
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn mask_operator(op: &ConnectingOperator, tau: &TauFunction) -> MaskedOperator {
    let mask = support_mask(&op.basis, tau);
    let k_tau = mask_matrix(&op.k, &mask);
    MaskedOperator { k_tau, mask, projection: None, tau: tau.clone() }
}

/// Zeroes every row and column whose mask entry is false.
pub fn mask_matrix(k: &DMatrix<f64>, mask: &[bool]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |r, c| if mask[r] && mask[c] { k[(r, c)] } else { 0.0 })
}

/// `[P_τ][K][P_τ]` with `[P_τ] = G⁻¹ (φ_k, 1_{S_τ} φ_j)`.
pub fn project_operator(op: &ConnectingOperator, tau: &TauFunction) -> Result<MaskedOperator> {
    let basis = &op.basis;
    let moments = window_gram(basis, tau);
    let p = op.gram.solve_matrix(&moments);
    let k_tau = &p * &op.k * &p;
    Ok(MaskedOperator { k_tau, mask: support_mask(basis, tau), projection: Some(p), tau: tau.clone() })
}

/// `(φ_k, 1_{S_τ} φ_j)`; the time integral over `(T - τ(x), T)` is done in
/// closed form at every spatial quadrature node.
fn window_gram(basis: &SourceBasis, tau: &TauFunction) -> DMatrix<f64> {
    let rule = basis.space_rule();
    let (nt, nx) = (basis.times.count, basis.positions.count);
    let a = basis.a_t;
    let horizon = basis.horizon;
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let lo = (horizon - tau.eval(BoundaryPoint::new(x))).max(0.0);
        if lo >= horizon {
            continue;
        }
        let chi: Vec<f64> = (0..nx).map(|j| basis.space_factor(j, x)).collect();
        // ψ_i ψ_k = exp(-a (ti - tk)²/2) exp(-2a (t - (ti + tk)/2)²)
        let mut time = vec![0.0; nt * nt];
        for i in 0..nt {
            for k in 0..nt {
                let (ti, tk) = (basis.times.point(i), basis.times.point(k));
                time[i * nt + k] = (-0.5 * a * (ti - tk).powi(2)).exp()
                    * gaussian_integral(2.0 * a, 0.5 * (ti + tk), lo, horizon);
            }
        }
        for j in 0..nx {
            if chi[j] < 1e-17 {
                continue;
            }
            for l in 0..nx {
                let s = w * chi[j] * chi[l];
                if s.abs() < 1e-300 {
                    continue;
                }
                for i in 0..nt {
                    for k in 0..nt {
                        m[(i * nx + j, k * nx + l)] += s * time[i * nt + k];
                    }
                }
            }
        }
    }
    m * (basis.norm * basis.norm)
}

/// `mask ⊙ b_coeffs`, or `[P_τ] b_coeffs` for a projected operator.
pub fn rhs_vector(op: &ConnectingOperator, masked: &MaskedOperator) -> DVector<f64> {
    match &masked.projection {
        Some(p) => p * &op.b_coeffs,
        None => DVector::from_iterator(
            op.b_coeffs.len(),
            op.b_coeffs.iter().zip(&masked.mask).map(|(&b, &m)| if m { b } else { 0.0 }),
        ),
    }
}

pub const OPERATOR_MAGIC: &[u8; 5] = b"BCOP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub dataset_hash: String,
    pub basis_descriptor: String,
    pub basis: SourceBasis,
    pub size: usize,
}

/// Writes `G`, `[K]` and `b_coeffs` as little-endian row-major blocks.
pub fn save_operator(op: &ConnectingOperator, path: &Path) -> Result<()> {
    let header = OperatorHeader {
        dataset_hash: op.dataset_hash.clone(),
        basis_descriptor: op.basis.descriptor(),
        basis: op.basis.clone(),
        size: op.len(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(format!("cannot encode operator header: {e}")))?;
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(OPERATOR_MAGIC)?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        for m in [&op.gram.matrix, &op.k] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    w.write_all(&m[(r, c)].to_le_bytes())?;
                }
            }
        }
        for v in op.b_coeffs.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Loads a cached operator, checking it was built from `dataset_hash`.
pub fn load_operator(path: &Path, dataset_hash: &str) -> Result<ConnectingOperator> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| Error::Format("operator cache too short".into()))?;
    if &magic != OPERATOR_MAGIC {
        return Err(Error::Format("not a BCOP1 operator cache".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 32 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("operator header is not UTF-8".into()))?;
    let header: OperatorHeader =
        toml::from_str(&text).map_err(|e| Error::Format(format!("bad operator header: {e}")))?;
    if header.dataset_hash != dataset_hash {
        return Err(Error::CacheMismatch(format!(
            "operator was built from dataset {} but the current dataset is {dataset_hash}",
            header.dataset_hash
        )));
    }
    if header.basis_descriptor != header.basis.descriptor() || header.size != header.basis.len() {
        return Err(Error::CacheMismatch("operator header is inconsistent with its basis".into()));
    }
    let n = header.size;
    let mut read_block = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * count];
        r.read_exact(&mut buf).map_err(|_| Error::Format("operator cache truncated".into()))?;
        Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    };
    let g = DMatrix::from_row_slice(n, n, &read_block(n * n)?);
    let k = DMatrix::from_row_slice(n, n, &read_block(n * n)?);
    let b = DVector::from_vec(read_block(n)?);
    Ok(ConnectingOperator {
        k,
        gram: GramMatrix::from_matrix(g)?,
        b_coeffs: b,
        basis: header.basis,
        dataset_hash: header.dataset_hash,
    })
}
