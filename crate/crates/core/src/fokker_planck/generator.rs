//! Finite-volume discretization of `𝔏φ = σΔφ - ⟨∇L, ∇φ⟩ = (σ/π) div(π ∇φ)`.
//!
//! With cell volume `v`, spacing `h` and `w_f` the Gibbs weight at the midpoint
//! of the face between nodes `i` and `j`,
//!
//! `(𝔏φ)_i = Σ_j c_ij (φ_j - φ_i)`, `c_ij = σ w_f / (π_i h²)`.
//!
//! Boundary faces carry no flux. Since `π_i v c_ij = σ w_f v / h²` is symmetric
//! in `i, j`, the operator is self-adjoint in `⟨φ, ψ⟩_π = Σ φ_i ψ_i π_i v`.

use std::sync::Arc;

use crate::exec::{self, Execution};
use crate::objective::Objective;

use super::grid::Grid;
use super::FpError;

/// `log π` values below `max log π - UNDERFLOW_GAP` are clamped.
pub const UNDERFLOW_GAP: f64 = 700.0;
/// Largest admissible fraction of clamped nodes.
pub const MAX_UNDERFLOW_FRACTION: f64 = 0.2;
/// `e^{-L/σ}` is used unscaled while its log stays inside this range.
const UNSCALED_LOG_RANGE: f64 = 600.0;

const ROWS_PER_BLOCK: usize = 512;

/// An interior face between nodes `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    /// `σ w_f v / h²`, the symmetric face conductance.
    pub conductance: f64,
}

/// The discrete generator with its Gibbs weights.
#[derive(Clone, Debug)]
pub struct Generator {
    grid: Grid,
    sigma: f64,
    /// Node weights `π_i = e^{-L(x_i)/σ - log_scale}`.
    pi: Arc<[f64]>,
    log_scale: f64,
    underflow_fraction: f64,
    faces: Vec<Face>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    coefs: Vec<f64>,
}

/// Assembles the generator for `obj` on `grid`.
pub fn build_generator<O: Objective + ?Sized>(grid: &Grid, obj: &O, sigma: f64) -> Result<Generator, FpError> {
    if obj.dim() != grid.dim() {
        return Err(FpError::DimensionMismatch { expected: grid.dim(), got: obj.dim() });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FpError::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    let n = grid.n_nodes();
    let d = grid.dim();
    let node_log: Vec<f64> = (0..n).map(|i| -obj.value(&grid.node_coords(i)) / sigma).collect();
    if node_log.iter().any(|x| x.is_nan()) {
        return Err(FpError::InvalidParameter("objective is NaN on the grid".into()));
    }
    let max_log = node_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_scale = if max_log.abs() <= UNSCALED_LOG_RANGE { 0.0 } else { max_log };
    let floor = max_log - UNDERFLOW_GAP;
    let clamped = node_log.iter().filter(|&&l| l < floor).count();
    let underflow_fraction = clamped as f64 / n as f64;
    if underflow_fraction > MAX_UNDERFLOW_FRACTION {
        return Err(FpError::WeightUnderflow { fraction: underflow_fraction });
    }
    let weight = |log: f64| (log.max(floor) - log_scale).exp();
    let pi: Vec<f64> = node_log.iter().map(|&l| weight(l)).collect();

    let vol = grid.cell_volume();
    let mut faces = Vec::new();
    for i in 0..n {
        let cell = grid.cell_of(i);
        let xi = grid.node_coords(i);
        for axis in 0..d {
            if cell[axis] + 1 == grid.n_cells()[axis] {
                continue;
            }
            let h = grid.spacing(axis);
            let mut mid = xi.clone();
            mid[axis] += 0.5 * h;
            let wf = weight(-obj.value(&mid) / sigma);
            faces.push(Face { a: i, b: i + grid.stride(axis), conductance: sigma * wf * vol / (h * h) });
        }
    }

    let mut neighbours: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * d); n];
    for f in &faces {
        neighbours[f.a].push((f.b, f.conductance / (pi[f.a] * vol)));
        neighbours[f.b].push((f.a, f.conductance / (pi[f.b] * vol)));
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut coefs = Vec::new();
    row_ptr.push(0);
    for mut row in neighbours {
        row.sort_by_key(|e| e.0);
        for (j, c) in row {
            cols.push(j);
            coefs.push(c);
        }
        row_ptr.push(cols.len());
    }
    Ok(Generator {
        grid: grid.clone(),
        sigma,
        pi: pi.into(),
        log_scale,
        underflow_fraction,
        faces,
        row_ptr,
        cols,
        coefs,
    })
}

impl Generator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_nodes(&self) -> usize {
        self.pi.len()
    }

    /// Node weights; see [`log_scale`](Self::log_scale).
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn pi_shared(&self) -> Arc<[f64]> {
        Arc::clone(&self.pi)
    }

    /// `π_i = e^{-L/σ - log_scale}`. Zero unless `e^{-L/σ}` would leave the
    /// floating-point range on the grid.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn underflow_fraction(&self) -> f64 {
        self.underflow_fraction
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Off-diagonal entries `(j, c_ij)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.coefs[r].iter().copied())
    }

    /// Diagonal entry `-Σ_j c_ij`.
    pub fn diagonal(&self, i: usize) -> f64 {
        -self.row(i).map(|(_, c)| c).sum::<f64>()
    }

    /// Widest index offset between coupled nodes.
    pub fn bandwidth(&self) -> usize {
        if self.grid.dim() == 1 {
            1
        } else {
            self.grid.n_cells()[0]
        }
    }

    /// `max_i Σ_j c_ij`; explicit Euler keeps `φ ≥ 0` for `dt` up to its inverse.
    pub fn max_rate(&self) -> f64 {
        (0..self.n_nodes()).map(|i| -self.diagonal(i)).fold(0.0, f64::max)
    }

    /// Stability limit of explicit Euler.
    pub fn cfl_limit(&self) -> f64 {
        1.0 / self.max_rate()
    }

    /// `out = 𝔏 phi`, evaluated in difference form so constants map to exactly 0.
    pub fn apply(&self, phi: &[f64], out: &mut [f64], execution: Execution) {
        assert_eq!(phi.len(), self.n_nodes());
        assert_eq!(out.len(), self.n_nodes());
        exec::for_each_chunk_mut(execution, out, ROWS_PER_BLOCK, |b, chunk| {
            for (k, o) in chunk.iter_mut().enumerate() {
                let i = b * ROWS_PER_BLOCK + k;
                let pi_ = phi[i];
                *o = self.row(i).map(|(j, c)| c * (phi[j] - pi_)).sum();
            }
        });
    }

    pub fn apply_vec(&self, phi: &[f64], execution: Execution) -> Vec<f64> {
        let mut out = vec![0.0; phi.len()];
        self.apply(phi, &mut out, execution);
        out
    }

    /// `⟨φ, ψ⟩_π = Σ φ_i ψ_i π_i v`.
    pub fn inner(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let v = self.grid.cell_volume();
        crate::stats::compensated_sum(phi.iter().zip(psi).zip(self.pi.iter()).map(|((a, b), p)| a * b * p * v))
    }

    /// `Σ_faces κ_f (φ_b - φ_a)(ψ_b - ψ_a)`, the discrete `σ∫⟨∇φ, ∇ψ⟩ dπ`.
    pub fn gradient_form(&self, phi: &[f64], psi: &[f64]) -> f64 {
        crate::stats::compensated_sum(
            self.faces.iter().map(|f| f.conductance * (phi[f.b] - phi[f.a]) * (psi[f.b] - psi[f.a])),
        )
    }

    /// Dense copy of the matrix (tests and small grids only).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, c) in self.row(i) {
                row[j] = c;
            }
            row[i] = self.diagonal(i);
        }
        m
    }
}
