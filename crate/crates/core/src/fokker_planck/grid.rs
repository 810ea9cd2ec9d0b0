//! Uniform cell-centered grids in one or two dimensions.

use serde::{Deserialize, Serialize};

use super::FpError;

/// Smallest admissible cell count per axis.
pub const MIN_CELLS: usize = 16;

/// Nodes sit at cell centers; node `ix + nx * iy` is cell `(ix, iy)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_cells: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n_cells: Vec<usize>) -> Result<Self, FpError> {
        let d = lo.len();
        if !(d == 1 || d == 2) || hi.len() != d || n_cells.len() != d {
            return Err(FpError::InvalidGrid("grids are 1D or 2D with matching bounds and cell counts".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h && l.is_finite() && h.is_finite())) {
            return Err(FpError::InvalidGrid("need finite lo < hi on every axis".into()));
        }
        if n_cells.iter().any(|&n| n < MIN_CELLS) {
            return Err(FpError::InvalidGrid(format!("need at least {MIN_CELLS} cells per axis")));
        }
        Ok(Self { lo, hi, n_cells })
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self, FpError> {
        Self::new(vec![lo], vec![hi], vec![n])
    }

    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self, FpError> {
        Self::new(vec![lo, lo], vec![hi, hi], vec![n, n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn n_cells(&self) -> &[usize] {
        &self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n_cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Stride between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n_cells[0]
        }
    }

    /// Per-axis cell indices of `node`.
    pub fn cell_of(&self, node: usize) -> [usize; 2] {
        let nx = self.n_cells[0];
        [node % nx, node / nx]
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let c = self.cell_of(node);
        (0..self.dim()).map(|a| self.lo[a] + (c[a] as f64 + 0.5) * self.spacing(a)).collect()
    }

    /// Flat `n_nodes × dim` node coordinates.
    pub fn all_coords(&self) -> Vec<f64> {
        (0..self.n_nodes()).flat_map(|i| self.node_coords(i)).collect()
    }

    /// Node whose cell contains `x`, or `None` outside the domain.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            let u = (x[a] - self.lo[a]) / self.spacing(a);
            if !(u >= 0.0 && x[a] <= self.hi[a]) {
                return None;
            }
            let i = (u.floor() as usize).min(self.n_cells[a] - 1);
            idx += i * stride;
            stride *= self.n_cells[a];
        }
        Some(idx)
    }

    /// Whether node `i` touches the domain boundary.
    pub fn is_boundary(&self, node: usize) -> bool {
        let c = self.cell_of(node);
        (0..self.dim()).any(|a| c[a] == 0 || c[a] + 1 == self.n_cells[a])
    }
}
