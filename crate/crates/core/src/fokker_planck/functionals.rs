//! π-weighted norms, the Dirichlet form and the higher-order functionals `𝔉_k`.
//!
//! Integrals use the cell-midpoint rule `∫ f dπ ≈ Σ f_i π_i v`, the same
//! quadrature that defines discrete mass, so conservation is exact.

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::stats::compensated_sum;

use super::generator::Generator;
use super::stepping::WeightedField;
use super::FpError;

/// Highest supported order of `𝔉_k`.
pub const MAX_ORDER: u32 = 6;

/// `∫ φ² dπ`, the squared weighted `L²` norm.
pub fn weighted_l2_norm(gen: &Generator, state: &WeightedField) -> f64 {
    gen.inner(&state.phi, &state.phi)
}

/// `-⟨φ, 𝔏φ⟩_π = σ ∫ ‖∇φ‖² dπ`, summed over faces.
pub fn weighted_dirichlet(gen: &Generator, state: &WeightedField) -> f64 {
    gen.gradient_form(&state.phi, &state.phi)
}

/// `∫ φ dπ` over the whole grid.
pub fn mass(gen: &Generator, phi: &[f64]) -> f64 {
    let v = gen.grid().cell_volume();
    compensated_sum(phi.iter().zip(gen.pi()).map(|(f, p)| f * p * v))
}

/// `∫_Z φ dπ` over nodes whose centers lie in the box `Z = [lo, hi]`.
pub fn window_mass(gen: &Generator, phi: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let g = gen.grid();
    let v = g.cell_volume();
    compensated_sum((0..g.n_nodes()).filter_map(|i| {
        let x = g.node_coords(i);
        let inside = x.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h);
        inside.then(|| phi[i] * gen.pi()[i] * v)
    }))
}

/// `π` mass of the truncated domain, `Σ π_i v`.
pub fn pi_domain_mass(gen: &Generator) -> f64 {
    mass(gen, &vec![1.0; gen.n_nodes()])
}

#[derive(Clone, Debug, PartialEq)]
pub struct FkResult {
    pub k: u32,
    /// `𝔏^{⌊k/2⌋} φ`; for odd `k` the functional is the gradient of this field.
    pub field: Vec<f64>,
    /// `‖𝔉_k φ‖²_π`.
    pub norm_sq: f64,
}

/// `𝔉_k = 𝔏^{k/2}` for even `k`, `∇𝔏^{(k-1)/2}` for odd `k`.
pub fn apply_fk(gen: &Generator, state: &WeightedField, k: u32, execution: Execution) -> Result<FkResult, FpError> {
    if k == 0 {
        return Err(FpError::InvalidParameter("order k must be >= 1".into()));
    }
    if k > MAX_ORDER {
        return Err(FpError::OrderTooHigh(k));
    }
    let mut field = state.phi.clone();
    for _ in 0..k / 2 {
        field = gen.apply_vec(&field, execution);
    }
    let norm_sq = if k.is_multiple_of(2) { gen.inner(&field, &field) } else { gen.gradient_form(&field, &field) };
    Ok(FkResult { k, field, norm_sq })
}

/// One row of the field time series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpRecord {
    pub t: f64,
    pub phi_l2_pi: f64,
    pub dirichlet_pi: f64,
    pub fk2_norm: f64,
    pub fk3_norm: f64,
    pub mass_window: f64,
    pub mass_total: f64,
    pub phi_min: f64,
}

impl FpRecord {
    pub fn measure(gen: &Generator, state: &WeightedField, window: (&[f64], &[f64]), execution: Execution) -> Self {
        let lphi = gen.apply_vec(&state.phi, execution);
        Self {
            t: state.t,
            phi_l2_pi: weighted_l2_norm(gen, state),
            dirichlet_pi: weighted_dirichlet(gen, state),
            fk2_norm: gen.inner(&lphi, &lphi),
            fk3_norm: gen.gradient_form(&lphi, &lphi),
            mass_window: window_mass(gen, &state.phi, window.0, window.1),
            mass_total: mass(gen, &state.phi),
            phi_min: state.min(),
        }
    }
}
