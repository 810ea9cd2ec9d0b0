//! Large-time behaviour of `φ_t`: convergence to a constant when `π` is
//! integrable, escape of mass from compact windows when it is not.

use serde::{Deserialize, Serialize};

use crate::objective::GrowthClass;
use crate::stats::compensated_sum;

use super::functionals::{mass, pi_domain_mass, window_mass};
use super::generator::Generator;
use super::stepping::WeightedField;
use super::FpError;

/// Fraction of the `φπ` mass in boundary cells above which a run counts as
/// having reached the truncation boundary.
pub const BOUNDARY_MASS_FLAG: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Integrability {
    Integrable,
    NonIntegrable,
    /// Classify from the objective's growth class and report without asserting.
    Probe {
        growth: GrowthClass,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub integrability: Integrability,
    /// Class implied by the growth test in probe mode.
    pub probe_classification: Option<Integrability>,
    pub t_final: f64,
    /// Grid quadrature of `π` (scaled units).
    pub pi_domain_mass: f64,
    /// `∫φ dπ / π(domain)`, the constant `φ` must approach in the integrable case.
    pub target: f64,
    /// π-weighted mean of `φ_{t_final}` over the window.
    pub fitted_constant: f64,
    pub max_abs_deviation: f64,
    pub relative_deviation: f64,
    /// `(t, ∫_Z φ_t dπ)` for every record.
    pub window_masses: Vec<(f64, f64)>,
    pub window_mass_decreasing: bool,
    /// Share of `π(domain)` carried by boundary cells (truncation tail proxy).
    pub boundary_pi_fraction: f64,
    /// Share of `∫φ dπ` in boundary cells at the final time.
    pub boundary_mass_fraction: f64,
    pub boundary_reached: bool,
}

/// Summarizes a recorded run over the window `Z = [lo, hi]`. The run must span
/// at least a decade of positive times.
///
/// `pi_mass` is `∫ e^{-L/σ}` in unscaled units (e.g. `√π` for `w²` on the
/// line); `None` uses the quadrature over the grid.
pub fn phi_limit_report(
    gen: &Generator,
    run: &[WeightedField],
    pi_mass: Option<f64>,
    integrability: Integrability,
    window: (&[f64], &[f64]),
) -> Result<LimitReport, FpError> {
    let positive: Vec<f64> = run.iter().map(|s| s.t).filter(|&t| t > 0.0).collect();
    let span = match (positive.first(), positive.last()) {
        (Some(&a), Some(&b)) => b / a,
        _ => 0.0,
    };
    if span < 10.0 * (1.0 - 1e-12) {
        return Err(FpError::WindowTooShort { span });
    }
    let last = run.last().expect("nonempty run");
    let g = gen.grid();
    let v = g.cell_volume();
    let (lo, hi) = window;
    let in_window: Vec<usize> = (0..g.n_nodes())
        .filter(|&i| {
            let x = g.node_coords(i);
            x.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
        })
        .collect();
    if in_window.is_empty() {
        return Err(FpError::InvalidParameter("window contains no grid nodes".into()));
    }
    let pi = gen.pi();
    let grid_pi_mass = pi_domain_mass(gen);
    let pi_mass = match pi_mass {
        Some(m) if m > 0.0 && m.is_finite() => m * (-gen.log_scale()).exp(),
        Some(m) => return Err(FpError::InvalidParameter(format!("pi mass {m} must be positive and finite"))),
        None => grid_pi_mass,
    };
    let total = mass(gen, &last.phi);
    let target = total / pi_mass;
    let w_pi = compensated_sum(in_window.iter().map(|&i| pi[i]));
    let fitted_constant = compensated_sum(in_window.iter().map(|&i| last.phi[i] * pi[i])) / w_pi;
    let max_abs_deviation = in_window.iter().map(|&i| (last.phi[i] - target).abs()).fold(0.0, f64::max);
    let window_masses: Vec<(f64, f64)> = run.iter().map(|s| (s.t, window_mass(gen, &s.phi, lo, hi))).collect();
    let later: Vec<f64> = window_masses.iter().filter(|(t, _)| *t > 0.0).map(|p| p.1).collect();
    let window_mass_decreasing = later.windows(2).all(|w| w[1] < w[0]);
    let boundary: Vec<usize> = (0..g.n_nodes()).filter(|&i| g.is_boundary(i)).collect();
    let boundary_pi_fraction = compensated_sum(boundary.iter().map(|&i| pi[i] * v)) / grid_pi_mass;
    let boundary_mass_fraction = compensated_sum(boundary.iter().map(|&i| last.phi[i] * pi[i] * v)) / total;
    let probe_classification = match integrability {
        Integrability::Probe { growth: GrowthClass::QuadraticGrowthCompactMin } => Some(Integrability::Integrable),
        Integrability::Probe { growth: GrowthClass::QuadraticGrowthUnboundedMin } => Some(Integrability::NonIntegrable),
        _ => None,
    };
    Ok(LimitReport {
        integrability,
        probe_classification,
        t_final: last.t,
        pi_domain_mass: grid_pi_mass,
        target,
        fitted_constant,
        max_abs_deviation,
        relative_deviation: max_abs_deviation / target,
        window_masses,
        window_mass_decreasing,
        boundary_pi_fraction,
        boundary_mass_fraction,
        boundary_reached: boundary_mass_fraction > BOUNDARY_MASS_FLAG,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::fokker_planck::{build_generator, evolve, Grid, Schedule};
    use crate::objective::{Flat, SquaredNorm};

    #[test]
    fn stationary_start_stays_constant() {
        let g = Grid::line(-6.0, 6.0, 96).unwrap();
        let gen = build_generator(&g, &SquaredNorm::new(1, 1.0), 1.0).unwrap();
        let c = 1.0 / pi_domain_mass(&gen);
        let init = WeightedField::new(&gen, vec![c; 96], 0.0).unwrap();
        let mut run = Vec::new();
        evolve(&gen, init, &Schedule::new(vec![1.0, 10.0]), Execution::Sequential, |s| run.push(s.clone())).unwrap();
        let r = phi_limit_report(&gen, &run, None, Integrability::Integrable, (&[-1.0], &[1.0])).unwrap();
        assert!(r.relative_deviation < 1e-13, "{r:?}");
        assert!((r.target - c).abs() < 1e-13 * c);
    }

    #[test]
    fn short_run_is_rejected() {
        let g = Grid::line(-6.0, 6.0, 32).unwrap();
        let gen = build_generator(&g, &Flat::new(1), 1.0).unwrap();
        let s = WeightedField::new(&gen, vec![1.0; 32], 1.0).unwrap();
        let mut t = s.clone();
        t.t = 5.0;
        assert!(matches!(
            phi_limit_report(&gen, &[s, t], None, Integrability::NonIntegrable, (&[-1.0], &[1.0])),
            Err(FpError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn probe_classification_follows_growth() {
        let g = Grid::line(-6.0, 6.0, 32).unwrap();
        let gen = build_generator(&g, &Flat::new(1), 1.0).unwrap();
        let mut a = WeightedField::new(&gen, vec![1.0; 32], 1.0).unwrap();
        let b = a.clone();
        a.t = 10.0;
        let r = phi_limit_report(
            &gen,
            &[b, a],
            None,
            Integrability::Probe { growth: GrowthClass::QuadraticGrowthUnboundedMin },
            (&[-1.0], &[1.0]),
        )
        .unwrap();
        assert_eq!(r.probe_classification, Some(Integrability::NonIntegrable));
        assert!(!r.window_mass_decreasing);
    }
}
