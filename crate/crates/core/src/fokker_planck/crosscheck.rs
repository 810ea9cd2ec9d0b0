//! Monte Carlo ensemble versus Fokker–Planck solution on coarse cells.

use serde::{Deserialize, Serialize};

use crate::sde_sim::EnsembleSnapshot;
use crate::stats::compensated_sum;

use super::generator::Generator;
use super::stepping::WeightedField;
use super::FpError;

/// Cells with fewer expected particles are left out of the chi-square sum.
pub const MIN_EXPECTED: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiscrepancy {
    pub center: Vec<f64>,
    pub observed: u64,
    pub expected: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub t_snapshot: f64,
    pub t_field: f64,
    pub n_paths: usize,
    pub coarsen: usize,
    /// Particles that left the grid.
    pub outside: u64,
    /// `½ Σ |n_c/n - p_c|` over coarse cells plus the outside share.
    pub total_variation: f64,
    pub chi_square: f64,
    /// Number of cells with expected count at least [`MIN_EXPECTED`].
    pub dof: usize,
    /// `dof + 3 √(2 dof)`.
    pub threshold: f64,
    pub max_abs_z: f64,
    pub passed: bool,
    pub cells: Vec<CellDiscrepancy>,
}

/// Bins the snapshot on cells `coarsen` times wider than the grid's and tests
/// the counts against `n · ∫_cell φπ / ∫ φπ`.
pub fn density_crosscheck(
    gen: &Generator,
    snapshot: &EnsembleSnapshot,
    state: &WeightedField,
    dt: f64,
    coarsen: usize,
) -> Result<CrosscheckReport, FpError> {
    let g = gen.grid();
    let d = g.dim();
    if snapshot.dim != d {
        return Err(FpError::DimensionMismatch { expected: d, got: snapshot.dim });
    }
    if snapshot.diverged {
        return Err(FpError::InvalidParameter("snapshot contains diverged paths".into()));
    }
    if !(dt > 0.0) || (snapshot.t - state.t).abs() > dt * (1.0 + 1e-9) {
        return Err(FpError::TimeMismatch { snapshot: snapshot.t, field: state.t, dt });
    }
    if coarsen == 0 || g.n_cells().iter().any(|n| n % coarsen != 0) {
        return Err(FpError::InvalidParameter(format!("coarsening factor {coarsen} must divide every cell count")));
    }
    let nc: Vec<usize> = g.n_cells().iter().map(|n| n / coarsen).collect();
    let n_coarse: usize = nc.iter().product();
    let coarse_of = |node: usize| {
        let c = g.cell_of(node);
        let mut idx = c[0] / coarsen;
        if d == 2 {
            idx += nc[0] * (c[1] / coarsen);
        }
        idx
    };
    let v = g.cell_volume();
    let pi = gen.pi();
    let mut cell_mass = vec![Vec::new(); n_coarse];
    for i in 0..g.n_nodes() {
        cell_mass[coarse_of(i)].push(state.phi[i] * pi[i] * v);
    }
    let masses: Vec<f64> = cell_mass.into_iter().map(compensated_sum).collect();
    let total = compensated_sum(masses.iter().copied());
    if !(total > 0.0) {
        return Err(FpError::InvalidParameter("field has no mass".into()));
    }
    let mut counts = vec![0u64; n_coarse];
    let mut outside = 0u64;
    for row in snapshot.rows() {
        match g.locate(row) {
            Some(node) => counts[coarse_of(node)] += 1,
            None => outside += 1,
        }
    }
    let n = snapshot.n_paths();
    let nf = n as f64;
    let mut tv = outside as f64 / nf;
    let mut chi_square = 0.0;
    let mut dof = 0;
    let mut max_abs_z: f64 = 0.0;
    let mut cells = Vec::with_capacity(n_coarse);
    let h: Vec<f64> = (0..d).map(|a| g.spacing(a) * coarsen as f64).collect();
    for c in 0..n_coarse {
        let p = masses[c] / total;
        let expected = nf * p;
        let observed = counts[c];
        tv += (observed as f64 / nf - p).abs();
        let var = expected * (1.0 - p);
        let z = if var > 0.0 {
            (observed as f64 - expected) / var.sqrt()
        } else if observed > 0 {
            f64::INFINITY
        } else {
            0.0
        };
        if expected >= MIN_EXPECTED {
            chi_square += (observed as f64 - expected).powi(2) / expected;
            dof += 1;
            max_abs_z = max_abs_z.max(z.abs());
        }
        let idx = [c % nc[0], c / nc[0]];
        let center = (0..d).map(|a| g.lo()[a] + (idx[a] as f64 + 0.5) * h[a]).collect();
        cells.push(CellDiscrepancy { center, observed, expected, z });
    }
    let threshold = dof as f64 + 3.0 * (2.0 * dof as f64).sqrt();
    Ok(CrosscheckReport {
        t_snapshot: snapshot.t,
        t_field: state.t,
        n_paths: n,
        coarsen,
        outside,
        total_variation: 0.5 * tv,
        chi_square,
        dof,
        threshold,
        max_abs_z,
        passed: dof > 0 && chi_square <= threshold,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fokker_planck::{build_generator, Grid};
    use crate::objective::SquaredNorm;
    use crate::rng::path_stream;
    use crate::sde_sim::InitialLaw;

    fn setup() -> (Generator, WeightedField) {
        let g = Grid::line(-4.0, 4.0, 64).unwrap();
        let gen = build_generator(&g, &SquaredNorm::new(1, 1.0), 1.0).unwrap();
        let f = WeightedField::from_density(&gen, |w| (-w[0] * w[0]).exp()).normalized(&gen);
        (gen, f)
    }

    fn gaussian_snapshot(n: usize, var: f64, seed: u64) -> EnsembleSnapshot {
        let law = InitialLaw::Gaussian { mean: vec![0.0], var: vec![var] };
        let mut positions = vec![0.0; n];
        for (i, x) in positions.iter_mut().enumerate() {
            law.sample_into(&mut path_stream(seed, i as u64), std::slice::from_mut(x));
        }
        EnsembleSnapshot {
            t: 0.0,
            step: 0,
            dim: 1,
            sup_norm: positions.iter().map(|x| x.abs()).collect(),
            positions,
            diverged: false,
            seed,
        }
    }

    #[test]
    fn matching_laws_pass() {
        let (gen, f) = setup();
        let r = density_crosscheck(&gen, &gaussian_snapshot(50_000, 0.5, 4), &f, 1e-3, 4).unwrap();
        assert!(r.passed, "{} > {}", r.chi_square, r.threshold);
        assert!(r.total_variation < 0.02);
        assert_eq!(r.cells.len(), 16);
    }

    #[test]
    fn mismatched_variance_is_flagged() {
        let (gen, f) = setup();
        let r = density_crosscheck(&gen, &gaussian_snapshot(50_000, 0.8, 4), &f, 1e-3, 4).unwrap();
        assert!(!r.passed);
        assert!(r.max_abs_z > 5.0);
    }

    #[test]
    fn time_and_shape_errors() {
        let (gen, f) = setup();
        let mut s = gaussian_snapshot(100, 0.5, 1);
        s.t = 0.01;
        assert!(matches!(density_crosscheck(&gen, &s, &f, 1e-3, 4), Err(FpError::TimeMismatch { .. })));
        s.t = 0.0005;
        assert!(density_crosscheck(&gen, &s, &f, 1e-3, 4).is_ok());
        assert!(matches!(density_crosscheck(&gen, &s, &f, 1e-3, 5), Err(FpError::InvalidParameter(_))));
    }
}
