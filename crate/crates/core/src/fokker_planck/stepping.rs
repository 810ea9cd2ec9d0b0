//! Time stepping of `∂_t φ = 𝔏 φ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;

use super::banded::{BandLu, BandMatrix};
use super::generator::Generator;
use super::FpError;

/// Relative residual accepted from one implicit solve.
pub const SOLVE_TOLERANCE: f64 = 1e-12;
/// Residual after one refinement beyond which the solve is declared failed.
const REFINED_TOLERANCE: f64 = 1e-10;

/// Nodal values of `φ` with the node weights `π` of the generator they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedField {
    pub t: f64,
    pub phi: Vec<f64>,
    pub pi: Arc<[f64]>,
}

impl WeightedField {
    pub fn new(gen: &Generator, phi: Vec<f64>, t: f64) -> Result<Self, FpError> {
        if phi.len() != gen.n_nodes() {
            return Err(FpError::DimensionMismatch { expected: gen.n_nodes(), got: phi.len() });
        }
        Ok(Self { t, phi, pi: gen.pi_shared() })
    }

    /// `φ_i = f(x_i)`.
    pub fn from_ratio<F: Fn(&[f64]) -> f64>(gen: &Generator, f: F) -> Self {
        let g = gen.grid();
        let phi = (0..g.n_nodes()).map(|i| f(&g.node_coords(i))).collect();
        Self { t: 0.0, phi, pi: gen.pi_shared() }
    }

    /// `φ_i = ρ(x_i) / π_i`.
    pub fn from_density<F: Fn(&[f64]) -> f64>(gen: &Generator, rho: F) -> Self {
        let g = gen.grid();
        let phi = (0..g.n_nodes()).map(|i| rho(&g.node_coords(i)) / gen.pi()[i]).collect();
        Self { t: 0.0, phi, pi: gen.pi_shared() }
    }

    /// Rescales so that `Σ φ_i π_i v = 1`.
    pub fn normalized(mut self, gen: &Generator) -> Self {
        let m = gen.inner(&self.phi, &vec![1.0; self.phi.len()]);
        self.phi.iter_mut().for_each(|x| *x /= m);
        self
    }

    pub fn min(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    #[default]
    Implicit,
}

/// `φ ← φ + dt 𝔏φ`; requires `dt ≤` [`Generator::cfl_limit`].
pub fn explicit_step(gen: &Generator, phi: &mut [f64], dt: f64, execution: Execution) -> Result<(), FpError> {
    let limit = gen.cfl_limit();
    if dt > limit * (1.0 + 1e-12) {
        return Err(FpError::CflViolation { dt, limit });
    }
    let lphi = gen.apply_vec(phi, execution);
    for (x, l) in phi.iter_mut().zip(&lphi) {
        *x += dt * l;
    }
    Ok(())
}

/// Backward Euler `(I - dt 𝔏) φ_new = φ` with a reusable factorization.
#[derive(Clone, Debug)]
pub struct ImplicitStepper {
    dt: f64,
    lu: BandLu,
}

impl ImplicitStepper {
    pub fn new(gen: &Generator, dt: f64) -> Result<Self, FpError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FpError::InvalidParameter(format!("dt = {dt} must be positive")));
        }
        let n = gen.n_nodes();
        let mut m = BandMatrix::zeros(n, gen.bandwidth());
        for i in 0..n {
            let mut rate = 0.0;
            for (j, c) in gen.row(i) {
                m.set(i, j, -dt * c);
                rate += c;
            }
            m.set(i, i, 1.0 + dt * rate);
        }
        let lu = m.factor().ok_or(FpError::SolverDivergence { residual: f64::INFINITY })?;
        Ok(Self { dt, lu })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn residual(&self, gen: &Generator, x: &[f64], b: &[f64], execution: Execution) -> (Vec<f64>, f64) {
        let lx = gen.apply_vec(x, execution);
        let r: Vec<f64> = b.iter().zip(x).zip(&lx).map(|((bi, xi), li)| bi - (xi - self.dt * li)).collect();
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let rel = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        (r, rel)
    }

    pub fn step(&self, gen: &Generator, phi: &mut [f64], execution: Execution) -> Result<(), FpError> {
        let b = phi.to_vec();
        self.lu.solve_in_place(phi);
        let (mut r, rel) = self.residual(gen, phi, &b, execution);
        if rel <= SOLVE_TOLERANCE {
            return Ok(());
        }
        self.lu.solve_in_place(&mut r);
        for (x, c) in phi.iter_mut().zip(&r) {
            *x += c;
        }
        let (_, rel) = self.residual(gen, phi, &b, execution);
        if rel <= REFINED_TOLERANCE && phi.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(FpError::SolverDivergence { residual: rel })
        }
    }
}

/// Advances `state` by one step of length `dt`.
pub fn step_phi(
    state: &WeightedField,
    gen: &Generator,
    dt: f64,
    scheme: Scheme,
    execution: Execution,
) -> Result<WeightedField, FpError> {
    let mut next = state.clone();
    match scheme {
        Scheme::Explicit => explicit_step(gen, &mut next.phi, dt, execution)?,
        Scheme::Implicit => ImplicitStepper::new(gen, dt)?.step(gen, &mut next.phi, execution)?,
    }
    next.t += dt;
    Ok(next)
}

/// Record times and the number of substeps used between consecutive records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub record_times: Vec<f64>,
    pub steps_per_segment: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Schedule {
    pub fn new(record_times: Vec<f64>) -> Self {
        Self { record_times, steps_per_segment: 64, scheme: Scheme::Implicit }
    }

    /// `per_octave` geometrically spaced times per doubling between `t_min` and `t_max`.
    pub fn geometric(t_min: f64, t_max: f64, per_octave: usize) -> Vec<f64> {
        let n = ((t_max / t_min).log2() * per_octave as f64).ceil() as usize;
        let mut ts: Vec<f64> = (0..=n).map(|k| t_min * 2f64.powf(k as f64 / per_octave as f64)).collect();
        if let Some(last) = ts.last_mut() {
            *last = t_max;
        }
        ts.retain(|&t| t <= t_max);
        ts.dedup();
        ts
    }

    /// Adds `extra` times and sorts.
    pub fn with_times(mut self, extra: &[f64]) -> Self {
        self.record_times.extend_from_slice(extra);
        self.record_times.sort_by(f64::total_cmp);
        self.record_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        self
    }
}

/// Evolves `init` through the schedule, calling `observer` at the initial
/// time and at every record time after it.
pub fn evolve<F>(
    gen: &Generator,
    init: WeightedField,
    schedule: &Schedule,
    execution: Execution,
    mut observer: F,
) -> Result<WeightedField, FpError>
where
    F: FnMut(&WeightedField),
{
    if schedule.steps_per_segment == 0 {
        return Err(FpError::InvalidParameter("steps_per_segment must be >= 1".into()));
    }
    if schedule.record_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(FpError::InvalidParameter("record times must be sorted".into()));
    }
    let mut state = init;
    observer(&state);
    for &target in &schedule.record_times {
        let span = target - state.t;
        if span <= 1e-14 * target.abs().max(1.0) {
            continue;
        }
        let steps = match schedule.scheme {
            Scheme::Implicit => schedule.steps_per_segment,
            Scheme::Explicit => schedule.steps_per_segment.max((span / gen.cfl_limit()).ceil() as usize),
        };
        let dt = span / steps as f64;
        match schedule.scheme {
            Scheme::Implicit => {
                let stepper = ImplicitStepper::new(gen, dt)?;
                for _ in 0..steps {
                    stepper.step(gen, &mut state.phi, execution)?;
                }
            }
            Scheme::Explicit => {
                for _ in 0..steps {
                    explicit_step(gen, &mut state.phi, dt, execution)?;
                }
            }
        }
        state.t = target;
        observer(&state);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fokker_planck::build_generator;
    use crate::fokker_planck::grid::Grid;
    use crate::objective::{Flat, SquaredNorm};

    #[test]
    fn constants_are_stationary() {
        let g = Grid::line(-4.0, 4.0, 64).unwrap();
        let gen = build_generator(&g, &SquaredNorm::new(1, 1.0), 1.0).unwrap();
        let s = WeightedField::new(&gen, vec![0.3; 64], 0.0).unwrap();
        let a = step_phi(&s, &gen, 0.5, Scheme::Implicit, Execution::Sequential).unwrap();
        assert!(a.phi.iter().all(|&x| (x - 0.3).abs() < 1e-15));
        let e = step_phi(&s, &gen, gen.cfl_limit(), Scheme::Explicit, Execution::Sequential).unwrap();
        assert_eq!(e.phi, s.phi);
        assert_eq!(e.t, gen.cfl_limit());
    }

    #[test]
    fn cfl_is_enforced() {
        let g = Grid::line(-1.0, 1.0, 32).unwrap();
        let gen = build_generator(&g, &Flat::new(1), 1.0).unwrap();
        // Neumann Laplacian: interior row sum 2/h²
        let h = 2.0 / 32.0;
        assert!((gen.cfl_limit() - h * h / 2.0).abs() < 1e-15);
        let s = WeightedField::new(&gen, vec![1.0; 32], 0.0).unwrap();
        let e = step_phi(&s, &gen, 1.01 * gen.cfl_limit(), Scheme::Explicit, Execution::Sequential).unwrap_err();
        assert!(matches!(e, FpError::CflViolation { .. }));
    }

    #[test]
    fn tiny_implicit_step_is_identity() {
        let g = Grid::line(-4.0, 4.0, 64).unwrap();
        let gen = build_generator(&g, &SquaredNorm::new(1, 1.0), 1.0).unwrap();
        let s = WeightedField::from_ratio(&gen, |x| (-(x[0] - 1.0).powi(2)).exp());
        let a = step_phi(&s, &gen, 1e-14, Scheme::Implicit, Execution::Sequential).unwrap();
        for (x, y) in a.phi.iter().zip(&s.phi) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-3));
        }
    }

    #[test]
    fn implicit_and_explicit_agree() {
        let g = Grid::line(-3.0, 3.0, 48).unwrap();
        let gen = build_generator(&g, &SquaredNorm::new(1, 0.5), 0.8).unwrap();
        let s = WeightedField::from_ratio(&gen, |x| 1.0 + x[0].sin());
        let mut sched = Schedule::new(vec![0.2]);
        sched.steps_per_segment = 4000;
        let a = evolve(&gen, s.clone(), &sched, Execution::Sequential, |_| {}).unwrap();
        sched.scheme = Scheme::Explicit;
        let b = evolve(&gen, s, &sched, Execution::Sequential, |_| {}).unwrap();
        let err = a.phi.iter().zip(&b.phi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn geometric_schedule() {
        let ts = Schedule::geometric(0.5, 8.0, 2);
        assert_eq!(ts.len(), 9);
        assert_eq!(ts[0], 0.5);
        assert_eq!(*ts.last().unwrap(), 8.0);
        assert!((ts[2] - 1.0).abs() < 1e-12);
        let s = Schedule::new(ts).with_times(&[1.0, 10.0]);
        assert_eq!(s.record_times.len(), 10);
    }
}
