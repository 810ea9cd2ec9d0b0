//! Euler-Maruyama ensembles for `dw = -∇L(w) dt + sqrt(2σ) dB` and discrete
//! stochastic-gradient recursions.
//!
//! Path `i` draws its initial point and all of its increments from
//! [`rng::path_stream`]`(seed, i)`, so an ensemble is bit-identical for any
//! thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::objective::Objective;
use crate::rng::{self, StreamRng};

/// A coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

const PATHS_PER_BLOCK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: objective has {objective}, initial law has {init}")]
    DimensionMismatch { objective: usize, init: usize },
    #[error("path {path} diverged at t = {t}")]
    Diverged { path: usize, t: f64, partial: Vec<EnsembleSnapshot> },
    #[error("iterate diverged at step {step}")]
    IterateDiverged { step: usize, partial: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sigma: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub record_times: Vec<f64>,
    #[serde(default)]
    pub execution: Execution,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be finite and >= 0", self.sigma));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("dt and t_final must be positive".into());
        }
        if self.dt > self.t_final * (1.0 + 1e-12) {
            return bad(format!("dt = {} exceeds t_final = {}", self.dt, self.t_final));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be >= 1".into());
        }
        if self.record_times.windows(2).any(|w| w[0] > w[1]) {
            return bad("record_times must be sorted".into());
        }
        if self.record_times.iter().any(|&t| !(t >= 0.0 && t <= self.t_final * (1.0 + 1e-12))) {
            return bad("record_times must lie in [0, t_final]".into());
        }
        Ok(())
    }

    /// Total number of steps, `round(t_final / dt)`.
    pub fn n_steps(&self) -> u64 {
        ((self.t_final / self.dt).round() as u64).max(1)
    }

    /// Record times snapped to step boundaries, deduplicated, as step indices.
    pub fn record_steps(&self) -> Vec<u64> {
        let n = self.n_steps();
        let mut steps: Vec<u64> = self.record_times.iter().map(|&t| ((t / self.dt).round() as u64).min(n)).collect();
        steps.dedup();
        steps
    }

    /// `n_records` record times spaced evenly on `[0, t_final]`, endpoints included.
    pub fn uniform_record_times(t_final: f64, n_records: usize) -> Vec<f64> {
        if n_records <= 1 {
            return vec![t_final];
        }
        (0..n_records).map(|i| t_final * i as f64 / (n_records - 1) as f64).collect()
    }
}

/// Samples from a piecewise-constant density on a 1D or 2D cell grid
/// (cell index `ix + nx * iy`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSampler {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_cells: Vec<usize>,
    cdf: Vec<f64>,
}

impl GridSampler {
    /// `masses` are nonnegative per-cell probabilities up to normalization.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n_cells: Vec<usize>, masses: &[f64]) -> Result<Self, SimError> {
        let d = lo.len();
        if d == 0 || d > 2 || hi.len() != d || n_cells.len() != d {
            return Err(SimError::InvalidConfig("grid sampler needs 1 or 2 axes".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) || n_cells.contains(&0) {
            return Err(SimError::InvalidConfig("grid sampler needs lo < hi and cells >= 1".into()));
        }
        let total_cells: usize = n_cells.iter().product();
        if masses.len() != total_cells || masses.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(SimError::InvalidConfig("grid sampler masses must be finite, >= 0, one per cell".into()));
        }
        let mut cdf = Vec::with_capacity(total_cells);
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(SimError::InvalidConfig("grid sampler masses sum to zero".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { lo, hi, n_cells, cdf })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let u: f64 = rng.random();
        let cell = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let mut idx = cell;
        (0..self.dim())
            .map(|a| {
                let i = idx % self.n_cells[a];
                idx /= self.n_cells[a];
                let h = (self.hi[a] - self.lo[a]) / self.n_cells[a] as f64;
                self.lo[a] + h * (i as f64 + rng.random::<f64>())
            })
            .collect()
    }
}

/// Law of `w_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialLaw {
    Point {
        w0: Vec<f64>,
    },
    /// Independent coordinates with the given means and variances.
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    GridDensity {
        sampler: GridSampler,
    },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { w0 } => w0.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::UniformBox { lo, .. } => lo.len(),
            InitialLaw::GridDensity { sampler } => sampler.dim(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        match self {
            InitialLaw::Point { w0 } if w0.iter().any(|x| !x.is_finite()) => bad("w0 must be finite"),
            InitialLaw::Gaussian { mean, var } if mean.len() != var.len() => bad("mean/var length mismatch"),
            InitialLaw::Gaussian { var, .. } if var.iter().any(|&v| !(v > 0.0)) => {
                bad("gaussian variances must be > 0")
            }
            InitialLaw::UniformBox { lo, hi } if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) => {
                bad("uniform box needs lo <= hi")
            }
            _ if self.dim() == 0 => bad("initial law has dimension 0"),
            _ => Ok(()),
        }
    }

    pub fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self {
            InitialLaw::Point { w0 } => out.copy_from_slice(w0),
            InitialLaw::Gaussian { mean, var } => {
                for ((o, m), v) in out.iter_mut().zip(mean).zip(var) {
                    *o = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
            InitialLaw::UniformBox { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = l + (h - l) * rng.random::<f64>();
                }
            }
            InitialLaw::GridDensity { sampler } => out.copy_from_slice(&sampler.sample(rng)),
        }
    }
}

/// Positions of all paths at one record time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    /// Realized (snapped) time `step * dt`.
    pub t: f64,
    pub step: u64,
    pub dim: usize,
    /// Row-major `n_paths × dim`.
    pub positions: Vec<f64>,
    /// Running `sup_{s ≤ t} ‖w_s‖` per path over every step taken.
    pub sup_norm: Vec<f64>,
    pub diverged: bool,
    /// Seed of the per-path streams that produced the ensemble.
    pub seed: u64,
}

impl EnsembleSnapshot {
    pub fn n_paths(&self) -> usize {
        self.sup_norm.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }
}

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn is_diverged(w: &[f64]) -> bool {
    w.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_THRESHOLD)
}

/// One step `w - dt ∇L(w) + sqrt(2 σ dt) gauss`.
pub fn euler_maruyama_step<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    dt: f64,
    sigma: f64,
    gauss: &[f64],
) -> Result<Vec<f64>, SimError> {
    let mut out = w.to_vec();
    let mut grad = vec![0.0; w.len()];
    em_update(obj, &mut out, &mut grad, dt, (2.0 * sigma * dt).sqrt(), gauss);
    if is_diverged(&out) {
        return Err(SimError::Diverged { path: 0, t: dt, partial: Vec::new() });
    }
    Ok(out)
}

#[inline]
fn em_update<O: Objective + ?Sized>(obj: &O, w: &mut [f64], grad: &mut [f64], dt: f64, s: f64, gauss: &[f64]) {
    obj.gradient(w, grad);
    for ((x, g), z) in w.iter_mut().zip(grad.iter()).zip(gauss) {
        *x = *x - dt * *g + s * z;
    }
}

struct PathState {
    rng: StreamRng,
    sup: f64,
    diverged_at: Option<u64>,
}

/// Runs the ensemble and hands each snapshot to `observer` as it is produced.
/// Returns the number of snapshots emitted.
///
/// On divergence the snapshot at the end of the offending segment is emitted
/// with `diverged = true` before the error is returned.
pub fn simulate_ensemble_with<O, F>(
    obj: &O,
    init: &InitialLaw,
    cfg: &SimConfig,
    mut observer: F,
) -> Result<usize, SimError>
where
    O: Objective + ?Sized,
    F: FnMut(&EnsembleSnapshot),
{
    cfg.validate()?;
    init.validate()?;
    let d = obj.dim();
    if init.dim() != d {
        return Err(SimError::DimensionMismatch { objective: d, init: init.dim() });
    }
    let n = cfg.n_paths;
    let mut positions = vec![0.0; n * d];
    let mut states: Vec<PathState> =
        (0..n).map(|i| PathState { rng: rng::path_stream(cfg.seed, i as u64), sup: 0.0, diverged_at: None }).collect();
    exec::for_each_row_block_mut(cfg.execution, &mut positions, d, &mut states, PATHS_PER_BLOCK, |_, rows, sts| {
        for (w, st) in rows.chunks_exact_mut(d).zip(sts.iter_mut()) {
            init.sample_into(&mut st.rng, w);
            st.sup = norm(w);
            if is_diverged(w) {
                st.diverged_at = Some(0);
            }
        }
    });

    let s = (2.0 * cfg.sigma * cfg.dt).sqrt();
    let mut current = 0u64;
    let mut emitted = 0usize;
    for target in cfg.record_steps() {
        let seg = target - current;
        if seg > 0 {
            exec::for_each_row_block_mut(
                cfg.execution,
                &mut positions,
                d,
                &mut states,
                PATHS_PER_BLOCK,
                |_, rows, sts| {
                    let mut grad = vec![0.0; d];
                    let mut gauss = vec![0.0; d];
                    for (w, st) in rows.chunks_exact_mut(d).zip(sts.iter_mut()) {
                        if st.diverged_at.is_some() {
                            continue;
                        }
                        for k in 0..seg {
                            for z in gauss.iter_mut() {
                                *z = st.rng.sample(StandardNormal);
                            }
                            em_update(obj, w, &mut grad, cfg.dt, s, &gauss);
                            if is_diverged(w) {
                                st.diverged_at = Some(current + k + 1);
                                break;
                            }
                            let r = norm(w);
                            if r > st.sup {
                                st.sup = r;
                            }
                        }
                    }
                },
            );
            current = target;
        }
        let first_bad = states.iter().enumerate().filter_map(|(i, st)| st.diverged_at.map(|k| (k, i))).min();
        let snap = EnsembleSnapshot {
            t: current as f64 * cfg.dt,
            step: current,
            dim: d,
            positions: positions.clone(),
            sup_norm: states.iter().map(|st| st.sup).collect(),
            diverged: first_bad.is_some(),
            seed: cfg.seed,
        };
        observer(&snap);
        emitted += 1;
        if let Some((k, path)) = first_bad {
            return Err(SimError::Diverged { path, t: k as f64 * cfg.dt, partial: Vec::new() });
        }
    }
    Ok(emitted)
}

/// Runs the ensemble and collects every snapshot. On divergence the error
/// carries the snapshots produced so far, the last one flagged.
pub fn simulate_ensemble<O: Objective + ?Sized>(
    obj: &O,
    init: &InitialLaw,
    cfg: &SimConfig,
) -> Result<Vec<EnsembleSnapshot>, SimError> {
    let mut out = Vec::new();
    match simulate_ensemble_with(obj, init, cfg, |s| out.push(s.clone())) {
        Ok(_) => Ok(out),
        Err(SimError::Diverged { path, t, .. }) => Err(SimError::Diverged { path, t, partial: out }),
        Err(e) => Err(e),
    }
}

/// A source of `∇L(w) + ξ` with mean-zero `ξ`.
pub trait StochasticGradient: Sync {
    fn dim(&self) -> usize;

    /// Writes a stochastic gradient at `w` for step `k` into `out`.
    fn sample(&self, w: &[f64], k: usize, rng: &mut StreamRng, out: &mut [f64]);

    /// `w ← w - η g` with `g` from [`sample`](Self::sample).
    fn step(&self, w: &mut [f64], eta: f64, k: usize, rng: &mut StreamRng, scratch: &mut [f64]) {
        self.sample(w, k, rng, scratch);
        for (x, g) in w.iter_mut().zip(scratch.iter()) {
            *x -= eta * g;
        }
    }
}

/// Noise-free gradient.
pub struct ExactGradient<O>(pub O);

impl<O: Objective> StochasticGradient for ExactGradient<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn sample(&self, w: &[f64], _k: usize, _rng: &mut StreamRng, out: &mut [f64]) {
        self.0.gradient(w, out);
    }
}

/// `∇L(w) + ξ`, `ξ ~ N(0, (δ/d) I)` so that `E‖ξ‖² = δ`.
pub struct GaussianNoiseGradient<O> {
    pub objective: O,
    pub variance: f64,
}

impl<O: Objective> StochasticGradient for GaussianNoiseGradient<O> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }
    fn sample(&self, w: &[f64], _k: usize, rng: &mut StreamRng, out: &mut [f64]) {
        self.objective.gradient(w, out);
        let s = (self.variance / w.len() as f64).sqrt();
        for o in out.iter_mut() {
            *o += s * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// The discretized Langevin recursion written as SGD:
/// `ξ = -sqrt(2σ/η) z`, so `w - η(∇L + ξ) = w - η∇L + sqrt(2ση) z`.
pub struct LangevinNoiseGradient<O> {
    pub objective: O,
    pub sigma: f64,
    pub eta: f64,
}

impl<O: Objective> StochasticGradient for LangevinNoiseGradient<O> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }
    fn sample(&self, w: &[f64], _k: usize, rng: &mut StreamRng, out: &mut [f64]) {
        self.objective.gradient(w, out);
        let c = (2.0 * self.sigma / self.eta).sqrt();
        for o in out.iter_mut() {
            *o -= c * rng.sample::<f64, _>(StandardNormal);
        }
    }
    /// Evaluated in Euler-Maruyama form so that the iterates coincide bit for
    /// bit with path 0 of an ensemble using `dt = η` and the same seed.
    fn step(&self, w: &mut [f64], eta: f64, _k: usize, rng: &mut StreamRng, scratch: &mut [f64]) {
        debug_assert_eq!(eta, self.eta);
        let gauss: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
        em_update(&self.objective, w, scratch, eta, (2.0 * self.sigma * eta).sqrt(), &gauss);
    }
}

/// `L = (1/N) Σ ℓ_i`.
pub trait FiniteSum: Sync {
    fn dim(&self) -> usize;
    fn n_terms(&self) -> usize;
    /// Writes `∇ℓ_i(w)` into `out`.
    fn term_gradient(&self, i: usize, w: &[f64], out: &mut [f64]);
}

/// `(1/h) Σ_j ∇ℓ_{i_j}` with `i_j` uniform with replacement. When `h = N` every
/// term is used once in index order, giving the exact gradient.
pub struct MiniBatchGradient<'a, S: FiniteSum + ?Sized> {
    pub sum: &'a S,
    pub batch: usize,
}

impl<S: FiniteSum + ?Sized> StochasticGradient for MiniBatchGradient<'_, S> {
    fn dim(&self) -> usize {
        self.sum.dim()
    }
    fn sample(&self, w: &[f64], _k: usize, rng: &mut StreamRng, out: &mut [f64]) {
        let n = self.sum.n_terms();
        let mut term = vec![0.0; w.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.batch {
            let i = if self.batch == n { j } else { rng.random_range(0..n) };
            self.sum.term_gradient(i, w, &mut term);
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
        }
        let inv = 1.0 / self.batch as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Iterates `w^{(k+1)} = w^{(k)} - η g(w^{(k)}, k)` for `k < k_max`; returns
/// `k_max + 1` iterates starting with `w0`. Uses stream `path_stream(seed, 0)`.
pub fn simulate_sgd<G: StochasticGradient + ?Sized>(
    oracle: &G,
    w0: &[f64],
    eta: f64,
    k_max: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SimError> {
    let mut out = Vec::with_capacity(k_max + 1);
    let res = simulate_sgd_with(oracle, w0, eta, k_max, seed, |_, w| out.push(w.to_vec()));
    match res {
        Ok(()) => Ok(out),
        Err(SimError::IterateDiverged { step, .. }) => Err(SimError::IterateDiverged { step, partial: out }),
        Err(e) => Err(e),
    }
}

/// Streaming form of [`simulate_sgd`]; `observer(k, w^{(k)})` for `k = 0..=k_max`.
pub fn simulate_sgd_with<G, F>(
    oracle: &G,
    w0: &[f64],
    eta: f64,
    k_max: usize,
    seed: u64,
    mut observer: F,
) -> Result<(), SimError>
where
    G: StochasticGradient + ?Sized,
    F: FnMut(usize, &[f64]),
{
    if !(eta > 0.0) {
        return Err(SimError::InvalidConfig(format!("eta = {eta} must be positive")));
    }
    if w0.len() != oracle.dim() {
        return Err(SimError::DimensionMismatch { objective: oracle.dim(), init: w0.len() });
    }
    let mut rng = rng::path_stream(seed, 0);
    let mut w = w0.to_vec();
    let mut scratch = vec![0.0; w.len()];
    observer(0, &w);
    for k in 0..k_max {
        oracle.step(&mut w, eta, k, &mut rng, &mut scratch);
        if is_diverged(&w) {
            return Err(SimError::IterateDiverged { step: k + 1, partial: Vec::new() });
        }
        observer(k + 1, &w);
    }
    Ok(())
}
