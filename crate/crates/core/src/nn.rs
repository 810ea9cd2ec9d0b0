//! The toy fully-connected network `y_l = σ_l(W_l y_{l-1} / √m_{l-1})`, its
//! mean square loss, mini-batch SGD and sampling probes of the local PL
//! inequality `½‖∇L‖² ≥ μ L` on balls around an initialization.
//!
//! Parameters are stored layer after layer, each `W_l` row-major with shape
//! `m_l × m_{l-1}`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::objective::{map_region_samples, GrowthClass, Objective, ObjectiveError, QuadraticLoss, SampleRegion};
use crate::rng::{self, domain};
use crate::sde_sim::{simulate_sgd_with, FiniteSum, MiniBatchGradient, SimError};
use crate::table::Table;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no sample had a loss above the floor {0:e}")]
    NoAdmissibleSamples(f64),
    #[error("SGD iterate diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the output `y = σ(z)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

/// Layer widths `m_0 ..= m_{L+1}` and one activation per weight layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLPSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MLPSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NnError> {
        let s = Self { widths, activations };
        s.validate()?;
        Ok(s)
    }

    /// `m_0 → hidden (tanh) → … → m_out (linear)`.
    pub fn tanh_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self, NnError> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut act = vec![Activation::Tanh; hidden.len()];
        act.push(Activation::Linear);
        Self::new(widths, act)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths.len() < 2 {
            return Err(NnError::InvalidSpec("need at least input and output widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(NnError::InvalidSpec("widths must be >= 1".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(NnError::InvalidSpec(format!(
                "{} activations for {} weight layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Number of weight layers `L + 1`.
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Offset of `W_l` (0-based layer) in the parameter vector.
    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for w in self.widths.windows(2) {
            o.push(o.last().unwrap() + w[0] * w[1]);
        }
        o
    }

    fn check_params(&self, w: &[f64]) -> Result<(), NnError> {
        if w.len() != self.n_params() {
            return Err(NnError::ShapeMismatch(format!("{} parameters, network has {}", w.len(), self.n_params())));
        }
        Ok(())
    }

    /// I.i.d. standard normal weights.
    pub fn init_weights(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, domain::INIT, 0);
        (0..self.n_params()).map(|_| StandardNormal.sample(&mut r)).collect()
    }
}

/// Layer outputs `y_0 = x, y_1, …, y_{L+1}`.
fn forward_layers(spec: &MLPSpec, w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let off = spec.offsets();
    let mut ys = Vec::with_capacity(spec.widths.len());
    ys.push(x.to_vec());
    for l in 0..spec.n_layers() {
        let (m_in, m_out) = (spec.widths[l], spec.widths[l + 1]);
        let scale = 1.0 / (m_in as f64).sqrt();
        let wl = &w[off[l]..off[l + 1]];
        let prev = &ys[l];
        let act = spec.activations[l];
        let y: Vec<f64> = (0..m_out)
            .map(|i| {
                let z: f64 = wl[i * m_in..(i + 1) * m_in].iter().zip(prev).map(|(a, b)| a * b).sum();
                act.apply(z * scale)
            })
            .collect();
        ys.push(y);
    }
    ys
}

pub fn forward(spec: &MLPSpec, w: &[f64], x: &[f64]) -> Result<Vec<f64>, NnError> {
    spec.check_params(w)?;
    if x.len() != spec.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "input has length {}, network expects {}",
            x.len(),
            spec.input_dim()
        )));
    }
    Ok(forward_layers(spec, w, x).pop().expect("output layer"))
}

/// `|f(w; x) - y|²` and its gradient (accumulated into `grad` with weight `weight`).
fn sample_loss_grad(spec: &MLPSpec, w: &[f64], x: &[f64], y: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
    let off = spec.offsets();
    let ys = forward_layers(spec, w, x);
    let out = ys.last().expect("output layer");
    let loss: f64 = out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let last = spec.n_layers() - 1;
    let mut delta: Vec<f64> =
        out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) * spec.activations[last].derivative_from_output(*o)).collect();
    for l in (0..spec.n_layers()).rev() {
        let (m_in, m_out) = (spec.widths[l], spec.widths[l + 1]);
        let scale = 1.0 / (m_in as f64).sqrt();
        let prev = &ys[l];
        let wl = &w[off[l]..off[l + 1]];
        let gl = &mut grad[off[l]..off[l + 1]];
        for i in 0..m_out {
            let di = weight * delta[i] * scale;
            for (g, p) in gl[i * m_in..(i + 1) * m_in].iter_mut().zip(prev) {
                *g += di * p;
            }
        }
        if l > 0 {
            let act = spec.activations[l - 1];
            delta = (0..m_in)
                .map(|j| {
                    let back: f64 = (0..m_out).map(|i| wl[i * m_in + j] * delta[i]).sum();
                    back * scale * act.derivative_from_output(prev[j])
                })
                .collect();
        }
    }
    loss
}

/// `N` input/target pairs stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, input_dim: usize, output_dim: usize) -> Result<Self, NnError> {
        if input_dim == 0 || output_dim == 0 {
            return Err(NnError::InvalidData("dimensions must be >= 1".into()));
        }
        if inputs.is_empty() || !inputs.len().is_multiple_of(input_dim) || !targets.len().is_multiple_of(output_dim) {
            return Err(NnError::InvalidData("arrays are not whole rows".into()));
        }
        if inputs.len() / input_dim != targets.len() / output_dim {
            return Err(NnError::InvalidData("input and target row counts differ".into()));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(NnError::InvalidData("non-finite entry".into()));
        }
        Ok(Self { inputs, targets, input_dim, output_dim })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }

    /// CSV with a header row: `input_dim` input columns, then target columns.
    pub fn from_csv(text: &str, input_dim: usize) -> Result<Self, NnError> {
        let t = Table::from_csv(text).map_err(NnError::InvalidData)?;
        let width = t.columns.len();
        if input_dim == 0 || input_dim >= width {
            return Err(NnError::InvalidData(format!("{width} columns cannot hold {input_dim} inputs and a target")));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for row in &t.rows {
            inputs.extend_from_slice(&row[..input_dim]);
            targets.extend_from_slice(&row[input_dim..]);
        }
        Self::new(inputs, targets, input_dim, width - input_dim)
    }

    pub fn to_csv(&self) -> String {
        let mut cols: Vec<String> = (0..self.input_dim).map(|j| format!("x{j}")).collect();
        cols.extend((0..self.output_dim).map(|j| format!("y{j}")));
        let mut t = Table::new(cols);
        for i in 0..self.len() {
            let mut row = self.input(i).to_vec();
            row.extend_from_slice(self.target(i));
            t.push(row);
        }
        t.to_csv()
    }

    fn gaussian_inputs(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .flat_map(|i| {
                let mut r = rng::stream(seed, domain::DATA, i as u64);
                (0..dim).map(move |_| StandardNormal.sample(&mut r)).collect::<Vec<f64>>()
            })
            .collect()
    }

    /// Standard normal inputs labelled by a teacher network.
    pub fn teacher(teacher: &MLPSpec, teacher_w: &[f64], n: usize, seed: u64) -> Result<Self, NnError> {
        teacher.check_params(teacher_w)?;
        let d = teacher.input_dim();
        let inputs = Self::gaussian_inputs(n, d, seed);
        let targets = inputs.chunks(d).flat_map(|x| forward_layers(teacher, teacher_w, x).pop().unwrap()).collect();
        Self::new(inputs, targets, d, teacher.output_dim())
    }

    /// Standard normal inputs with independent standard normal labels.
    pub fn random_labels(input_dim: usize, output_dim: usize, n: usize, seed: u64) -> Result<Self, NnError> {
        let inputs = Self::gaussian_inputs(n, input_dim, seed);
        let targets = Self::gaussian_inputs(n, output_dim, seed ^ 0x9e37_79b9_7f4a_7c15);
        Self::new(inputs, targets, input_dim, output_dim)
    }
}

/// `L(w) = (1/N) Σ |f(w; x_i) - y_i|²` and its gradient.
pub fn square_loss_and_grad(spec: &MLPSpec, w: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>), NnError> {
    check_shapes(spec, w, data)?;
    let n = data.len();
    let mut grad = vec![0.0; w.len()];
    let weight = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        loss += sample_loss_grad(spec, w, data.input(i), data.target(i), weight, &mut grad);
    }
    Ok((loss * weight, grad))
}

fn check_shapes(spec: &MLPSpec, w: &[f64], data: &Dataset) -> Result<(), NnError> {
    spec.check_params(w)?;
    if data.input_dim != spec.input_dim() || data.output_dim != spec.output_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "dataset is {}→{}, network is {}→{}",
            data.input_dim,
            data.output_dim,
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

/// The square loss as an [`Objective`] (with `L_* = 0`) and a [`FiniteSum`]
/// of per-sample losses `ℓ_i = |f(w; x_i) - y_i|²`.
#[derive(Clone, Debug)]
pub struct SquareLoss {
    spec: MLPSpec,
    data: Dataset,
}

impl SquareLoss {
    pub fn new(spec: MLPSpec, data: Dataset) -> Result<Self, NnError> {
        spec.validate()?;
        check_shapes(&spec, &vec![0.0; spec.n_params()], &data)?;
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &MLPSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn loss_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        square_loss_and_grad(&self.spec, w, &self.data).expect("shapes checked at construction")
    }
}

impl Objective for SquareLoss {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.data.len();
        (0..n)
            .map(|i| {
                let out = forward_layers(&self.spec, w, self.data.input(i)).pop().unwrap();
                out.iter().zip(self.data.target(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.loss_and_grad(w).1);
    }

    /// Central differences of the backprop gradient, `2P` gradient calls.
    fn laplacian(&self, w: &[f64]) -> f64 {
        let mut p = w.to_vec();
        let mut acc = 0.0;
        for j in 0..w.len() {
            let h = 1e-5 * (1.0 + w[j].abs());
            p[j] = w[j] + h;
            let gp = self.loss_and_grad(&p).1[j];
            p[j] = w[j] - h;
            let gm = self.loss_and_grad(&p).1[j];
            p[j] = w[j];
            acc += (gp - gm) / (2.0 * h);
        }
        acc
    }

    fn min_value(&self) -> f64 {
        0.0
    }

    fn growth_class(&self) -> GrowthClass {
        GrowthClass::Unknown
    }
}

impl FiniteSum for SquareLoss {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn n_terms(&self) -> usize {
        self.data.len()
    }

    fn term_gradient(&self, i: usize, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        sample_loss_grad(&self.spec, w, self.data.input(i), self.data.target(i), 1.0, out);
    }
}

/// The loss of a single linear layer as `‖A(w - w*)‖²` over `vec(W)`.
///
/// Requires a linearly realizable dataset with `N·m_out ≤ P`.
pub fn linear_as_quadratic(loss: &SquareLoss) -> Result<QuadraticLoss, NnError> {
    let spec = loss.spec();
    if spec.n_layers() != 1 || spec.activations[0] != Activation::Linear {
        return Err(NnError::InvalidSpec("only a single linear layer is a quadratic loss".into()));
    }
    let data = loss.data();
    let (m0, m1, n) = (spec.widths[0], spec.widths[1], data.len());
    let c = 1.0 / ((m0 * n) as f64).sqrt();
    let mut a = DMatrix::zeros(n * m1, m0 * m1);
    let mut b = DVector::zeros(n * m1);
    for i in 0..n {
        for k in 0..m1 {
            for (j, x) in data.input(i).iter().enumerate() {
                a[(i * m1 + k, k * m0 + j)] = x * c;
            }
            b[i * m1 + k] = data.target(i)[k] / (n as f64).sqrt();
        }
    }
    let w_star = a.clone().svd(true, true).solve(&b, 1e-12).map_err(|e| NnError::InvalidData(e.to_string()))?;
    let residual = (&a * &w_star - &b).norm();
    if residual > 1e-9 * (1.0 + b.norm()) {
        return Err(NnError::InvalidData(format!("dataset is not linearly realizable (residual {residual:e})")));
    }
    Ok(QuadraticLoss::new(a, w_star)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPlProbe {
    pub radius: f64,
    /// Sample infimum of `‖∇L‖² / (2L)`.
    pub mu_hat: f64,
    /// `2 μ̂`, the same constant in the `‖∇L‖² ≥ ℓ1 L` convention.
    pub ell1_hat: f64,
    /// Admitted samples with ratio below `mu_min`.
    pub violation_count: usize,
    pub n_admitted: usize,
    pub n_samples: usize,
}

fn pl_ratios(
    loss: &SquareLoss,
    region: &SampleRegion,
    n: usize,
    floor: f64,
    seed: u64,
    execution: Execution,
) -> Vec<Option<f64>> {
    map_region_samples(region, n, seed, domain::PROBE, execution, |w| {
        let (l, g) = loss.loss_and_grad(w);
        (l >= floor).then(|| g.iter().map(|x| x * x).sum::<f64>() / (2.0 * l))
    })
}

fn summarize(radius: f64, ratios: &[Option<f64>], floor: f64, mu_min: f64) -> Result<LocalPlProbe, NnError> {
    let admitted: Vec<f64> = ratios.iter().flatten().copied().collect();
    if admitted.is_empty() {
        return Err(NnError::NoAdmissibleSamples(floor));
    }
    let mu_hat = admitted.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LocalPlProbe {
        radius,
        mu_hat,
        ell1_hat: 2.0 * mu_hat,
        violation_count: admitted.iter().filter(|&&r| r < mu_min).count(),
        n_admitted: admitted.len(),
        n_samples: ratios.len(),
    })
}

/// Probes `½‖∇L‖² ≥ μ L` at `n_samples` uniform points of `B_R(w0)`.
#[allow(clippy::too_many_arguments)]
pub fn probe_local_pl(
    loss: &SquareLoss,
    w0: &[f64],
    radius: f64,
    n_samples: usize,
    gap_floor: f64,
    mu_min: f64,
    seed: u64,
    execution: Execution,
) -> Result<LocalPlProbe, NnError> {
    if w0.len() != loss.spec().n_params() {
        return Err(NnError::ShapeMismatch("w0 does not match the parameter count".into()));
    }
    if !(radius > 0.0) || n_samples == 0 {
        return Err(NnError::InvalidParameter("need radius > 0 and n_samples >= 1".into()));
    }
    let ratios = pl_ratios(loss, &SampleRegion::ball(w0.to_vec(), radius), n_samples, gap_floor, seed, execution);
    summarize(radius, &ratios, gap_floor, mu_min)
}

/// Probes on increasing radii where the estimate at `R_k` pools the samples
/// drawn for every `R_j ≤ R_k` (all of which lie in `B_{R_k}`), so `μ̂` is
/// nonincreasing in the radius.
#[allow(clippy::too_many_arguments)]
pub fn probe_local_pl_nested(
    loss: &SquareLoss,
    w0: &[f64],
    radii: &[f64],
    n_per_radius: usize,
    gap_floor: f64,
    mu_min: f64,
    seed: u64,
    execution: Execution,
) -> Result<Vec<LocalPlProbe>, NnError> {
    if radii.windows(2).any(|r| !(r[0] < r[1])) {
        return Err(NnError::InvalidParameter("radii must be strictly increasing".into()));
    }
    let mut pooled = Vec::new();
    let mut out = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        if !(r > 0.0) {
            return Err(NnError::InvalidParameter("radii must be positive".into()));
        }
        let region = SampleRegion::ball(w0.to_vec(), r);
        pooled.extend(pl_ratios(loss, &region, n_per_radius, gap_floor, seed.wrapping_add(k as u64), execution));
        out.push(summarize(r, &pooled, gap_floor, mu_min)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    /// `L(w_k)` for `k = 0..=k_max`.
    pub loss: Vec<f64>,
    /// `max_{j ≤ k} ‖w_j - w_0‖`.
    pub sup_distance: Vec<f64>,
    /// Whether the run stayed in `B_R(w0)`, when a radius was given.
    pub stayed_in_ball: Option<bool>,
    pub final_w: Vec<f64>,
}

/// `w_{k+1} = w_k - (η/h) Σ_j ∇ℓ_{i_j}(w_k)`, indices uniform with replacement
/// (`h = N` uses every sample once, i.e. exact gradient descent).
pub fn minibatch_sgd(
    loss: &SquareLoss,
    w0: &[f64],
    eta: f64,
    batch: usize,
    k_max: usize,
    seed: u64,
    ball_radius: Option<f64>,
) -> Result<SgdTrace, NnError> {
    if batch == 0 || batch > loss.data().len() {
        return Err(NnError::InvalidParameter(format!("batch size {batch} outside 1..={}", loss.data().len())));
    }
    let oracle = MiniBatchGradient { sum: loss, batch };
    let mut trace = SgdTrace { loss: Vec::new(), sup_distance: Vec::new(), stayed_in_ball: None, final_w: Vec::new() };
    let mut sup: f64 = 0.0;
    let res = simulate_sgd_with(&oracle, w0, eta, k_max, seed, |_, w| {
        let dist = w.iter().zip(w0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        sup = sup.max(dist);
        trace.loss.push(loss.value(w));
        trace.sup_distance.push(sup);
        if trace.loss.len() == k_max + 1 {
            trace.final_w = w.to_vec();
        }
    });
    match res {
        Ok(()) => {}
        Err(SimError::IterateDiverged { step, .. }) => return Err(NnError::Diverged { step }),
        Err(e) => return Err(NnError::InvalidParameter(e.to_string())),
    }
    trace.stayed_in_ball = ball_radius.map(|r| sup <= r);
    Ok(trace)
}

/// Width scaling proxy `d R^{6L+2}` (an order estimate without constants).
pub fn width_scaling_report(d: usize, layers: u32, radius: f64) -> f64 {
    d as f64 * radius.powi(6 * layers as i32 + 2)
}
