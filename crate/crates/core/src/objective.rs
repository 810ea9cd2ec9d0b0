//! Objective functions, PL certificates and sampling-based assumption checks.
//!
//! An [`Objective`] exposes value, gradient, Laplacian and the known minimum
//! `L_*`. Objectives whose minimizer set `W*` is known also expose the
//! orthogonal projection onto it, which gives `dist(w, W*)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::rng::{self, StreamRng};

/// Singular values below this are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;
/// Additive slack absorbing floating-point noise in pointwise inequality checks.
pub const CHECK_SLACK: f64 = 1e-9;

const SHARD_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("matrix has no singular value above {RANK_CUTOFF:e}")]
    ZeroMatrix,
    #[error("objective has no minimizer projection")]
    NoProjection,
    #[error("no sample had an optimality gap above the floor {0:e}")]
    NoAdmissibleSamples(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("invalid sample region: {0}")]
    InvalidRegion(String),
    #[error("sample region is not contained in the certificate's local ball")]
    RegionOutsideScope,
    #[error("matrix parse error: {0}")]
    Parse(String),
}

/// Coarse geometry of the objective far from its minimizers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    /// Quadratic growth away from a compact minimizer set: `π` integrable.
    QuadraticGrowthCompactMin,
    /// Quadratic growth in `dist(w, W*)` with `W*` unbounded: `π` not integrable.
    QuadraticGrowthUnboundedMin,
    #[default]
    Unknown,
}

/// A twice differentiable objective `L: R^d -> R` with known minimum value.
///
/// Implementations must be pure; they are evaluated concurrently.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    /// Writes `∇L(w)` into `out` (length `dim`).
    fn gradient(&self, w: &[f64], out: &mut [f64]);
    fn laplacian(&self, w: &[f64]) -> f64;
    /// `L_* = min L`.
    fn min_value(&self) -> f64;

    /// Nearest point of `W*`, when the minimizer set is known.
    fn project_to_minimizers(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn growth_class(&self) -> GrowthClass {
        GrowthClass::Unknown
    }

    fn gradient_vec(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(w, &mut g);
        g
    }

    /// `L(w) - L_*`.
    fn gap(&self, w: &[f64]) -> f64 {
        let v = self.value(w);
        let m = self.min_value();
        debug_assert!(v >= m - 1e-9 * (1.0 + m.abs()), "objective value {v} below declared minimum {m}");
        v - m
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, w: &[f64]) -> f64 {
        (**self).value(w)
    }
    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        (**self).gradient(w, out)
    }
    fn laplacian(&self, w: &[f64]) -> f64 {
        (**self).laplacian(w)
    }
    fn min_value(&self) -> f64 {
        (**self).min_value()
    }
    fn project_to_minimizers(&self, w: &[f64]) -> Option<Vec<f64>> {
        (**self).project_to_minimizers(w)
    }
    fn growth_class(&self) -> GrowthClass {
        (**self).growth_class()
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, w: &[f64]) -> f64 {
        (**self).value(w)
    }
    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        (**self).gradient(w, out)
    }
    fn laplacian(&self, w: &[f64]) -> f64 {
        (**self).laplacian(w)
    }
    fn min_value(&self) -> f64 {
        (**self).min_value()
    }
    fn project_to_minimizers(&self, w: &[f64]) -> Option<Vec<f64>> {
        (**self).project_to_minimizers(w)
    }
    fn growth_class(&self) -> GrowthClass {
        (**self).growth_class()
    }
}

/// `L(w) = a‖w‖²` in `d` dimensions. The Langevin dynamics is an
/// Ornstein-Uhlenbeck process with drift `-2a w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredNorm {
    dim: usize,
    scale: f64,
}

impl SquaredNorm {
    pub fn new(dim: usize, scale: f64) -> Self {
        assert!(dim >= 1 && scale > 0.0, "SquaredNorm needs dim >= 1 and scale > 0");
        Self { dim, scale }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Objective for SquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, w: &[f64]) -> f64 {
        self.scale * w.iter().map(|x| x * x).sum::<f64>()
    }
    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(w) {
            *o = 2.0 * self.scale * x;
        }
    }
    fn laplacian(&self, _w: &[f64]) -> f64 {
        2.0 * self.scale * self.dim as f64
    }
    fn min_value(&self) -> f64 {
        0.0
    }
    fn project_to_minimizers(&self, _w: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }
    fn growth_class(&self) -> GrowthClass {
        GrowthClass::QuadraticGrowthCompactMin
    }
}

/// `L ≡ 0`: every point is a minimizer and `π ≡ 1` is not integrable.
#[derive(Clone, Debug, PartialEq)]
pub struct Flat {
    dim: usize,
}

impl Flat {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim }
    }
}

impl Objective for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _w: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn laplacian(&self, _w: &[f64]) -> f64 {
        0.0
    }
    fn min_value(&self) -> f64 {
        0.0
    }
    fn project_to_minimizers(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(w.to_vec())
    }
    fn growth_class(&self) -> GrowthClass {
        GrowthClass::QuadraticGrowthUnboundedMin
    }
}

/// `L(w) = ‖A(w - w*)‖²` with `A` of shape `n × d`, `n ≤ d`.
///
/// The minimizer set is the affine space `w* + Ker(A)`.
#[derive(Clone, Debug)]
pub struct QuadraticLoss {
    a: DMatrix<f64>,
    w_star: DVector<f64>,
    /// Columns of `A` holding at least one nonzero entry.
    active: Vec<usize>,
    singular_values: Vec<f64>,
    /// Orthonormal basis of `Row(A)`, one basis vector per row.
    row_basis: DMatrix<f64>,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, w_star: DVector<f64>) -> Result<Self, ObjectiveError> {
        let (n, d) = a.shape();
        if n == 0 || d == 0 {
            return Err(ObjectiveError::ShapeMismatch("empty matrix".into()));
        }
        if n > d {
            return Err(ObjectiveError::ShapeMismatch(format!("A has {n} rows and {d} columns; need n <= d")));
        }
        if w_star.len() != d {
            return Err(ObjectiveError::ShapeMismatch(format!("w* has length {}, A has {d} columns", w_star.len())));
        }
        let active = (0..d).filter(|&j| a.column(j).iter().any(|&x| x != 0.0)).collect();
        let svd = a.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut pairs: Vec<(f64, usize)> =
            svd.singular_values.iter().copied().enumerate().map(|(i, s)| (s, i)).collect();
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
        let singular_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let kept: Vec<usize> = pairs.iter().filter(|p| p.0 > RANK_CUTOFF).map(|p| p.1).collect();
        let mut row_basis = DMatrix::zeros(kept.len(), d);
        for (r, &i) in kept.iter().enumerate() {
            row_basis.row_mut(r).copy_from(&v_t.row(i));
        }
        Ok(Self { a, w_star, active, singular_values, row_basis })
    }

    /// `[block | 0]` embedded in `d` columns, minimizer through the origin.
    pub fn embedded(block: DMatrix<f64>, d: usize) -> Result<Self, ObjectiveError> {
        let (n, k) = block.shape();
        if k > d {
            return Err(ObjectiveError::ShapeMismatch(format!("block has {k} columns > d = {d}")));
        }
        let mut a = DMatrix::zeros(n, d);
        a.view_mut((0, 0), (n, k)).copy_from(&block);
        Self::new(a, DVector::zeros(d))
    }

    pub fn from_rows(rows: &[Vec<f64>], w_star: Vec<f64>) -> Result<Self, ObjectiveError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(ObjectiveError::ShapeMismatch("ragged matrix rows".into()));
        }
        let a = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Self::new(a, DVector::from_vec(w_star))
    }

    /// Parses a matrix written one row per line as comma-separated decimals.
    pub fn matrix_rows_from_csv(text: &str) -> Result<Vec<Vec<f64>>, ObjectiveError> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|line| {
                line.split(',')
                    .map(|tok| tok.trim().parse::<f64>().map_err(|e| ObjectiveError::Parse(format!("{tok:?}: {e}"))))
                    .collect()
            })
            .collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    /// Singular values of `A` in descending order.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.row_basis.nrows()
    }

    /// Largest singular value `σ₁`.
    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }

    /// Smallest singular value above the rank cutoff.
    pub fn sigma_min_positive(&self) -> Option<f64> {
        self.singular_values.iter().copied().rfind(|&s| s > RANK_CUTOFF)
    }

    /// `‖A‖_F² = Σ σᵢ²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }

    /// Component of `w - w*` in `Row(A)`, expressed in the row basis.
    fn row_coordinates(&self, w: &[f64]) -> DVector<f64> {
        let diff = DVector::from_iterator(w.len(), w.iter().zip(self.w_star.iter()).map(|(x, s)| x - s));
        &self.row_basis * diff
    }

    fn residual(&self, w: &[f64]) -> Vec<f64> {
        let n = self.a.nrows();
        let mut r = vec![0.0; n];
        for &j in &self.active {
            let dj = w[j] - self.w_star[j];
            for (i, ri) in r.iter_mut().enumerate() {
                *ri += self.a[(i, j)] * dj;
            }
        }
        r
    }
}

impl Objective for QuadraticLoss {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn value(&self, w: &[f64]) -> f64 {
        self.residual(w).iter().map(|r| r * r).sum()
    }
    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let r = self.residual(w);
        out.iter_mut().for_each(|o| *o = 0.0);
        for &j in &self.active {
            let mut acc = 0.0;
            for (i, ri) in r.iter().enumerate() {
                acc += self.a[(i, j)] * ri;
            }
            out[j] = 2.0 * acc;
        }
    }
    fn laplacian(&self, _w: &[f64]) -> f64 {
        2.0 * self.a.iter().map(|x| x * x).sum::<f64>()
    }
    fn min_value(&self) -> f64 {
        0.0
    }
    fn project_to_minimizers(&self, w: &[f64]) -> Option<Vec<f64>> {
        let coords = self.row_coordinates(w);
        let back = self.row_basis.transpose() * coords;
        Some(w.iter().zip(back.iter()).map(|(x, b)| x - b).collect())
    }
    fn growth_class(&self) -> GrowthClass {
        if self.rank() == self.dim() {
            GrowthClass::QuadraticGrowthCompactMin
        } else {
            GrowthClass::QuadraticGrowthUnboundedMin
        }
    }
}

/// `H(s) = C (1 + s^p)`, the gradient-growth function of the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HBound {
    pub c: f64,
    pub p: f64,
}

impl HBound {
    pub fn eval(&self, s: f64) -> f64 {
        self.c * (1.0 + s.max(0.0).powf(self.p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CertScope {
    Global,
    Local { center: Vec<f64>, radius: f64 },
}

/// Constants `(ℓ1, ℓ2, ℓ3)` of
/// `L - L_* ≤ ‖∇L‖²/ℓ1`, `|ΔL| ≤ ℓ2 (L - L_*) + ℓ3`, `‖∇L‖ ≤ H(L - L_*)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PLCertificate {
    pub ell1: f64,
    pub ell2: f64,
    pub ell3: f64,
    pub h_bound: Option<HBound>,
    pub scope: CertScope,
}

impl PLCertificate {
    pub fn global(ell1: f64, ell2: f64, ell3: f64) -> Result<Self, ObjectiveError> {
        let cert = Self { ell1, ell2, ell3, h_bound: None, scope: CertScope::Global };
        cert.validate()?;
        Ok(cert)
    }

    pub fn local(ell1: f64, ell2: f64, ell3: f64, center: Vec<f64>, radius: f64) -> Result<Self, ObjectiveError> {
        let cert = Self { ell1, ell2, ell3, h_bound: None, scope: CertScope::Local { center, radius } };
        cert.validate()?;
        Ok(cert)
    }

    pub fn with_h_bound(mut self, h: HBound) -> Self {
        self.h_bound = Some(h);
        self
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.ell1 > 0.0 && self.ell1.is_finite()) {
            return Err(ObjectiveError::InvalidCertificate(format!("ell1 = {} must be positive", self.ell1)));
        }
        if !(self.ell2 >= 0.0 && self.ell3 >= 0.0) {
            return Err(ObjectiveError::InvalidCertificate("ell2 and ell3 must be nonnegative".into()));
        }
        if let CertScope::Local { radius, .. } = &self.scope {
            if !(*radius > 0.0) {
                return Err(ObjectiveError::InvalidCertificate(format!("local radius {radius} must be positive")));
            }
        }
        Ok(())
    }

    /// The decay bound needs `ℓ1 > σ ℓ2` (strict).
    pub fn admits(&self, sigma: f64) -> bool {
        self.ell1 > sigma * self.ell2
    }

    /// Contraction rate `ℓ1 - σ ℓ2`.
    pub fn rate(&self, sigma: f64) -> f64 {
        self.ell1 - sigma * self.ell2
    }

    /// Asymptotic gap level `σ ℓ3 / (ℓ1 - σ ℓ2)`.
    pub fn plateau(&self, sigma: f64) -> f64 {
        sigma * self.ell3 / self.rate(sigma)
    }
}

/// Where verification samples are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleRegion {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl SampleRegion {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        SampleRegion::Box { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        SampleRegion::Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            SampleRegion::Box { lo, .. } => lo.len(),
            SampleRegion::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), ObjectiveError> {
        if self.dim() != dim {
            return Err(ObjectiveError::ShapeMismatch(format!("region has dimension {}, objective {dim}", self.dim())));
        }
        match self {
            SampleRegion::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(ObjectiveError::InvalidRegion("box needs lo <= hi componentwise".into()));
                }
            }
            SampleRegion::Ball { radius, .. } => {
                if !(*radius >= 0.0) {
                    return Err(ObjectiveError::InvalidRegion("ball radius must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether the region lies inside the closed ball `B(center, radius)`.
    pub fn within_ball(&self, center: &[f64], radius: f64) -> bool {
        match self {
            SampleRegion::Box { lo, hi } => {
                // farthest corner
                let far: f64 = lo
                    .iter()
                    .zip(hi)
                    .zip(center)
                    .map(|((l, h), c)| {
                        let m = (l - c).abs().max((h - c).abs());
                        m * m
                    })
                    .sum();
                far.sqrt() <= radius * (1.0 + 1e-12)
            }
            SampleRegion::Ball { center: c2, radius: r2 } => {
                let dist: f64 = c2.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                dist + r2 <= radius * (1.0 + 1e-12)
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            SampleRegion::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect(),
            SampleRegion::Ball { center, radius } => {
                let d = center.len();
                sample_in_ball(rng, center, *radius, d)
            }
        }
    }
}

/// Uniform draw from the ball `B(center, radius)` in `d` dimensions.
pub fn sample_in_ball(rng: &mut StreamRng, center: &[f64], radius: f64, d: usize) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = radius * u.powf(1.0 / d as f64);
        return center.iter().zip(&dir).map(|(c, x)| c + r * x / norm).collect();
    }
}

/// Draws `n` points from `region` in fixed-size shards (shard `s` uses its own
/// stream) and maps each point through `f`. Output order is the sample order.
pub(crate) fn map_region_samples<T, F>(
    region: &SampleRegion,
    n: usize,
    seed: u64,
    domain: u64,
    execution: Execution,
    f: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64]) -> T + Sync + Send,
{
    let shards = n.div_ceil(SHARD_LEN);
    let per_shard = exec::map_indexed(execution, shards, |s| {
        let mut rng = rng::stream(seed, domain, s as u64);
        let len = SHARD_LEN.min(n - s * SHARD_LEN);
        (0..len).map(|_| f(&region.sample(&mut rng))).collect::<Vec<T>>()
    });
    per_shard.into_iter().flatten().collect()
}

/// Violation count and the largest `lhs - rhs` seen for one condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTally {
    pub violations: usize,
    /// Positive values are violations; negative values are the minimum slack.
    pub worst_margin: f64,
}

impl ConditionTally {
    fn new() -> Self {
        Self { violations: 0, worst_margin: f64::NEG_INFINITY }
    }

    fn record(&mut self, margin: f64) {
        if margin > CHECK_SLACK {
            self.violations += 1;
        }
        if margin > self.worst_margin {
            self.worst_margin = margin;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    /// `L - L_* ≤ ‖∇L‖²/ℓ1`.
    pub pl: ConditionTally,
    /// `|ΔL| ≤ ℓ2 (L - L_*) + ℓ3`.
    pub laplacian: ConditionTally,
    /// `‖∇L‖ ≤ H(L - L_*)`, only when the certificate carries `H`.
    pub gradient_growth: Option<ConditionTally>,
}

impl AssumptionReport {
    pub fn total_violations(&self) -> usize {
        self.pl.violations + self.laplacian.violations + self.gradient_growth.map_or(0, |g| g.violations)
    }
}

/// `ℓ1 = 4 σ_min⁺(A)²`, `ℓ2 = 0`, `ℓ3 = 2‖A‖_F²` for `L = ‖A(w - w*)‖²`.
pub fn quadratic_pl_constants(a: &DMatrix<f64>) -> Result<PLCertificate, ObjectiveError> {
    let sv = a.singular_values();
    let positive: Vec<f64> = sv.iter().copied().filter(|&s| s > RANK_CUTOFF).collect();
    let smin = positive.iter().copied().fold(f64::INFINITY, f64::min);
    if positive.is_empty() {
        return Err(ObjectiveError::ZeroMatrix);
    }
    let frob_sq: f64 = sv.iter().map(|s| s * s).sum();
    PLCertificate::global(4.0 * smin * smin, 0.0, 2.0 * frob_sq)
}

/// Monte Carlo check of the three pointwise conditions over `region`.
pub fn verify_assumption1<O: Objective + ?Sized>(
    obj: &O,
    cert: &PLCertificate,
    region: &SampleRegion,
    n_samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<AssumptionReport, ObjectiveError> {
    cert.validate()?;
    region.validate(obj.dim())?;
    if let CertScope::Local { center, radius } = &cert.scope {
        if !region.within_ball(center, *radius) {
            return Err(ObjectiveError::RegionOutsideScope);
        }
    }
    let margins = map_region_samples(region, n_samples, seed, rng::domain::VERIFY, execution, |w| {
        let gap = obj.gap(w);
        let g = obj.gradient_vec(w);
        let gsq: f64 = g.iter().map(|x| x * x).sum();
        let pl = gap - gsq / cert.ell1;
        let lap = obj.laplacian(w).abs() - (cert.ell2 * gap + cert.ell3);
        let growth = cert.h_bound.map(|h| gsq.sqrt() - h.eval(gap));
        (pl, lap, growth)
    });
    let mut pl = ConditionTally::new();
    let mut laplacian = ConditionTally::new();
    let mut growth = cert.h_bound.map(|_| ConditionTally::new());
    for (p, l, g) in margins {
        pl.record(p);
        laplacian.record(l);
        if let (Some(t), Some(m)) = (growth.as_mut(), g) {
            t.record(m);
        }
    }
    Ok(AssumptionReport { n_samples, pl, laplacian, gradient_growth: growth })
}

/// `dist(w, W*)`.
pub fn distance_to_minimizers<O: Objective + ?Sized>(obj: &O, w: &[f64]) -> Result<f64, ObjectiveError> {
    let p = obj.project_to_minimizers(w).ok_or(ObjectiveError::NoProjection)?;
    Ok(w.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Default floor below which the PL ratio is not evaluated.
pub fn default_gap_floor(min_value: f64) -> f64 {
    1e-8 * (1.0 + min_value.abs())
}

/// Sample infimum of `‖∇L‖² / (L - L_*)` over points with gap above the floor.
///
/// This over-estimates the best admissible `ℓ1` on the region.
pub fn estimate_pl_constant<O: Objective + ?Sized>(
    obj: &O,
    region: &SampleRegion,
    n_samples: usize,
    gap_floor: Option<f64>,
    seed: u64,
    execution: Execution,
) -> Result<f64, ObjectiveError> {
    region.validate(obj.dim())?;
    let floor = gap_floor.unwrap_or_else(|| default_gap_floor(obj.min_value()));
    let ratios = map_region_samples(region, n_samples, seed, rng::domain::VERIFY, execution, |w| {
        let gap = obj.gap(w);
        if gap < floor {
            return None;
        }
        let g = obj.gradient_vec(w);
        Some(g.iter().map(|x| x * x).sum::<f64>() / gap)
    });
    ratios.into_iter().flatten().reduce(f64::min).ok_or(ObjectiveError::NoAdmissibleSamples(floor))
}

/// Fits `H(s) = C (1 + s)` with `C` 10% above the largest observed `‖∇L‖ / (1 + gap)`.
pub fn fit_h_bound<O: Objective + ?Sized>(
    obj: &O,
    region: &SampleRegion,
    n_samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<HBound, ObjectiveError> {
    region.validate(obj.dim())?;
    let ratios = map_region_samples(region, n_samples, seed, rng::domain::VERIFY, execution, |w| {
        let gap = obj.gap(w);
        let g = obj.gradient_vec(w);
        g.iter().map(|x| x * x).sum::<f64>().sqrt() / (1.0 + gap)
    });
    let max = ratios.into_iter().fold(0.0f64, f64::max);
    Ok(HBound { c: 1.1 * max, p: 1.0 })
}

/// Quadratic-growth constant of a quadratic loss: `L - L_* ≥ σ_min⁺² dist²`.
pub fn quadratic_growth_constant(q: &QuadraticLoss) -> Result<f64, ObjectiveError> {
    let s = q.sigma_min_positive().ok_or(ObjectiveError::ZeroMatrix)?;
    Ok(s * s)
}

/// Radius `R_ε` of the tube `{dist(w, W*) ≤ R_ε}` holding mass `≥ 1 - ε`, derived
/// from quadratic growth and Markov's inequality: `R_ε = sqrt(plateau / (ε σ_min⁺²))`.
pub fn concentration_radius(plateau: f64, eps: f64, growth_constant: f64) -> f64 {
    (plateau / (eps * growth_constant)).sqrt()
}
