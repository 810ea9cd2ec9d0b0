//! Monte Carlo observables over ensemble snapshots.
//!
//! Reductions run over paths in index order with compensated summation, so a
//! given snapshot always yields the same numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::objective::{distance_to_minimizers, Objective, ObjectiveError};
use crate::sde_sim::EnsembleSnapshot;
use crate::stats::{mean_and_stderr, proportion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("snapshot at t = {0} is flagged diverged")]
    DivergedSnapshot(f64),
    #[error("objective has no minimizer projection; tube sets need one")]
    NoProjection,
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error("no snapshot recorded at or before the horizon T = {0}")]
    NoSnapshotBeforeHorizon(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<ObjectiveError> for EstimatorError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::NoProjection => EstimatorError::NoProjection,
            other => EstimatorError::InvalidParameter(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: usize,
}

/// An empirical frequency with binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub stderr: f64,
    pub hits: usize,
    pub n: usize,
}

impl Proportion {
    pub fn new(hits: usize, n: usize) -> Self {
        let (value, stderr) = proportion(hits, n);
        Self { value, stderr, hits, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SetDescriptor {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{w : dist(w, W*) ≤ radius}` for the objective passed alongside.
    Tube {
        radius: f64,
    },
}

impl SetDescriptor {
    pub fn validate(&self, dim: usize) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::InvalidSet(m));
        match self {
            SetDescriptor::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!("ball center has dimension {}, expected {dim}", center.len()));
                }
                if !(*radius > 0.0) {
                    return bad("ball radius must be > 0".into());
                }
            }
            SetDescriptor::Box { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return bad(format!("box bounds must have dimension {dim}"));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return bad("box needs lo < hi componentwise".into());
                }
            }
            SetDescriptor::Tube { radius } => {
                if !(*radius > 0.0) {
                    return bad("tube radius must be > 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn contains<O: Objective + ?Sized>(&self, w: &[f64], obj: &O) -> Result<bool, EstimatorError> {
        Ok(match self {
            SetDescriptor::Ball { center, radius } => {
                w.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
            SetDescriptor::Box { lo, hi } => w.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h),
            SetDescriptor::Tube { radius } => distance_to_minimizers(obj, w)? <= *radius,
        })
    }

    /// Short column label for CSV output.
    pub fn label(&self) -> String {
        match self {
            SetDescriptor::Ball { radius, .. } => format!("mass_ball_r{radius}"),
            SetDescriptor::Box { .. } => "mass_box".into(),
            SetDescriptor::Tube { radius } => format!("mass_tube_r{radius}"),
        }
    }
}

fn check(snap: &EnsembleSnapshot) -> Result<(), EstimatorError> {
    if snap.n_paths() == 0 {
        return Err(EstimatorError::EmptyEnsemble);
    }
    if snap.diverged {
        return Err(EstimatorError::DivergedSnapshot(snap.t));
    }
    Ok(())
}

/// Per-path optimality gaps, in path order.
pub fn path_gaps<O: Objective + ?Sized>(snap: &EnsembleSnapshot, obj: &O, execution: Execution) -> Vec<f64> {
    exec::map_indexed(execution, snap.n_paths(), |i| obj.gap(snap.position(i)))
}

/// Mean of `L(w_i) - L_*` over paths with its standard error.
pub fn mc_expected_gap<O: Objective + ?Sized>(
    snap: &EnsembleSnapshot,
    obj: &O,
    execution: Execution,
) -> Result<GapEstimate, EstimatorError> {
    check(snap)?;
    let gaps = path_gaps(snap, obj, execution);
    let (mean, stderr) = mean_and_stderr(&gaps);
    Ok(GapEstimate { t: snap.t, mean, stderr, n_effective: gaps.len() })
}

/// Fraction of particles in `set`.
pub fn mass_on_set<O: Objective + ?Sized>(
    snap: &EnsembleSnapshot,
    set: &SetDescriptor,
    obj: &O,
    execution: Execution,
) -> Result<Proportion, EstimatorError> {
    check(snap)?;
    set.validate(snap.dim)?;
    if matches!(set, SetDescriptor::Tube { .. }) && obj.project_to_minimizers(snap.position(0)).is_none() {
        return Err(EstimatorError::NoProjection);
    }
    let inside = exec::map_indexed(execution, snap.n_paths(), |i| set.contains(snap.position(i), obj));
    let mut hits = 0;
    for r in inside {
        if r? {
            hits += 1;
        }
    }
    Ok(Proportion::new(hits, snap.n_paths()))
}

/// Fraction of particles with `L(w) - L_* ≥ eps`.
pub fn tail_probability_gap<O: Objective + ?Sized>(
    snap: &EnsembleSnapshot,
    obj: &O,
    eps: f64,
    execution: Execution,
) -> Result<Proportion, EstimatorError> {
    check(snap)?;
    if !(eps > 0.0) {
        return Err(EstimatorError::InvalidParameter(format!("eps = {eps} must be > 0")));
    }
    let hits = path_gaps(snap, obj, execution).into_iter().filter(|&g| g >= eps).count();
    Ok(Proportion::new(hits, snap.n_paths()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPoint {
    pub t: f64,
    /// `NaN` when the event is empty.
    pub mean: f64,
    pub stderr: f64,
    pub n_event: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGap {
    pub radius: f64,
    /// Realized horizon: time of the last snapshot at or before `T`.
    pub horizon: f64,
    pub event: Proportion,
    /// Set when no path stayed in the ball; conditional means are then `NaN`.
    pub empty_event: bool,
    pub points: Vec<ConditionalPoint>,
}

/// Mean gap over the paths with `sup_{s ≤ T} ‖w_s‖ ≤ R`, at every snapshot
/// time `≤ T`, together with the event frequency.
pub fn conditional_gap_on_ball_event<O: Objective + ?Sized>(
    snapshots: &[EnsembleSnapshot],
    obj: &O,
    radius: f64,
    horizon: f64,
    execution: Execution,
) -> Result<ConditionalGap, EstimatorError> {
    if !(radius >= 0.0) {
        return Err(EstimatorError::InvalidParameter(format!("radius = {radius} must be >= 0")));
    }
    let tol = 1e-9 * (1.0 + horizon.abs());
    let within: Vec<&EnsembleSnapshot> = snapshots.iter().filter(|s| s.t <= horizon + tol).collect();
    let last = *within.last().ok_or(EstimatorError::NoSnapshotBeforeHorizon(horizon))?;
    for s in &within {
        check(s)?;
    }
    let n = last.n_paths();
    let in_event: Vec<bool> = last.sup_norm.iter().map(|&s| s <= radius).collect();
    let hits = in_event.iter().filter(|&&b| b).count();
    let points = within
        .iter()
        .map(|s| {
            let gaps = path_gaps(s, obj, execution);
            let kept: Vec<f64> = gaps.into_iter().zip(&in_event).filter(|(_, &b)| b).map(|(g, _)| g).collect();
            let (mean, stderr) = if kept.is_empty() { (f64::NAN, f64::NAN) } else { mean_and_stderr(&kept) };
            ConditionalPoint { t: s.t, mean, stderr, n_event: kept.len() }
        })
        .collect();
    Ok(ConditionalGap { radius, horizon: last.t, event: Proportion::new(hits, n), empty_event: hits == 0, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Flat, QuadraticLoss, SquaredNorm};
    use nalgebra::{DMatrix, DVector};

    fn snap1d(xs: &[f64], sup: &[f64], t: f64) -> EnsembleSnapshot {
        EnsembleSnapshot {
            t,
            step: 0,
            dim: 1,
            positions: xs.to_vec(),
            sup_norm: sup.to_vec(),
            diverged: false,
            seed: 0,
        }
    }

    #[test]
    fn gap_examples() {
        let q = SquaredNorm::new(1, 1.0);
        let g = mc_expected_gap(&snap1d(&[0.0, 0.0, 0.0], &[0.0; 3], 1.0), &q, Execution::Sequential).unwrap();
        assert_eq!((g.mean, g.stderr, g.n_effective), (0.0, 0.0, 3));
        let g = mc_expected_gap(&snap1d(&[1.0, -1.0], &[1.0; 2], 1.0), &q, Execution::Parallel).unwrap();
        assert_eq!((g.mean, g.stderr), (1.0, 0.0));
        assert_eq!(
            mc_expected_gap(&snap1d(&[], &[], 0.0), &q, Execution::Sequential).unwrap_err(),
            EstimatorError::EmptyEnsemble
        );
        let mut d = snap1d(&[1.0], &[1.0], 2.0);
        d.diverged = true;
        assert!(matches!(mc_expected_gap(&d, &q, Execution::Sequential), Err(EstimatorError::DivergedSnapshot(_))));
    }

    #[test]
    fn mass_examples() {
        let q = SquaredNorm::new(2, 1.0);
        let s = EnsembleSnapshot {
            t: 0.0,
            step: 0,
            dim: 2,
            positions: vec![0.0; 8],
            sup_norm: vec![0.0; 4],
            diverged: false,
            seed: 0,
        };
        let ball = SetDescriptor::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        assert_eq!(mass_on_set(&s, &ball, &q, Execution::Sequential).unwrap().value, 1.0);

        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let quad = QuadraticLoss::new(a, DVector::zeros(2)).unwrap();
        let s = EnsembleSnapshot {
            t: 0.0,
            step: 0,
            dim: 2,
            positions: vec![1e6, 3.0, -2e5, 1.0],
            sup_norm: vec![0.0; 2],
            diverged: false,
            seed: 0,
        };
        let tube = SetDescriptor::Tube { radius: 1e9 };
        assert_eq!(mass_on_set(&s, &tube, &quad, Execution::Sequential).unwrap().value, 1.0);
        let tube = SetDescriptor::Tube { radius: 3e5 };
        let p = mass_on_set(&s, &tube, &quad, Execution::Sequential).unwrap();
        assert_eq!((p.hits, p.n), (1, 2));
    }

    struct NoProj;
    impl Objective for NoProj {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, w: &[f64]) -> f64 {
            w[0] * w[0]
        }
        fn gradient(&self, w: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * w[0];
        }
        fn laplacian(&self, _w: &[f64]) -> f64 {
            2.0
        }
        fn min_value(&self) -> f64 {
            0.0
        }
    }

    #[test]
    fn tube_needs_projection() {
        let s = snap1d(&[0.5], &[0.5], 0.0);
        let e = mass_on_set(&s, &SetDescriptor::Tube { radius: 1.0 }, &NoProj, Execution::Sequential).unwrap_err();
        assert_eq!(e, EstimatorError::NoProjection);
    }

    #[test]
    fn set_validation() {
        assert!(SetDescriptor::Box { lo: vec![1.0], hi: vec![1.0] }.validate(1).is_err());
        assert!(SetDescriptor::Ball { center: vec![0.0], radius: 0.0 }.validate(1).is_err());
        assert!(SetDescriptor::Tube { radius: -1.0 }.validate(3).is_err());
    }

    #[test]
    fn tail_examples() {
        let q = SquaredNorm::new(1, 1.0);
        let s = snap1d(&[0.0, 0.0], &[0.0; 2], 0.0);
        assert_eq!(tail_probability_gap(&s, &q, 0.1, Execution::Sequential).unwrap().value, 0.0);
        let s = snap1d(&[0.05f64.sqrt(), 0.2f64.sqrt()], &[0.0; 2], 0.0);
        assert_eq!(tail_probability_gap(&s, &q, 0.1, Execution::Sequential).unwrap().value, 0.5);
    }

    #[test]
    fn nested_sets_are_monotone() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let s = snap1d(&xs, &vec![0.0; 1000], 0.0);
        let f = Flat::new(1);
        let mut prev = 0.0;
        for r in [0.1, 0.5, 1.0, 2.0, 2.9, 3.5] {
            let m =
                mass_on_set(&s, &SetDescriptor::Box { lo: vec![-r], hi: vec![r] }, &f, Execution::Sequential).unwrap();
            assert!(m.value >= prev);
            prev = m.value;
        }
    }

    #[test]
    fn conditional_examples() {
        let q = SquaredNorm::new(1, 1.0);
        let snaps = vec![
            snap1d(&[1.0, -0.5, 2.0], &[1.0, 0.5, 2.0], 0.0),
            snap1d(&[0.5, 0.1, 3.0], &[1.0, 0.5, 3.0], 1.0),
            snap1d(&[9.0, 9.0, 9.0], &[9.0; 3], 2.0),
        ];
        let c = conditional_gap_on_ball_event(&snaps, &q, f64::INFINITY, 1.0, Execution::Sequential).unwrap();
        assert_eq!(c.horizon, 1.0);
        assert_eq!(c.points.len(), 2);
        for (p, s) in c.points.iter().zip(&snaps) {
            let g = mc_expected_gap(s, &q, Execution::Sequential).unwrap();
            assert_eq!((p.mean, p.stderr), (g.mean, g.stderr));
        }
        let c = conditional_gap_on_ball_event(&snaps, &q, 1.0, 1.0, Execution::Sequential).unwrap();
        assert_eq!((c.event.hits, c.event.n), (2, 3));
        assert_eq!(c.points[1].mean, (0.25 + 0.01) / 2.0);
        let c = conditional_gap_on_ball_event(&snaps, &q, 0.0, 1.0, Execution::Sequential).unwrap();
        assert!(c.empty_event);
        assert_eq!(c.event.value, 0.0);
        assert!(c.points[0].mean.is_nan());
        assert!(conditional_gap_on_ball_event(&snaps[1..], &q, 1.0, 0.5, Execution::Sequential).is_err());
    }
}
