//! Sampling probes of the Lyapunov conditions
//! A: `𝔏V ≤ C + C V`, and B: `𝔏V ≥ -C - C V`, `‖∇V‖ ≤ C + C V`.

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::objective::{map_region_samples, Objective, SampleRegion};
use crate::rng;

/// Samples closer than this to the origin are skipped (`log log(e + r)` is
/// not twice differentiable there).
pub const ORIGIN_EXCLUSION: f64 = 1e-8;
/// Growth factor per radius doubling treated as an unbounded trend.
pub const TREND_FACTOR: f64 = 1.5;

/// A radial Lyapunov candidate `V`.
pub trait Lyapunov: Sync {
    fn name(&self) -> String;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64], out: &mut [f64]);
    fn laplacian(&self, w: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLyapunov {
    /// `log(1 + ‖w‖²)`.
    Log1pSq,
    /// `log(log(e + ‖w‖))`.
    LogLog,
}

fn radius(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl NamedLyapunov {
    /// `(V'(r), V''(r))`.
    fn radial(&self, r: f64) -> (f64, f64) {
        match self {
            NamedLyapunov::Log1pSq => {
                let q = 1.0 + r * r;
                (2.0 * r / q, (2.0 * q - 4.0 * r * r) / (q * q))
            }
            NamedLyapunov::LogLog => {
                let u = std::f64::consts::E + r;
                let g = u.ln();
                (1.0 / (g * u), -(1.0 + g) / (g * g * u * u))
            }
        }
    }
}

impl Lyapunov for NamedLyapunov {
    fn name(&self) -> String {
        match self {
            NamedLyapunov::Log1pSq => "log1p_sq".into(),
            NamedLyapunov::LogLog => "loglog".into(),
        }
    }

    fn value(&self, w: &[f64]) -> f64 {
        let r = radius(w);
        match self {
            NamedLyapunov::Log1pSq => (r * r).ln_1p(),
            NamedLyapunov::LogLog => (std::f64::consts::E + r).ln().ln(),
        }
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let r = radius(w);
        match self {
            NamedLyapunov::Log1pSq => {
                let q = 1.0 + r * r;
                out.iter_mut().zip(w).for_each(|(o, x)| *o = 2.0 * x / q);
            }
            NamedLyapunov::LogLog => {
                let (vp, _) = self.radial(r);
                let s = if r > 0.0 { vp / r } else { 0.0 };
                out.iter_mut().zip(w).for_each(|(o, x)| *o = s * x);
            }
        }
    }

    fn laplacian(&self, w: &[f64]) -> f64 {
        let d = w.len() as f64;
        let r = radius(w);
        match self {
            NamedLyapunov::Log1pSq => {
                let q = 1.0 + r * r;
                2.0 * d / q - 4.0 * r * r / (q * q)
            }
            NamedLyapunov::LogLog => {
                let (vp, vpp) = self.radial(r);
                vpp + (d - 1.0) * vp / r
            }
        }
    }
}

/// `𝔏V = σΔV - ⟨∇L, ∇V⟩`.
pub fn generator_on<O: Objective + ?Sized, V: Lyapunov + ?Sized>(obj: &O, v: &V, sigma: f64, w: &[f64]) -> f64 {
    let gl = obj.gradient_vec(w);
    let mut gv = vec![0.0; w.len()];
    v.gradient(w, &mut gv);
    sigma * v.laplacian(w) - gl.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusFit {
    pub radius: f64,
    pub n_used: usize,
    /// Smallest `C ≥ 0` with `𝔏V ≤ C(1 + V)` on the samples.
    pub c_a: f64,
    /// Smallest `C ≥ 0` with `𝔏V ≥ -C(1 + V)` and `‖∇V‖ ≤ C(1 + V)`.
    pub c_b: f64,
    /// Smallest `C` with `⟨∇L, w⟩ ≤ C(1 + ‖w‖² log(1 + ‖w‖²))`.
    pub c_inner_a: f64,
    /// Smallest `C ≥ 0` with `⟨∇L, w⟩ ≥ -C ‖w‖² log‖w‖ log log(1 + ‖w‖)`
    /// over samples with `‖w‖ > e`; `None` when there are none.
    pub c_inner_b: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Fitted constant on the largest radius.
    pub fitted_c: f64,
    pub unbounded_trend: bool,
    pub satisfied_on_probe: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lyapunov: String,
    pub sigma: f64,
    pub fits: Vec<RadiusFit>,
    pub condition_a: Verdict,
    pub condition_b: Verdict,
}

/// `(𝔏V/(1+V), condition-B ratio, inner-product A ratio, inner-product B ratio)`.
type Sample = (f64, f64, f64, Option<f64>);

fn verdict(cs: &[f64]) -> Verdict {
    let n = cs.len();
    let finite = cs.iter().all(|c| c.is_finite());
    let unbounded_trend = n >= 3 && {
        let (a, b, c) = (cs[n - 3], cs[n - 2], cs[n - 1]);
        c > TREND_FACTOR * b && b > TREND_FACTOR * a && c > 0.0
    };
    let satisfied = finite && !unbounded_trend;
    Verdict {
        fitted_c: cs.last().copied().unwrap_or(f64::NAN),
        unbounded_trend,
        satisfied_on_probe: satisfied,
        message: if satisfied {
            "finite constant, no growth across radii".into()
        } else {
            "condition not satisfied on probe".into()
        },
    }
}

/// Fits the constants of conditions A and B on balls of radius
/// `R/8, R/4, R/2, R` (`n_samples` uniform points each).
pub fn condition_ab_check<O: Objective + ?Sized, V: Lyapunov + ?Sized>(
    obj: &O,
    sigma: f64,
    v: &V,
    sample_radius: f64,
    n_samples: usize,
    seed: u64,
    execution: Execution,
) -> ConditionReport {
    let d = obj.dim();
    let radii: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|k| sample_radius / k).collect();
    let fits: Vec<RadiusFit> = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let region = SampleRegion::ball(vec![0.0; d], r);
            let rows = map_region_samples(
                &region,
                n_samples,
                seed.wrapping_add(k as u64),
                rng::domain::PROBE,
                execution,
                |w| {
                    let rr = radius(w);
                    if rr < ORIGIN_EXCLUSION {
                        return None;
                    }
                    let lv = generator_on(obj, v, sigma, w);
                    let one_v = 1.0 + v.value(w);
                    let mut gv = vec![0.0; d];
                    v.gradient(w, &mut gv);
                    let gvn = radius(&gv);
                    let inner: f64 = obj.gradient_vec(w).iter().zip(w).map(|(a, b)| a * b).sum();
                    let ia = inner / (1.0 + rr * rr * (rr * rr).ln_1p());
                    let ib = (rr > std::f64::consts::E).then(|| -inner / (rr * rr * rr.ln() * rr.ln_1p().ln()));
                    Some((lv / one_v, (-lv / one_v).max(gvn / one_v), ia, ib))
                },
            );
            let used: Vec<_> = rows.into_iter().flatten().collect();
            let fold = |f: fn(&Sample) -> f64| used.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let ibs: Vec<f64> = used.iter().filter_map(|x| x.3).collect();
            RadiusFit {
                radius: r,
                n_used: used.len(),
                c_a: fold(|x| x.0).max(0.0),
                c_b: fold(|x| x.1).max(0.0),
                c_inner_a: fold(|x| x.2),
                c_inner_b: (!ibs.is_empty()).then(|| ibs.iter().copied().fold(0.0, f64::max)),
            }
        })
        .collect();
    let ca: Vec<f64> = fits.iter().map(|f| f.c_a).collect();
    let cb: Vec<f64> = fits.iter().map(|f| f.c_b).collect();
    ConditionReport { lyapunov: v.name(), sigma, condition_a: verdict(&ca), condition_b: verdict(&cb), fits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Flat, SquaredNorm};

    struct Quartic;
    impl Objective for Quartic {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, w: &[f64]) -> f64 {
            w.iter().map(|x| x.powi(4)).sum()
        }
        fn gradient(&self, w: &[f64], out: &mut [f64]) {
            out.iter_mut().zip(w).for_each(|(o, x)| *o = 4.0 * x.powi(3));
        }
        fn laplacian(&self, w: &[f64]) -> f64 {
            w.iter().map(|x| 12.0 * x * x).sum()
        }
        fn min_value(&self) -> f64 {
            0.0
        }
    }

    fn fd_check<V: Lyapunov>(v: &V, w: &[f64]) {
        let h = 1e-4;
        let mut g = vec![0.0; w.len()];
        v.gradient(w, &mut g);
        let mut lap = 0.0;
        for j in 0..w.len() {
            let mut p = w.to_vec();
            let mut m = w.to_vec();
            p[j] += h;
            m[j] -= h;
            let fd = (v.value(&p) - v.value(&m)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7, "grad {fd} vs {}", g[j]);
            lap += (v.value(&p) - 2.0 * v.value(w) + v.value(&m)) / (h * h);
        }
        assert!((lap - v.laplacian(w)).abs() < 1e-4 * (1.0 + lap.abs()), "lap {lap} vs {}", v.laplacian(w));
    }

    #[test]
    fn named_lyapunov_derivatives() {
        for w in [vec![0.7], vec![-2.0], vec![0.3, -1.1], vec![3.0, 4.0, 0.5]] {
            fd_check(&NamedLyapunov::Log1pSq, &w);
            fd_check(&NamedLyapunov::LogLog, &w);
        }
    }

    #[test]
    fn squared_norm_satisfies_a_with_bounded_constant() {
        let obj = SquaredNorm::new(2, 1.0);
        let r = condition_ab_check(&obj, 0.5, &NamedLyapunov::Log1pSq, 20.0, 4000, 1, Execution::Parallel);
        assert!(r.condition_a.satisfied_on_probe);
        // oracle: 𝔏V = σ(2d/q - 4r²/q²) - 4r²/q with q = 1 + r², on a fine radial grid
        let mut sup = f64::NEG_INFINITY;
        for k in 1..200_000 {
            let rr = k as f64 * 1e-4;
            let q = 1.0 + rr * rr;
            let lv = 0.5 * (4.0 / q - 4.0 * rr * rr / (q * q)) - 4.0 * rr * rr / q;
            sup = sup.max(lv / (1.0 + q.ln()));
        }
        assert!(r.condition_a.fitted_c <= sup + 1e-12);
        assert!(r.condition_a.fitted_c > 0.5 * sup);
        assert!(r.fits.iter().all(|f| f.c_inner_a <= 2.0 + 1e-12));
    }

    #[test]
    fn flat_objective_satisfies_both() {
        for v in [NamedLyapunov::Log1pSq, NamedLyapunov::LogLog] {
            let r = condition_ab_check(&Flat::new(2), 1.0, &v, 50.0, 2000, 3, Execution::Sequential);
            assert!(r.condition_a.satisfied_on_probe);
            assert!(r.condition_b.satisfied_on_probe);
        }
    }

    #[test]
    fn quartic_fails_b_on_probe() {
        let r = condition_ab_check(&Quartic, 1.0, &NamedLyapunov::Log1pSq, 40.0, 2000, 2, Execution::Sequential);
        assert!(r.condition_b.unbounded_trend, "{r:?}");
        assert_eq!(r.condition_b.message, "condition not satisfied on probe");
        assert!(r.condition_a.satisfied_on_probe);
    }
}
