//! Closed-form bound curves for overlay against Monte Carlo and PDE observables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::PLCertificate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("inadmissible sigma: need ell1 > sigma * ell2, got ell1 = {ell1}, sigma * ell2 = {prod}")]
    InadmissibleSigma { ell1: f64, prod: f64 },
    #[error("event probability must lie in (0, 1], got {0}")]
    ZeroEventProbability(f64),
    #[error("step too large: eta = {eta} exceeds 1/L = {limit}")]
    StepTooLarge { eta: f64, limit: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum BoundKind {
    DecayUpper,
    Plateau,
    QuadraticLower,
    DirichletDecay,
    HigherOrder(u32),
    LocalConditional,
    SgdRecursion,
    LocalProbability,
}

/// A time-indexed bound. `params` records every input, so a curve can be
/// serialized and re-evaluated elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub params: BTreeMap<String, f64>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `e^{-r t}` and `(1 - e^{-r t}) / r` evaluated stably for small `r t`.
fn decay_pair(rate: f64, t: f64) -> (f64, f64) {
    let x = rate * t;
    let e = (-x).exp();
    let saturating = if x.abs() < 1e-8 { t * (1.0 - 0.5 * x) } else { -(-x).exp_m1() / rate };
    (e, saturating)
}

impl BoundCurve {
    fn p(&self, key: &str) -> f64 {
        self.params[key]
    }

    /// Evaluates the curve at `t ≥ 0` (`k` for discrete-step kinds). Returns
    /// `f64::INFINITY` where the bound is vacuous, e.g. the `1/t` bounds at `t = 0`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.kind {
            BoundKind::DecayUpper => {
                let rate = self.p("ell1") - self.p("sigma") * self.p("ell2");
                let (e, s) = decay_pair(rate, t);
                self.p("gap0") * e + self.p("sigma") * self.p("ell3") * s
            }
            BoundKind::Plateau => self.p("value"),
            BoundKind::QuadraticLower => {
                let s1 = self.p("sigma1");
                let (e, s) = decay_pair(4.0 * s1 * s1, t);
                self.p("gap0") * e + 2.0 * self.p("sigma") * self.p("frob_sq") * s
            }
            BoundKind::DirichletDecay => {
                if t <= 0.0 {
                    f64::INFINITY
                } else {
                    self.p("phi0_sq_norm") / (2.0 * t)
                }
            }
            BoundKind::HigherOrder(k) => {
                if t <= 0.0 {
                    f64::INFINITY
                } else {
                    (k as f64 / (2.0 * t)).powi(k as i32) * self.p("phi0_sq_norm")
                }
            }
            BoundKind::LocalConditional => {
                let l1 = self.p("ell1p");
                let (e, s) = decay_pair(l1, t);
                (self.p("gap0") * e + self.p("sigma") * self.p("ell2p") * s) / self.p("p_event")
            }
            BoundKind::SgdRecursion => sgd_closed_form(
                self.p("gap0"),
                self.p("mu"),
                self.p("eta"),
                self.p("l_smooth"),
                self.p("delta_var"),
                t.max(0.0).round() as u64,
            ),
            BoundKind::LocalProbability => self.p("value"),
        }
    }

    /// Value approached as `t → ∞`.
    pub fn limit(&self) -> f64 {
        match self.kind {
            BoundKind::DecayUpper => {
                self.p("sigma") * self.p("ell3") / (self.p("ell1") - self.p("sigma") * self.p("ell2"))
            }
            BoundKind::Plateau | BoundKind::LocalProbability => self.p("value"),
            BoundKind::QuadraticLower => {
                let s1 = self.p("sigma1");
                2.0 * self.p("sigma") * self.p("frob_sq") / (4.0 * s1 * s1)
            }
            BoundKind::DirichletDecay | BoundKind::HigherOrder(_) => 0.0,
            BoundKind::LocalConditional => self.p("sigma") * self.p("ell2p") / (self.p("ell1p") * self.p("p_event")),
            BoundKind::SgdRecursion => self.p("eta") * self.p("l_smooth") * self.p("delta_var") / (2.0 * self.p("mu")),
        }
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// Column label used in CSV outputs.
    pub fn label(&self) -> String {
        match self.kind {
            BoundKind::DecayUpper => "bound_decay_upper".into(),
            BoundKind::Plateau => "bound_plateau".into(),
            BoundKind::QuadraticLower => "bound_quadratic_lower".into(),
            BoundKind::DirichletDecay => "bound_dirichlet".into(),
            BoundKind::HigherOrder(k) => format!("bound_k{k}"),
            BoundKind::LocalConditional => "bound_local_conditional".into(),
            BoundKind::SgdRecursion => "bound_sgd_recursion".into(),
            BoundKind::LocalProbability => "bound_local_probability".into(),
        }
    }
}

/// `gap0 e^{-(ℓ1-σℓ2)t} + σℓ3 (1 - e^{-(ℓ1-σℓ2)t}) / (ℓ1-σℓ2)`.
pub fn decay_upper_bound(gap0: f64, cert: &PLCertificate, sigma: f64) -> Result<BoundCurve, BoundError> {
    if !cert.admits(sigma) {
        return Err(BoundError::InadmissibleSigma { ell1: cert.ell1, prod: sigma * cert.ell2 });
    }
    Ok(BoundCurve {
        kind: BoundKind::DecayUpper,
        params: params(&[
            ("gap0", gap0),
            ("ell1", cert.ell1),
            ("ell2", cert.ell2),
            ("ell3", cert.ell3),
            ("sigma", sigma),
        ]),
    })
}

/// Constant curve at `σℓ3 / (ℓ1 - σℓ2)`.
pub fn plateau(cert: &PLCertificate, sigma: f64) -> Result<BoundCurve, BoundError> {
    if !cert.admits(sigma) {
        return Err(BoundError::InadmissibleSigma { ell1: cert.ell1, prod: sigma * cert.ell2 });
    }
    Ok(BoundCurve { kind: BoundKind::Plateau, params: params(&[("value", cert.plateau(sigma))]) })
}

/// `gap0 e^{-4σ₁²t} + 2σ ‖A‖_F² (1 - e^{-4σ₁²t}) / (4σ₁²)`, with `σ₁` the largest
/// singular value.
pub fn quadratic_lower_bound(gap0: f64, sigma1: f64, frob_sq: f64, sigma: f64) -> Result<BoundCurve, BoundError> {
    if !(sigma1 > 0.0) {
        return Err(BoundError::InvalidParameter(format!("sigma1 = {sigma1} must be positive")));
    }
    Ok(BoundCurve {
        kind: BoundKind::QuadraticLower,
        params: params(&[("gap0", gap0), ("sigma1", sigma1), ("frob_sq", frob_sq), ("sigma", sigma)]),
    })
}

/// `∫φ0² dπ / (2t)`.
pub fn dirichlet_decay_bound(phi0_sq_norm: f64) -> BoundCurve {
    BoundCurve { kind: BoundKind::DirichletDecay, params: params(&[("phi0_sq_norm", phi0_sq_norm)]) }
}

/// `(k / 2t)^k ∫φ0² dπ`.
pub fn higher_order_bound(phi0_sq_norm: f64, k: u32) -> Result<BoundCurve, BoundError> {
    if k == 0 {
        return Err(BoundError::InvalidParameter("order k must be >= 1".into()));
    }
    Ok(BoundCurve { kind: BoundKind::HigherOrder(k), params: params(&[("phi0_sq_norm", phi0_sq_norm)]) })
}

/// `(gap0 e^{-ℓ1′t} + σℓ2′(1 - e^{-ℓ1′t})/ℓ1′) / P(Ω_{R,T})`.
pub fn local_conditional_bound(
    gap0: f64,
    ell1p: f64,
    ell2p: f64,
    sigma: f64,
    p_event: f64,
) -> Result<BoundCurve, BoundError> {
    if !(p_event > 0.0 && p_event <= 1.0) {
        return Err(BoundError::ZeroEventProbability(p_event));
    }
    if !(ell1p > 0.0) {
        return Err(BoundError::InvalidParameter(format!("ell1' = {ell1p} must be positive")));
    }
    Ok(BoundCurve {
        kind: BoundKind::LocalConditional,
        params: params(&[("gap0", gap0), ("ell1p", ell1p), ("ell2p", ell2p), ("sigma", sigma), ("p_event", p_event)]),
    })
}

/// Lower bound on `P(L(w_T) - L_* ≤ ε)`, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBound {
    pub value: f64,
    pub clamped: bool,
}

/// `1 - (2σℓ2′/(ℓ1′ε) + δ)`.
pub fn local_probability_bound(
    sigma: f64,
    ell1p: f64,
    ell2p: f64,
    eps: f64,
    delta: f64,
) -> Result<ProbabilityBound, BoundError> {
    if !(eps > 0.0 && delta >= 0.0 && ell1p > 0.0) {
        return Err(BoundError::InvalidParameter("need eps > 0, delta >= 0, ell1' > 0".into()));
    }
    let raw = 1.0 - (2.0 * sigma * ell2p / (ell1p * eps) + delta);
    let value = raw.clamp(0.0, 1.0);
    Ok(ProbabilityBound { value, clamped: value != raw })
}

fn sgd_closed_form(gap0: f64, mu: f64, eta: f64, l: f64, delta: f64, k: u64) -> f64 {
    let q = 1.0 - mu * eta;
    let qk = q.powf(k as f64);
    qk * gap0 + 0.5 * eta * eta * l * delta * (1.0 - qk) / (mu * eta)
}

/// Closed form of `E_{j+1} = (1 - μη) E_j + η²Lδ/2`, `E_0 = gap0`, after `k` steps.
pub fn sgd_recursion_bound(
    gap0: f64,
    mu: f64,
    eta: f64,
    l_smooth: f64,
    delta_var: f64,
    k: u64,
) -> Result<f64, BoundError> {
    Ok(sgd_recursion_curve(gap0, mu, eta, l_smooth, delta_var)?.eval(k as f64))
}

/// The SGD recursion as a curve indexed by the step count.
pub fn sgd_recursion_curve(
    gap0: f64,
    mu: f64,
    eta: f64,
    l_smooth: f64,
    delta_var: f64,
) -> Result<BoundCurve, BoundError> {
    if !(eta > 0.0 && l_smooth > 0.0) {
        return Err(BoundError::InvalidParameter("need eta > 0 and L > 0".into()));
    }
    if eta > 1.0 / l_smooth {
        return Err(BoundError::StepTooLarge { eta, limit: 1.0 / l_smooth });
    }
    if !(mu * eta > 0.0 && mu * eta < 1.0) {
        return Err(BoundError::InvalidParameter(format!("need 0 < mu*eta < 1, got {}", mu * eta)));
    }
    Ok(BoundCurve {
        kind: BoundKind::SgdRecursion,
        params: params(&[("gap0", gap0), ("mu", mu), ("eta", eta), ("l_smooth", l_smooth), ("delta_var", delta_var)]),
    })
}
