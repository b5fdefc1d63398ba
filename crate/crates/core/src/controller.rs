//! Barrier-Lyapunov saturated adaptive tracking law.
//!
//! Filtered error `r = e' + alpha e`, auxiliary input `u = -Y theta_hat - K1 r`,
//! norm saturation `tau = sat(u)` and the projected update
//! `theta_hat' = proj(Gamma Y' r / (kappa_m^2 - m_bar |r|^2))`.
//! The robust-adaptive baseline drops both the saturation and the barrier
//! denominator.

use serde::{Deserialize, Serialize};

use crate::dynamics::{JointState, TwoLinkParams};
use crate::{Error, Mat2, ParamMatrix, ParamVector, RegressorMatrix, Result, Vec2};

/// Default projection boundary-layer width.
pub const DEFAULT_PROJ_EPS: f64 = 0.05;

/// Barrier denominator floor, relative to `kappa_m^2`.
pub const DEN_FLOOR_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub k1: Mat2,
    pub alpha: f64,
    pub gamma: ParamMatrix,
    pub theta_bar: f64,
    pub tau_bar: f64,
    /// Filtered-error bound `E_V - alpha E_Q`.
    pub kappa: f64,
    pub m_bar: f64,
    pub proj_eps: f64,
}

impl ControllerConfig {
    pub fn kappa_m(&self) -> f64 {
        self.kappa * self.m_bar.sqrt()
    }

    /// Radius of the set the projected estimate is confined to.
    pub fn theta_hat_radius(&self) -> f64 {
        self.theta_bar * (1.0 + self.proj_eps).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let sym = 0.5 * (self.k1 + self.k1.transpose());
        if (self.k1 - sym).abs().max() > 1e-12 {
            return Err(Error::Validation("K1 must be symmetric".into()));
        }
        if crate::dynamics::sym2_eigenvalues(&sym).0 <= 0.0 {
            return Err(Error::Validation("K1 must be positive definite".into()));
        }
        if self.gamma.symmetric_eigenvalues().min() <= 0.0
            || (self.gamma - self.gamma.transpose()).abs().max() > 1e-12
        {
            return Err(Error::Validation("Gamma must be symmetric positive definite".into()));
        }
        let positive = [
            ("alpha", self.alpha),
            ("theta_bar", self.theta_bar),
            ("tau_bar", self.tau_bar),
            ("kappa", self.kappa),
            ("m_bar", self.m_bar),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.proj_eps > 0.0 && self.proj_eps <= 0.1) {
            return Err(Error::Validation(format!(
                "proj_eps must lie in (0, 0.1] (got {})",
                self.proj_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdaptiveState {
    pub theta_hat: ParamVector,
}

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub q: Vec2,
    pub dq: Vec2,
    pub ddq: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub e: Vec2,
    pub de: Vec2,
    pub r: Vec2,
    pub y: RegressorMatrix,
    /// Auxiliary (unsaturated) input.
    pub u: Vec2,
    /// Applied input.
    pub tau: Vec2,
    /// Saturation deficit `tau - u`.
    pub delta_tau: Vec2,
}

pub fn filtered_error(e: &Vec2, de: &Vec2, alpha: f64) -> Vec2 {
    de + alpha * e
}

pub fn auxiliary_control(y: &RegressorMatrix, theta_hat: &ParamVector, k1: &Mat2, r: &Vec2) -> Vec2 {
    -(y * theta_hat) - k1 * r
}

/// Uniform norm saturation: pass-through when `|u| <= tau_bar`, otherwise
/// rescaled onto the sphere of radius `tau_bar`. The rescaled vector is pulled
/// in by a few ulps if rounding left its norm above `tau_bar`.
pub fn saturate(u: &Vec2, tau_bar: f64) -> Vec2 {
    let n = u.norm();
    if n <= tau_bar {
        return *u;
    }
    let mut tau = (tau_bar / n) * u;
    while tau.norm() > tau_bar {
        tau *= 1.0 - f64::EPSILON;
    }
    tau
}

fn barrier_gap(r: &Vec2, kappa_m: f64, m_bar: f64) -> Result<f64> {
    let lhs = m_bar * r.norm_squared();
    let rhs = kappa_m * kappa_m;
    if lhs >= rhs || !lhs.is_finite() {
        return Err(Error::BarrierViolation { t: f64::NAN, lhs, rhs });
    }
    Ok(rhs - lhs)
}

/// `V1 = 1/2 log(kappa_m^2 / (kappa_m^2 - m_bar |r|^2))`.
pub fn blf_value(r: &Vec2, kappa_m: f64, m_bar: f64) -> Result<f64> {
    let gap = barrier_gap(r, kappa_m, m_bar)?;
    // ln(k^2 / gap) = -ln(1 - m|r|^2/k^2); ln_1p keeps precision near r = 0.
    let x = m_bar * r.norm_squared() / (kappa_m * kappa_m);
    if x < 0.5 {
        Ok(-0.5 * (-x).ln_1p())
    } else {
        Ok(0.5 * (kappa_m * kappa_m / gap).ln())
    }
}

/// Composite Lyapunov candidate `V1 + 1/2 theta_tilde' Gamma^-1 theta_tilde`.
pub fn lyapunov_value(
    r: &Vec2,
    theta_tilde: &ParamVector,
    gamma: &ParamMatrix,
    kappa_m: f64,
    m_bar: f64,
) -> Result<f64> {
    let v1 = blf_value(r, kappa_m, m_bar)?;
    let chol = gamma
        .cholesky()
        .ok_or_else(|| Error::Validation("Gamma must be positive definite".into()))?;
    let w = chol.solve(theta_tilde);
    Ok(v1 + 0.5 * theta_tilde.dot(&w))
}

/// Smooth projection onto `|theta_hat| <= theta_bar sqrt(1 + eps)`.
///
/// Boundary function `f = (|th|^2 - theta_bar^2) / (eps theta_bar^2)`; the
/// outward component of `y` is scaled by `1 - f` inside the boundary layer.
pub fn projection(theta_hat: &ParamVector, y: &ParamVector, theta_bar: f64, eps: f64) -> ParamVector {
    let scale = eps * theta_bar * theta_bar;
    let f = (theta_hat.norm_squared() - theta_bar * theta_bar) / scale;
    let grad = theta_hat * (2.0 / scale);
    let g_dot_y = grad.dot(y);
    if f <= 0.0 || g_dot_y <= 0.0 {
        return *y;
    }
    y - grad * (f * g_dot_y / grad.norm_squared())
}

/// Right-hand side of the proposed update law.
///
/// The second return value is `true` when the barrier denominator hit its floor.
pub fn adaptation_rhs(
    y: &RegressorMatrix,
    r: &Vec2,
    config: &ControllerConfig,
    theta_hat: &ParamVector,
) -> (ParamVector, bool) {
    let km2 = config.kappa_m().powi(2);
    let floor = DEN_FLOOR_REL * km2;
    let raw = km2 - config.m_bar * r.norm_squared();
    let floored = !(raw > floor);
    let den = if floored { floor } else { raw };
    let drive = config.gamma * y.transpose() * r / den;
    (projection(theta_hat, &drive, config.theta_bar, config.proj_eps), floored)
}

/// Tracking errors and regressor for the current state and reference.
pub fn tracking_terms(
    model: &TwoLinkParams,
    alpha: f64,
    state: &JointState,
    reference: &ReferenceSample,
) -> (Vec2, Vec2, Vec2, RegressorMatrix) {
    let e = state.q - reference.q;
    let de = state.dq - reference.dq;
    let r = filtered_error(&e, &de, alpha);
    let y = model.regressor(&state.q, &state.dq, &de, &reference.ddq, &r, alpha);
    (e, de, r, y)
}

/// Proposed controller evaluated in one pass. Fails if `r` is outside the barrier set.
pub fn control_pipeline(
    model: &TwoLinkParams,
    config: &ControllerConfig,
    state: &JointState,
    reference: &ReferenceSample,
    theta_hat: &ParamVector,
    t: f64,
) -> Result<ControlOutput> {
    let (e, de, r, y) = tracking_terms(model, config.alpha, state, reference);
    if let Err(Error::BarrierViolation { lhs, rhs, .. }) = barrier_gap(&r, config.kappa_m(), config.m_bar) {
        return Err(Error::BarrierViolation { t, lhs, rhs });
    }
    let u = auxiliary_control(&y, theta_hat, &config.k1, &r);
    let tau = saturate(&u, config.tau_bar);
    Ok(ControlOutput { e, de, r, y, u, tau, delta_tau: tau - u })
}

/// Robust-adaptive baseline: same certainty-equivalence input, never clipped.
pub fn baseline_control(y: &RegressorMatrix, theta_hat: &ParamVector, k1: &Mat2, r: &Vec2) -> Vec2 {
    auxiliary_control(y, theta_hat, k1, r)
}

pub fn baseline_adaptation_rhs(
    y: &RegressorMatrix,
    r: &Vec2,
    gamma_c: &ParamMatrix,
    theta_hat: &ParamVector,
    theta_bar: f64,
    eps: f64,
) -> ParamVector {
    projection(theta_hat, &(gamma_c * y.transpose() * r), theta_bar, eps)
}

/// Baseline counterpart of [`control_pipeline`]; `tau == u`.
pub fn baseline_pipeline(
    model: &TwoLinkParams,
    config: &ControllerConfig,
    state: &JointState,
    reference: &ReferenceSample,
    theta_hat: &ParamVector,
) -> ControlOutput {
    let (e, de, r, y) = tracking_terms(model, config.alpha, state, reference);
    let u = baseline_control(&y, theta_hat, &config.k1, &r);
    ControlOutput { e, de, r, y, u, tau: u, delta_tau: Vec2::zeros() }
}
