//! Feasibility of the constrained tracking problem.
//!
//! State bounds are converted into tracking-error margins, the filter gain is
//! checked against `alpha < E_V / E_Q`, and the input bound is compared with the
//! smallest admissible value
//!
//! ```text
//! tau_min = theta_bar (alpha^2 E_Q + alpha E_Q + Vd + alpha3 + 2) + d_bar
//!         + (E_V - alpha E_Q) (theta_bar (2 alpha + 3) + lmax(K1) - lmin(K1))
//!         = omega1 + omega2 V_bar - omega3 Q_bar
//! ```

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::sym2_eigenvalues;
use crate::{Error, Mat2, Result, Vec2};

/// Relative tolerance for agreement of the two `tau_min` forms.
pub const FORM_AGREEMENT_TOL: f64 = 1e-9;
pub const BISECTION_TOL: f64 = 1e-6;
pub const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub q_bar: f64,
    pub v_bar: f64,
    pub tau_bar: f64,
    pub d_bar: f64,
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("q_bar", self.q_bar),
            ("v_bar", self.v_bar),
            ("tau_bar", self.tau_bar),
            ("d_bar", self.d_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("constraints.{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }
}

/// Declared bounds on `|q_d|`, `|q_d'|` and `|q_d''|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBounds {
    pub qd_bar: f64,
    pub vd_bar: f64,
    pub alpha3: f64,
}

/// Design quantities entering the feasibility inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub alpha: f64,
    pub k1: Mat2,
    pub theta_bar: f64,
}

impl Gains {
    /// `(lambda_min, lambda_max)` of the symmetric part of `K1`.
    pub fn k1_eigenvalues(&self) -> (f64, f64) {
        sym2_eigenvalues(&(0.5 * (self.k1 + self.k1.transpose())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Omegas {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub e_q: f64,
    pub e_v: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    pub kappa: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub psi: f64,
    pub xi: f64,
    pub tau_min: f64,
    pub tau_min_omega_form: f64,
    pub tau_bar: f64,
    pub feasible: bool,
    pub reasons: Vec<String>,
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "error margins   E_Q = {:.6}  E_V = {:.6}", self.e_q, self.e_v)?;
        writeln!(f, "gain condition  alpha = {} < alpha_max = {:.6}", self.alpha, self.alpha_max)?;
        writeln!(f, "barrier bound   kappa = {:.6}", self.kappa)?;
        writeln!(
            f,
            "coefficients    omega1 = {:.6}  omega2 = {:.6}  omega3 = {:.6}",
            self.omega1, self.omega2, self.omega3
        )?;
        writeln!(f, "                psi = {:.6}  xi = {:.6}", self.psi, self.xi)?;
        writeln!(
            f,
            "input bound     tau_bar = {} vs tau_min = {:.6} (omega form {:.6})",
            self.tau_bar, self.tau_min, self.tau_min_omega_form
        )?;
        if self.feasible {
            write!(f, "result          FEASIBLE")
        } else {
            write!(f, "result          INFEASIBLE")?;
            for r in &self.reasons {
                write!(f, "\n  - {r}")?;
            }
            Ok(())
        }
    }
}

/// Values quoted for the reference two-link example, kept only to be shown
/// next to the computed ones. The computed values are authoritative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedValues {
    pub tau_min: f64,
    pub kappa: f64,
    pub alpha_max: f64,
    pub alpha3: f64,
}

pub const PUBLISHED: PublishedValues = PublishedValues { tau_min: 28.5, kappa: 0.04, alpha_max: 0.58, alpha3: 0.3 };

/// `(name, published, computed, relative difference)` rows.
pub fn published_comparison(report: &FeasibilityReport, alpha3_oracle: f64) -> Vec<(&'static str, f64, f64, f64)> {
    let rel = |p: f64, c: f64| (c - p) / p;
    [
        ("tau_min", PUBLISHED.tau_min, report.tau_min),
        ("kappa", PUBLISHED.kappa, report.kappa),
        ("alpha_max", PUBLISHED.alpha_max, report.alpha_max),
        ("alpha3", PUBLISHED.alpha3, alpha3_oracle),
    ]
    .into_iter()
    .map(|(n, p, c)| (n, p, c, rel(p, c)))
    .collect()
}

pub fn error_margins(spec: &ConstraintSpec, refb: &ReferenceBounds) -> Result<(f64, f64)> {
    let e_q = spec.q_bar - refb.qd_bar;
    let e_v = spec.v_bar - refb.vd_bar;
    if e_q <= 0.0 {
        return Err(Error::InfeasibleReference(format!(
            "Qd_bar = {} >= Q_bar = {}",
            refb.qd_bar, spec.q_bar
        )));
    }
    if e_v <= 0.0 {
        return Err(Error::InfeasibleReference(format!(
            "Vd_bar = {} >= V_bar = {}",
            refb.vd_bar, spec.v_bar
        )));
    }
    Ok((e_q, e_v))
}

/// Supremum of admissible filter gains.
pub fn alpha_max(e_q: f64, e_v: f64) -> f64 {
    e_v / e_q
}

pub fn kappa_of(e_v: f64, alpha: f64, e_q: f64) -> Result<f64> {
    let kappa = e_v - alpha * e_q;
    if kappa > 0.0 {
        Ok(kappa)
    } else {
        Err(Error::GainCondition(format!(
            "alpha >= E_V/E_Q ({alpha} >= {:.6}, kappa = {kappa})",
            alpha_max(e_q, e_v)
        )))
    }
}

pub fn omegas(gains: &Gains, refb: &ReferenceBounds, d_bar: f64) -> Omegas {
    let (lmin, lmax) = gains.k1_eigenvalues();
    let (tb, a) = (gains.theta_bar, gains.alpha);
    let omega2 = lmax + tb * (2.0 * a + 3.0) - lmin;
    let omega3 = a * (omega2 - tb * (a + 1.0));
    let omega1 = tb * (refb.vd_bar + refb.alpha3 + 2.0) + d_bar - omega2 * refb.vd_bar + omega3 * refb.qd_bar;
    Omegas { omega1, omega2, omega3 }
}

/// `tau_min` in the un-simplified form with constant error margins.
fn tau_min_margin_form(gains: &Gains, refb: &ReferenceBounds, e_q: f64, e_v: f64, d_bar: f64) -> f64 {
    let (lmin, lmax) = gains.k1_eigenvalues();
    let (tb, a) = (gains.theta_bar, gains.alpha);
    tb * (a * a * e_q + a * e_q + refb.vd_bar + refb.alpha3 + 2.0)
        + d_bar
        + (e_v - a * e_q) * (tb * (2.0 * a + 3.0) + lmax - lmin)
}

fn forms_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= FORM_AGREEMENT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Both forms of `tau_min`: `(margin form, omega form)`.
pub fn tau_min_both(
    gains: &Gains,
    refb: &ReferenceBounds,
    margins: (f64, f64),
    d_bar: f64,
) -> Result<(f64, f64)> {
    let (e_q, e_v) = margins;
    let direct = tau_min_margin_form(gains, refb, e_q, e_v, d_bar);
    let w = omegas(gains, refb, d_bar);
    let v_bar = e_v + refb.vd_bar;
    let q_bar = e_q + refb.qd_bar;
    let via_omegas = w.omega1 + w.omega2 * v_bar - w.omega3 * q_bar;
    if !forms_agree(direct, via_omegas) {
        return Err(Error::Inconsistent(format!(
            "tau_min forms disagree: {direct} vs {via_omegas}"
        )));
    }
    Ok((direct, via_omegas))
}

/// Smallest admissible input bound.
pub fn tau_min(gains: &Gains, refb: &ReferenceBounds, margins: (f64, f64), d_bar: f64) -> Result<f64> {
    tau_min_both(gains, refb, margins, d_bar).map(|(direct, _)| direct)
}

/// Full feasibility evaluation. Never fails; problems are listed in `reasons`.
pub fn check_c1(spec: &ConstraintSpec, refb: &ReferenceBounds, gains: &Gains) -> FeasibilityReport {
    let e_q = spec.q_bar - refb.qd_bar;
    let e_v = spec.v_bar - refb.vd_bar;
    let a = gains.alpha;
    let tb = gains.theta_bar;
    let (_, lmax) = gains.k1_eigenvalues();
    let kappa = e_v - a * e_q;
    let w = omegas(gains, refb, spec.d_bar);
    let direct = tau_min_margin_form(gains, refb, e_q, e_v, spec.d_bar);
    let via_omegas = w.omega1 + w.omega2 * spec.v_bar - w.omega3 * spec.q_bar;
    let amax = alpha_max(e_q, e_v);

    let mut reasons = Vec::new();
    let margins_ok = e_q > 0.0 && e_v > 0.0;
    if !margins_ok {
        reasons.push(format!(
            "reference exceeds state constraint (E_Q = {e_q}, E_V = {e_v})"
        ));
    }
    let gain_ok = margins_ok && a > 0.0 && a < amax;
    if margins_ok && !gain_ok {
        reasons.push(format!("gain condition: alpha {a} >= E_V/E_Q {amax:.6}"));
    }
    let c1_ok = spec.tau_bar > direct;
    if !c1_ok {
        reasons.push(format!("C1: tau_bar {} <= tau_min {:.2}", spec.tau_bar, direct));
    }
    if !forms_agree(direct, via_omegas) {
        reasons.push(format!("internal: tau_min forms disagree ({direct} vs {via_omegas})"));
    }
    if w.omega2 <= 0.0 || w.omega3 <= 0.0 {
        reasons.push(format!(
            "degenerate coefficients: omega2 = {}, omega3 = {}",
            w.omega2, w.omega3
        ));
    }

    FeasibilityReport {
        e_q,
        e_v,
        alpha: a,
        alpha_max: amax,
        kappa,
        omega1: w.omega1,
        omega2: w.omega2,
        omega3: w.omega3,
        psi: tb * (2.0 * a + 3.0) + lmax,
        xi: tb * (a * a * e_q + a * e_q - a * kappa - kappa + refb.vd_bar + refb.alpha3 + 2.0),
        tau_min: direct,
        tau_min_omega_form: via_omegas,
        tau_bar: spec.tau_bar,
        feasible: reasons.is_empty(),
        reasons,
    }
}

/// Which two constraint bounds a region sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepCase {
    /// axis1 = Q_bar, axis2 = tau_bar, V_bar fixed.
    #[serde(rename = "tau-q")]
    TauVsQ,
    /// axis1 = V_bar, axis2 = tau_bar, Q_bar fixed.
    #[serde(rename = "tau-v")]
    TauVsV,
    /// axis1 = V_bar, axis2 = Q_bar, tau_bar fixed.
    #[serde(rename = "q-v")]
    QVsV,
}

impl SweepCase {
    /// Grid used when neither the config nor the command line gives one.
    pub fn default_ranges(&self) -> (AxisRange, AxisRange) {
        let r = |start, end| AxisRange { start, end, count: 50 };
        match self {
            SweepCase::TauVsQ => (r(2.0, 3.5), r(0.0, 60.0)),
            SweepCase::TauVsV => (r(0.7, 2.0), r(0.0, 60.0)),
            SweepCase::QVsV => (r(0.5, 1.5), r(1.5, 3.5)),
        }
    }

    pub fn axis_names(&self) -> (&'static str, &'static str) {
        match self {
            SweepCase::TauVsQ => ("q_bar", "tau_bar"),
            SweepCase::TauVsV => ("v_bar", "tau_bar"),
            SweepCase::QVsV => ("v_bar", "q_bar"),
        }
    }

    fn apply(&self, template: &ConstraintSpec, a1: f64, a2: f64) -> ConstraintSpec {
        let mut s = *template;
        match self {
            SweepCase::TauVsQ => {
                s.q_bar = a1;
                s.tau_bar = a2;
            }
            SweepCase::TauVsV => {
                s.v_bar = a1;
                s.tau_bar = a2;
            }
            SweepCase::QVsV => {
                s.v_bar = a1;
                s.q_bar = a2;
            }
        }
        s
    }
}

impl fmt::Display for SweepCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepCase::TauVsQ => "tau-q",
            SweepCase::TauVsV => "tau-v",
            SweepCase::QVsV => "q-v",
        })
    }
}

impl std::str::FromStr for SweepCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau-q" => Ok(SweepCase::TauVsQ),
            "tau-v" => Ok(SweepCase::TauVsV),
            "q-v" => Ok(SweepCase::QVsV),
            other => Err(Error::Validation(format!("unknown sweep case `{other}` (expected tau-q, tau-v or q-v)"))),
        }
    }
}

/// Inclusive, evenly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn new(start: f64, end: f64, count: usize) -> Result<Self> {
        let r = Self { start, end, count };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !self.start.is_finite() || !self.end.is_finite() || self.end <= self.start {
            return Err(Error::Validation(format!(
                "axis range needs start < end and count >= 2 (got {}:{}:{})",
                self.start, self.end, self.count
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.end - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|k| self.start + k as f64 * step).collect()
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / (self.count - 1) as f64
    }
}

impl std::str::FromStr for AxisRange {
    type Err = Error;
    /// Parses `start:end:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Validation(format!("malformed axis range `{s}` (expected start:end:count)"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        AxisRange::new(start, end, count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityGrid {
    pub case: SweepCase,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// `feasible[i][j]` for `axis1[i]`, `axis2[j]`.
    pub feasible: Vec<Vec<bool>>,
    /// Smallest feasible value of axis2 for each axis1 value; NaN when no value
    /// of axis2 is feasible.
    pub boundary: Vec<f64>,
}

impl FeasibilityGrid {
    /// Rows `(axis1, axis2, feasible, boundary)` in row-major order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, bool, f64)> + '_ {
        self.axis1.iter().enumerate().flat_map(move |(i, &a1)| {
            self.axis2
                .iter()
                .enumerate()
                .map(move |(j, &a2)| (a1, a2, self.feasible[i][j], self.boundary[i]))
        })
    }
}

/// Lower edge of the feasible axis2 interval for one axis1 value, solved in
/// closed form from the linear inequality plus the reference floor.
fn solved_boundary(case: SweepCase, template: &ConstraintSpec, refb: &ReferenceBounds, gains: &Gains, a1: f64) -> f64 {
    let w = omegas(gains, refb, template.d_bar);
    match case {
        SweepCase::TauVsQ | SweepCase::TauVsV => {
            let spec = case.apply(template, a1, template.tau_bar);
            let e_q = spec.q_bar - refb.qd_bar;
            let e_v = spec.v_bar - refb.vd_bar;
            if e_q <= 0.0 || e_v <= 0.0 || gains.alpha >= alpha_max(e_q, e_v) {
                return f64::NAN;
            }
            tau_min_margin_form(gains, refb, e_q, e_v, spec.d_bar)
        }
        SweepCase::QVsV => {
            let v_bar = a1;
            let e_v = v_bar - refb.vd_bar;
            if e_v <= 0.0 {
                return f64::NAN;
            }
            let c1_root = (w.omega1 + w.omega2 * v_bar - template.tau_bar) / w.omega3;
            let lower = c1_root.max(refb.qd_bar);
            // Gain condition caps Q_bar from above.
            let upper = refb.qd_bar + e_v / gains.alpha;
            if lower >= upper {
                f64::NAN
            } else {
                lower
            }
        }
    }
}

/// Evaluates [`check_c1`] over a two-axis grid; points are independent and
/// evaluated in parallel, assembled in row-major order.
pub fn sweep(
    case: SweepCase,
    range1: &AxisRange,
    range2: &AxisRange,
    template: &ConstraintSpec,
    refb: &ReferenceBounds,
    gains: &Gains,
) -> Result<FeasibilityGrid> {
    range1.validate()?;
    range2.validate()?;
    let axis1 = range1.values();
    let axis2 = range2.values();
    let feasible: Vec<Vec<bool>> = axis1
        .par_iter()
        .map(|&a1| {
            axis2
                .iter()
                .map(|&a2| check_c1(&case.apply(template, a1, a2), refb, gains).feasible)
                .collect()
        })
        .collect();
    let boundary = axis1
        .iter()
        .map(|&a1| solved_boundary(case, template, refb, gains, a1))
        .collect();
    Ok(FeasibilityGrid { case, axis1, axis2, feasible, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    QBar,
    VBar,
    TauBar,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_bar" | "Q_bar" => Ok(Axis::QBar),
            "v_bar" | "V_bar" => Ok(Axis::VBar),
            "tau_bar" => Ok(Axis::TauBar),
            other => Err(Error::Validation(format!("unknown axis `{other}`"))),
        }
    }
}

fn with_axis(spec: &ConstraintSpec, axis: Axis, v: f64) -> ConstraintSpec {
    let mut s = *spec;
    match axis {
        Axis::QBar => s.q_bar = v,
        Axis::VBar => s.v_bar = v,
        Axis::TauBar => s.tau_bar = v,
    }
    s
}

/// Smallest value of one constraint bound that keeps the problem feasible,
/// the other two held at their values in `spec`.
///
/// Bisection over `[floor + 1e-9, 1e3 * current]` to [`BISECTION_TOL`]. If the
/// lower end of the bracket is already feasible it is returned as-is.
pub fn min_feasible(axis: Axis, spec: &ConstraintSpec, refb: &ReferenceBounds, gains: &Gains) -> Result<f64> {
    let feasible = |v: f64| check_c1(&with_axis(spec, axis, v), refb, gains).feasible;
    let (floor, current) = match axis {
        Axis::QBar => (refb.qd_bar, spec.q_bar),
        Axis::VBar => (refb.vd_bar, spec.v_bar),
        Axis::TauBar => (0.0, spec.tau_bar),
    };
    let lo0 = floor + 1e-9;
    let hi_cap = 1e3 * current.max(lo0);
    if feasible(lo0) {
        return Ok(lo0);
    }
    // Find a feasible upper end: the current value, else a log-spaced scan.
    let mut hi = None;
    if current > lo0 && feasible(current) {
        hi = Some(current);
    } else {
        let n = 2000;
        let span = (hi_cap / lo0.max(1e-12)).ln();
        for k in 1..=n {
            let v = if lo0 > 0.0 {
                lo0 * (span * k as f64 / n as f64).exp()
            } else {
                hi_cap * k as f64 / n as f64
            };
            if feasible(v) {
                hi = Some(v);
                break;
            }
        }
    }
    let mut hi = hi.ok_or_else(|| {
        Error::NoSolution(format!("no feasible {axis:?} in [{lo0}, {hi_cap}]"))
    })?;
    let mut lo = lo0;
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Dense sampled suprema of `|q_d|`, `|q_d'|`, `|q_d''|` over `[0, horizon]`.
pub fn reference_bounds_oracle<F>(reference: F, horizon: f64, dt: f64) -> (f64, f64, f64)
where
    F: Fn(f64) -> (Vec2, Vec2, Vec2),
{
    let n = (horizon / dt).round() as usize;
    (0..=n).fold((0.0f64, 0.0f64, 0.0f64), |(a, b, c), k| {
        let (q, dq, ddq) = reference(k as f64 * dt);
        (a.max(q.norm()), b.max(dq.norm()), c.max(ddq.norm()))
    })
}
