//! Closed-loop simulation of the constrained adaptive tracking loop.
//!
//! The augmented state `x = [q; q'; theta_hat]` is integrated with classical
//! fixed-step RK4. In the default continuous mode the controller is
//! re-evaluated inside every stage; zero-order-hold mode freezes the applied
//! input over each step.

use std::cell::Cell;
use std::fmt;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::controller::{
    adaptation_rhs, baseline_adaptation_rhs, baseline_pipeline, blf_value, control_pipeline, lyapunov_value,
    ControlOutput, ControllerConfig, ReferenceSample,
};
use crate::dynamics::{JointState, TwoLinkParams};
use crate::feasibility::{check_c1, reference_bounds_oracle, ConstraintSpec, Gains, ReferenceBounds};
use crate::{Error, ParamMatrix, ParamVector, Result, Vec2};

/// Dimension of the augmented closed-loop state.
pub const STATE_DIM: usize = 2 + 2 + crate::N_PARAMS;
pub type AugmentedState = SVector<f64, STATE_DIM>;

/// Slack allowed on `|tau| <= tau_bar` before an input violation is flagged.
pub const INPUT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sin,
    Cos,
}

/// `offset + amplitude * wave(omega t)` for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointWave {
    pub waveform: Waveform,
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub offset: f64,
}

impl JointWave {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (a, w) = (self.amplitude, self.omega);
        let (s, c) = (w * t).sin_cos();
        match self.waveform {
            Waveform::Sin => (self.offset + a * s, a * w * c, -a * w * w * s),
            Waveform::Cos => (self.offset + a * c, -a * w * s, -a * w * w * c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSignal {
    pub joints: [JointWave; 2],
}

impl Default for ReferenceSignal {
    /// `q_d = (0.5 sin t, 2 cos(t/4))`
    fn default() -> Self {
        Self {
            joints: [
                JointWave { waveform: Waveform::Sin, amplitude: 0.5, omega: 1.0, offset: 0.0 },
                JointWave { waveform: Waveform::Cos, amplitude: 2.0, omega: 0.25, offset: 0.0 },
            ],
        }
    }
}

impl ReferenceSignal {
    pub fn eval(&self, t: f64) -> ReferenceSample {
        let (q0, dq0, ddq0) = self.joints[0].eval(t);
        let (q1, dq1, ddq1) = self.joints[1].eval(t);
        ReferenceSample {
            q: Vec2::new(q0, q1),
            dq: Vec2::new(dq0, dq1),
            ddq: Vec2::new(ddq0, ddq1),
        }
    }
}

/// `d(t) = amplitude * (sin(omega t), cos(omega t))` on `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSegment {
    pub t_start: f64,
    /// `None` extends the segment indefinitely.
    pub t_end: Option<f64>,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub omega: f64,
}

fn one() -> f64 {
    1.0
}

/// Piecewise disturbance schedule. Beyond the end of the last segment the
/// last segment keeps acting; gaps between segments are disturbance-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceProfile {
    pub segments: Vec<DisturbanceSegment>,
}

impl Default for DisturbanceProfile {
    /// Zero until 100 s, amplitude 3 until 200 s, amplitude 5 afterwards.
    fn default() -> Self {
        let seg = |t_start, t_end, amplitude| DisturbanceSegment { t_start, t_end: Some(t_end), amplitude, omega: 1.0 };
        Self { segments: vec![seg(0.0, 100.0, 0.0), seg(100.0, 200.0, 3.0), seg(200.0, 300.0, 5.0)] }
    }
}

impl DisturbanceProfile {
    /// Persistent `5 (sin t, cos t)` used for the baseline comparison.
    pub fn persistent(amplitude: f64) -> Self {
        Self { segments: vec![DisturbanceSegment { t_start: 0.0, t_end: None, amplitude, omega: 1.0 }] }
    }

    pub fn none() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end = f64::NEG_INFINITY;
        for (i, s) in self.segments.iter().enumerate() {
            let end = s.t_end.unwrap_or(f64::INFINITY);
            if !(s.t_start.is_finite() && s.amplitude.is_finite() && s.omega.is_finite()) || end <= s.t_start {
                return Err(Error::Validation(format!("disturbance.segments[{i}] is malformed")));
            }
            if s.t_start < prev_end {
                return Err(Error::Validation(format!("disturbance.segments[{i}] overlaps its predecessor")));
            }
            if s.t_end.is_none() && i + 1 != self.segments.len() {
                return Err(Error::Validation("only the last disturbance segment may be open-ended".into()));
            }
            prev_end = end;
        }
        Ok(())
    }

    fn active(&self, t: f64) -> Option<&DisturbanceSegment> {
        let last = self.segments.last()?;
        if t >= last.t_end.unwrap_or(f64::INFINITY) {
            return Some(last);
        }
        self.segments
            .iter()
            .find(|s| s.t_start <= t && t < s.t_end.unwrap_or(f64::INFINITY))
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        match self.active(t) {
            Some(s) => {
                let (sn, cs) = (s.omega * t).sin_cos();
                s.amplitude * Vec2::new(sn, cs)
            }
            None => Vec2::zeros(),
        }
    }

    /// Exact supremum of `|d(t)|`.
    pub fn sup_norm(&self) -> f64 {
        self.segments.iter().map(|s| s.amplitude.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Proposed,
    Baseline,
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "baseline" => Ok(Self::Baseline),
            other => Err(Error::Validation(format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    Continuous,
    /// Applied input held constant over each integration step.
    Zoh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssumptionGate {
    #[default]
    Enforce,
    Warn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: TwoLinkParams,
    pub controller: ControllerConfig,
    /// Adaptation gain of the robust-adaptive baseline.
    pub baseline_gamma: ParamMatrix,
    pub constraints: ConstraintSpec,
    pub reference_bounds: ReferenceBounds,
    pub reference: ReferenceSignal,
    pub disturbance: DisturbanceProfile,
    pub t_end: f64,
    pub dt: f64,
    pub decimation: usize,
    /// `None` starts on the reference.
    pub initial_state: Option<JointState>,
    pub theta_hat0: ParamVector,
    pub assumption_gate: AssumptionGate,
    pub control_mode: ControlMode,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("simulation.dt must be positive (got {})", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::Validation(format!(
                "simulation.t_end must be >= dt (got t_end = {}, dt = {})",
                self.t_end, self.dt
            )));
        }
        if self.decimation == 0 {
            return Err(Error::Validation("simulation.decimation must be >= 1".into()));
        }
        self.plant.validate()?;
        self.controller.validate()?;
        self.constraints.validate()?;
        self.disturbance.validate()
    }

    pub fn initial_joint_state(&self) -> JointState {
        self.initial_state.unwrap_or_else(|| {
            let r = self.reference.eval(0.0);
            JointState::new(r.q, r.dq)
        })
    }

    pub fn gains(&self) -> Gains {
        Gains {
            alpha: self.controller.alpha,
            k1: self.controller.k1,
            theta_bar: self.controller.theta_bar,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Rows a complete run logs: `floor(steps / decimation) + 1`.
    pub fn expected_rows(&self) -> usize {
        self.steps() / self.decimation + 1
    }

    pub fn active_gamma(&self, kind: ControllerKind) -> ParamMatrix {
        match kind {
            ControllerKind::Proposed => self.controller.gamma,
            ControllerKind::Baseline => self.baseline_gamma,
        }
    }
}

/// One fixed RK4 step of `x' = f(t, x)`.
pub fn rk4_step<F, const N: usize>(mut rhs: F, t: f64, x: &SVector<f64, N>, dt: f64) -> Result<SVector<f64, N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let h = 0.5 * dt;
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + h, &(x + k1 * h))?;
    let k3 = rhs(t + h, &(x + k2 * h))?;
    let k4 = rhs(t + dt, &(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

pub fn split_state(x: &AugmentedState) -> (JointState, ParamVector) {
    (
        JointState::new(Vec2::new(x[0], x[1]), Vec2::new(x[2], x[3])),
        x.fixed_rows::<{ crate::N_PARAMS }>(4).into_owned(),
    )
}

pub fn join_state(s: &JointState, theta_hat: &ParamVector) -> AugmentedState {
    let mut x = AugmentedState::zeros();
    x.fixed_rows_mut::<2>(0).copy_from(&s.q);
    x.fixed_rows_mut::<2>(2).copy_from(&s.dq);
    x.fixed_rows_mut::<{ crate::N_PARAMS }>(4).copy_from(theta_hat);
    x
}

/// Closed-loop vector field for one controller.
pub struct ClosedLoop<'a> {
    pub plant: &'a TwoLinkParams,
    pub controller: &'a ControllerConfig,
    pub baseline_gamma: &'a ParamMatrix,
    pub reference: &'a ReferenceSignal,
    pub disturbance: &'a DisturbanceProfile,
    pub kind: ControllerKind,
    /// Applied input override (zero-order hold).
    pub held_tau: Option<Vec2>,
    floor_hits: Cell<u64>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(cfg: &'a SimConfig, kind: ControllerKind) -> Self {
        Self {
            plant: &cfg.plant,
            controller: &cfg.controller,
            baseline_gamma: &cfg.baseline_gamma,
            reference: &cfg.reference,
            disturbance: &cfg.disturbance,
            kind,
            held_tau: None,
            floor_hits: Cell::new(0),
        }
    }

    /// Number of evaluations where the barrier denominator was floored.
    pub fn floor_hits(&self) -> u64 {
        self.floor_hits.get()
    }

    pub fn control(&self, t: f64, state: &JointState, theta_hat: &ParamVector) -> Result<ControlOutput> {
        let reference = self.reference.eval(t);
        match self.kind {
            ControllerKind::Proposed => control_pipeline(self.plant, self.controller, state, &reference, theta_hat, t),
            ControllerKind::Baseline => Ok(baseline_pipeline(self.plant, self.controller, state, &reference, theta_hat)),
        }
    }

    pub fn rhs(&self, t: f64, x: &AugmentedState) -> Result<AugmentedState> {
        let (state, theta_hat) = split_state(x);
        let out = self.control(t, &state, &theta_hat)?;
        let d = self.disturbance.eval(t);
        let tau = self.held_tau.unwrap_or(out.tau);
        let ddq = self.plant.forward_dynamics(&state, &tau, &d)?;
        let dtheta = match self.kind {
            ControllerKind::Proposed => {
                let (g, floored) = adaptation_rhs(&out.y, &out.r, self.controller, &theta_hat);
                if floored {
                    self.floor_hits.set(self.floor_hits.get() + 1);
                    log::warn!("barrier denominator floored at t = {t}");
                }
                g
            }
            ControllerKind::Baseline => baseline_adaptation_rhs(
                &out.y,
                &out.r,
                self.baseline_gamma,
                &theta_hat,
                self.controller.theta_bar,
                self.controller.proj_eps,
            ),
        };
        let mut dx = AugmentedState::zeros();
        dx.fixed_rows_mut::<2>(0).copy_from(&state.dq);
        dx.fixed_rows_mut::<2>(2).copy_from(&ddq);
        dx.fixed_rows_mut::<{ crate::N_PARAMS }>(4).copy_from(&dtheta);
        Ok(dx)
    }
}

/// Free-function form of [`ClosedLoop::rhs`].
pub fn closed_loop_rhs(cl: &ClosedLoop<'_>, t: f64, x: &AugmentedState) -> Result<AugmentedState> {
    cl.rhs(t, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Warn => "WARN",
            CheckStatus::Fail => "FAIL",
        })
    }
}

/// One gate: `value` compared against `limit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub value: f64,
    pub limit: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {:<22} {:<48} value = {:.6}  limit = {:.6}", c.status, c.id, c.description, c.value, c.limit)?;
        }
        Ok(())
    }
}

/// Pre-run verification of reference bounds, initial errors, parameter bound,
/// gain condition, input-bound feasibility and disturbance bound.
///
/// Sampled reference suprema that exceed the declared bounds produce warnings:
/// the declared values are what the feasibility inequality uses.
pub fn check_assumptions(cfg: &SimConfig) -> AssumptionReport {
    let mut checks = Vec::new();
    let mut push = |id, description, value: f64, limit: f64, ok: bool, soft: bool| {
        let status = match (ok, soft) {
            (true, _) => CheckStatus::Pass,
            (false, true) => CheckStatus::Warn,
            (false, false) => CheckStatus::Fail,
        };
        checks.push(AssumptionCheck { id, description, value, limit, status });
    };

    let rb = &cfg.reference_bounds;
    let cs = &cfg.constraints;
    let sample_dt = cfg.dt.min(1e-3);
    let (sq, sv, sa) = reference_bounds_oracle(
        |t| {
            let r = cfg.reference.eval(t);
            (r.q, r.dq, r.ddq)
        },
        cfg.t_end,
        sample_dt,
    );
    push("ref_position_bound", "sampled sup|q_d| <= Qd_bar", sq, rb.qd_bar, sq <= rb.qd_bar, true);
    push("ref_velocity_bound", "sampled sup|q_d'| <= Vd_bar", sv, rb.vd_bar, sv <= rb.vd_bar, true);
    push("ref_accel_bound", "sampled sup|q_d''| <= alpha3", sa, rb.alpha3, sa <= rb.alpha3, true);
    push("position_margin", "Qd_bar < Q_bar", rb.qd_bar, cs.q_bar, rb.qd_bar < cs.q_bar, false);
    push("velocity_margin", "Vd_bar < V_bar", rb.vd_bar, cs.v_bar, rb.vd_bar < cs.v_bar, false);

    let e_q = cs.q_bar - rb.qd_bar;
    let e_v = cs.v_bar - rb.vd_bar;
    let alpha = cfg.controller.alpha;
    let kappa = e_v - alpha * e_q;
    let x0 = cfg.initial_joint_state();
    let r0 = cfg.reference.eval(0.0);
    let e0 = x0.q - r0.q;
    let de0 = x0.dq - r0.dq;
    let rr0 = de0 + alpha * e0;
    let e0_limit = e_q - kappa / alpha;
    push("initial_error", "|e(0)| <= E_Q - kappa/alpha", e0.norm(), e0_limit, e0.norm() <= e0_limit, false);
    push("initial_filtered_error", "|r(0)| < kappa", rr0.norm(), kappa, rr0.norm() < kappa, false);

    let th = cfg.plant.theta().norm();
    let tb = cfg.controller.theta_bar;
    push("parameter_bound", "|theta| < theta_bar", th, tb, th < tb, false);

    let amax = e_v / e_q;
    push("gain_condition", "alpha < E_V/E_Q", alpha, amax, e_q > 0.0 && alpha < amax, false);

    let rep = check_c1(cs, rb, &cfg.gains());
    push("input_feasibility", "tau_bar > tau_min", cs.tau_bar, rep.tau_min, cs.tau_bar > rep.tau_min, false);

    let ds = cfg.disturbance.sup_norm();
    push("disturbance_bound", "sup|d| <= d_bar", ds, cs.d_bar, ds <= cs.d_bar, false);

    AssumptionReport { checks }
}

/// One logged sample of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRow {
    pub t: f64,
    pub q: Vec2,
    pub dq: Vec2,
    pub q_d: Vec2,
    pub dq_d: Vec2,
    pub e: Vec2,
    pub de: Vec2,
    pub r: Vec2,
    pub theta_hat: ParamVector,
    pub u: Vec2,
    pub tau: Vec2,
    pub delta_tau: Vec2,
    pub d: Vec2,
    /// Barrier term; NaN outside the barrier set.
    pub v1: f64,
    /// Barrier term plus parameter-error term; NaN outside the barrier set.
    pub v: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub rows: Vec<SimRow>,
}

/// First time a constraint was exceeded, if ever.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Violations {
    pub position: Option<f64>,
    pub velocity: Option<f64>,
    pub input: Option<f64>,
    pub position_error: Option<f64>,
    pub velocity_error: Option<f64>,
    pub barrier: Option<f64>,
    pub disturbance: Option<f64>,
}

impl Violations {
    pub fn any(&self) -> bool {
        self.entries().iter().any(|(_, v)| v.is_some())
    }

    pub fn entries(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("position", self.position),
            ("velocity", self.velocity),
            ("input", self.input),
            ("position_error", self.position_error),
            ("velocity_error", self.velocity_error),
            ("barrier", self.barrier),
            ("disturbance", self.disturbance),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub samples: usize,
    pub max_q: f64,
    pub max_dq: f64,
    pub max_tau: f64,
    pub max_u: f64,
    pub max_e: f64,
    pub max_de: f64,
    pub max_r: f64,
    pub max_d: f64,
    pub max_theta_hat: f64,
    pub rms_e: f64,
    pub rms_de: f64,
    pub violations: Violations,
}

/// Running max/RMS/violation bookkeeping; shared by [`run`] (every step) and
/// [`metrics`] (logged rows).
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    limits: ConstraintSpec,
    e_q: f64,
    e_v: f64,
    kappa: f64,
    n: usize,
    sum_e2: f64,
    sum_de2: f64,
    m: Metrics,
}

impl MetricsAccumulator {
    pub fn new(spec: &ConstraintSpec, refb: &ReferenceBounds, alpha: f64) -> Self {
        let e_q = spec.q_bar - refb.qd_bar;
        let e_v = spec.v_bar - refb.vd_bar;
        Self {
            limits: *spec,
            e_q,
            e_v,
            kappa: e_v - alpha * e_q,
            n: 0,
            sum_e2: 0.0,
            sum_de2: 0.0,
            m: Metrics {
                samples: 0,
                max_q: 0.0,
                max_dq: 0.0,
                max_tau: 0.0,
                max_u: 0.0,
                max_e: 0.0,
                max_de: 0.0,
                max_r: 0.0,
                max_d: 0.0,
                max_theta_hat: 0.0,
                rms_e: 0.0,
                rms_de: 0.0,
                violations: Violations::default(),
            },
        }
    }

    pub fn push(&mut self, row: &SimRow) {
        fn flag(slot: &mut Option<f64>, hit: bool, t: f64) {
            if hit && slot.is_none() {
                *slot = Some(t);
            }
        }
        let m = &mut self.m;
        let (nq, ndq, ntau, ne, nde, nr, nd) = (
            row.q.norm(),
            row.dq.norm(),
            row.tau.norm(),
            row.e.norm(),
            row.de.norm(),
            row.r.norm(),
            row.d.norm(),
        );
        m.max_q = m.max_q.max(nq);
        m.max_dq = m.max_dq.max(ndq);
        m.max_tau = m.max_tau.max(ntau);
        m.max_u = m.max_u.max(row.u.norm());
        m.max_e = m.max_e.max(ne);
        m.max_de = m.max_de.max(nde);
        m.max_r = m.max_r.max(nr);
        m.max_d = m.max_d.max(nd);
        m.max_theta_hat = m.max_theta_hat.max(row.theta_hat.norm());
        self.n += 1;
        self.sum_e2 += ne * ne;
        self.sum_de2 += nde * nde;

        let l = &self.limits;
        let v = &mut m.violations;
        flag(&mut v.position, nq >= l.q_bar, row.t);
        flag(&mut v.velocity, ndq >= l.v_bar, row.t);
        flag(&mut v.input, ntau > l.tau_bar + INPUT_SLACK, row.t);
        flag(&mut v.position_error, ne >= self.e_q, row.t);
        flag(&mut v.velocity_error, nde >= self.e_v, row.t);
        flag(&mut v.barrier, nr >= self.kappa, row.t);
        flag(&mut v.disturbance, nd > l.d_bar + 1e-12, row.t);
    }

    pub fn mark_barrier(&mut self, t: f64) {
        if self.m.violations.barrier.is_none() {
            self.m.violations.barrier = Some(t);
        }
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.n == 0 {
            return Err(Error::EmptyLog);
        }
        let mut m = self.m;
        m.samples = self.n;
        m.rms_e = (self.sum_e2 / self.n as f64).sqrt();
        m.rms_de = (self.sum_de2 / self.n as f64).sqrt();
        Ok(m)
    }
}

/// Metrics over the rows of a log.
pub fn metrics(log: &SimLog, spec: &ConstraintSpec, refb: &ReferenceBounds, alpha: f64) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::new(spec, refb, alpha);
    for row in &log.rows {
        acc.push(row);
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub kind: ControllerKind,
    pub log: SimLog,
    /// Computed over every integration step, not only logged rows.
    pub metrics: Metrics,
    /// Time of the barrier breach that stopped a proposed-controller run.
    pub barrier_violation: Option<f64>,
    pub floor_hits: u64,
    pub assumptions: AssumptionReport,
}

fn make_row(
    cl: &ClosedLoop<'_>,
    cfg: &SimConfig,
    t: f64,
    x: &AugmentedState,
    gamma: &ParamMatrix,
) -> Result<(SimRow, ControlOutput)> {
    let (state, theta_hat) = split_state(x);
    let out = cl.control(t, &state, &theta_hat)?;
    let reference = cfg.reference.eval(t);
    let km = cfg.controller.kappa_m();
    let v1 = blf_value(&out.r, km, cfg.controller.m_bar).unwrap_or(f64::NAN);
    let theta_tilde = cfg.plant.theta() - theta_hat;
    let v = lyapunov_value(&out.r, &theta_tilde, gamma, km, cfg.controller.m_bar).unwrap_or(f64::NAN);
    let row = SimRow {
        t,
        q: state.q,
        dq: state.dq,
        q_d: reference.q,
        dq_d: reference.dq,
        e: out.e,
        de: out.de,
        r: out.r,
        theta_hat,
        u: out.u,
        tau: out.tau,
        delta_tau: out.delta_tau,
        d: cfg.disturbance.eval(t),
        v1,
        v,
    };
    Ok((row, out))
}

/// Integrates the closed loop over `[0, t_end]`.
///
/// A barrier breach of the proposed controller stops the run and is recorded
/// in the outcome; the log ends at the last admissible step.
pub fn run(cfg: &SimConfig, kind: ControllerKind) -> Result<SimOutcome> {
    cfg.validate()?;
    let assumptions = check_assumptions(cfg);
    if cfg.assumption_gate == AssumptionGate::Enforce && !assumptions.passed() {
        let failed: Vec<&str> = assumptions.failures().map(|c| c.id).collect();
        return Err(Error::AssumptionGate(failed.join(", ")));
    }

    let gamma = cfg.active_gamma(kind);
    let mut cl = ClosedLoop::new(cfg, kind);
    let mut acc = MetricsAccumulator::new(&cfg.constraints, &cfg.reference_bounds, cfg.controller.alpha);
    let steps = cfg.steps();
    let mut log = SimLog { rows: Vec::with_capacity(cfg.expected_rows()) };
    let mut x = join_state(&cfg.initial_joint_state(), &cfg.theta_hat0);
    let mut barrier_violation = None;

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let (row, out) = match make_row(&cl, cfg, t, &x, &gamma) {
            Ok(v) => v,
            Err(Error::BarrierViolation { t, .. }) => {
                barrier_violation = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        acc.push(&row);
        if k % cfg.decimation == 0 {
            log.rows.push(row);
        }
        if k == steps {
            break;
        }
        cl.held_tau = match cfg.control_mode {
            ControlMode::Continuous => None,
            ControlMode::Zoh => Some(out.tau),
        };
        match rk4_step(|ts, xs| cl.rhs(ts, xs), t, &x, cfg.dt) {
            Ok(next) => x = next,
            Err(Error::BarrierViolation { t, .. }) => {
                barrier_violation = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { t: t + cfg.dt, what: "closed-loop state is not finite".into() });
        }
    }
    if let Some(t) = barrier_violation {
        acc.mark_barrier(t);
    }
    Ok(SimOutcome {
        kind,
        log,
        metrics: acc.finish()?,
        barrier_violation,
        floor_hits: cl.floor_hits(),
        assumptions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat2;

    pub(crate) fn reference_sim() -> SimConfig {
        let plant = TwoLinkParams::default();
        let m_bar = plant.inertia_bounds().unwrap().m_bar;
        SimConfig {
            plant,
            controller: ControllerConfig {
                k1: Mat2::new(1.5, 0.0, 0.0, 1.0),
                alpha: 0.5,
                gamma: ParamMatrix::identity() * 10.0,
                theta_bar: 6.2,
                tau_bar: 30.0,
                kappa: 0.293 - 0.25,
                m_bar,
                proj_eps: 0.05,
            },
            baseline_gamma: ParamMatrix::identity() * 20.0,
            constraints: ConstraintSpec { q_bar: 2.5, v_bar: 1.0, tau_bar: 30.0, d_bar: 5.0 },
            reference_bounds: ReferenceBounds { qd_bar: 2.0, vd_bar: 0.707, alpha3: 0.3 },
            reference: ReferenceSignal::default(),
            disturbance: DisturbanceProfile::default(),
            t_end: 300.0,
            dt: 1e-3,
            decimation: 10,
            initial_state: None,
            theta_hat0: ParamVector::zeros(),
            assumption_gate: AssumptionGate::Warn,
            control_mode: ControlMode::Continuous,
        }
    }

    #[test]
    fn reference_values() {
        let r = ReferenceSignal::default().eval(0.0);
        assert_eq!(r.q, Vec2::new(0.0, 2.0));
        assert_eq!(r.dq, Vec2::new(0.5, 0.0));
        assert_eq!(r.ddq, Vec2::new(0.0, -0.125));
        let tau = std::f64::consts::TAU;
        let a = ReferenceSignal::default().eval(tau);
        assert!((a.q[1] - r.q[1]).abs() > 1.0);
    }

    #[test]
    fn reference_derivatives_match_central_differences() {
        let sig = ReferenceSignal::default();
        let h = 1e-4;
        for k in 0..200 {
            let t = 0.37 * k as f64;
            let (m, p, c) = (sig.eval(t - h), sig.eval(t + h), sig.eval(t));
            assert!(((p.q - m.q) / (2.0 * h) - c.dq).amax() < 1e-6);
            assert!(((p.dq - m.dq) / (2.0 * h) - c.ddq).amax() < 1e-6);
        }
    }

    #[test]
    fn disturbance_schedule() {
        let d = DisturbanceProfile::default();
        assert_eq!(d.eval(50.0), Vec2::zeros());
        let v = d.eval(150.0);
        assert_eq!(v, Vec2::new(3.0 * 150f64.sin(), 3.0 * 150f64.cos()));
        for k in 0..100 {
            let t = 200.0 + k as f64 * 0.999;
            assert!((d.eval(t).norm() - 5.0).abs() < 1e-12);
        }
        // Last branch persists past its nominal end.
        assert!((d.eval(400.0).norm() - 5.0).abs() < 1e-12);
        assert_eq!(d.sup_norm(), 5.0);
        assert_eq!(DisturbanceProfile::none().eval(3.0), Vec2::zeros());
    }

    #[test]
    fn disturbance_validation() {
        let mut d = DisturbanceProfile::default();
        d.segments[1].t_start = 50.0;
        assert!(d.validate().is_err());
        let d = DisturbanceProfile {
            segments: vec![
                DisturbanceSegment { t_start: 0.0, t_end: None, amplitude: 1.0, omega: 1.0 },
                DisturbanceSegment { t_start: 10.0, t_end: Some(20.0), amplitude: 1.0, omega: 1.0 },
            ],
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn rk4_exponential() {
        let x0 = SVector::<f64, 1>::new(1.0);
        let x = rk4_step(|_, x| Ok(-x), 0.0, &x0, 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!((x[0] - 0.904_837_5).abs() < 1e-7);
        let same = rk4_step(|_, _| Ok(SVector::<f64, 1>::zeros()), 0.0, &x0, 0.1).unwrap();
        assert_eq!(same, x0);
    }

    #[test]
    fn rhs_exact_cancellation() {
        let mut cfg = reference_sim();
        cfg.disturbance = DisturbanceProfile::none();
        let cl = ClosedLoop::new(&cfg, ControllerKind::Proposed);
        for k in 0..50 {
            let t = 0.7 * k as f64;
            let r = cfg.reference.eval(t);
            let x = join_state(&JointState::new(r.q, r.dq), &cfg.plant.theta());
            let dx = cl.rhs(t, &x).unwrap();
            assert!((Vec2::new(dx[2], dx[3]) - r.ddq).norm() < 1e-12);
            assert!(dx.fixed_rows::<5>(4).norm() == 0.0);
            assert_eq!(cl.rhs(t, &x).unwrap(), dx);
        }
    }

    #[test]
    fn assumptions_reference_matched_start() {
        let cfg = reference_sim();
        let rep = check_assumptions(&cfg);
        assert_eq!(rep.get("initial_error").unwrap().status, CheckStatus::Pass);
        assert_eq!(rep.get("initial_filtered_error").unwrap().status, CheckStatus::Pass);
        assert_eq!(rep.get("input_feasibility").unwrap().status, CheckStatus::Pass);
        assert_eq!(rep.get("gain_condition").unwrap().status, CheckStatus::Pass);
        // |[3.473, 0.196, 0.242, 5.3, 1.1]|^2 = 41.458709
        let p = rep.get("parameter_bound").unwrap();
        assert!((p.value - 41.458_709f64.sqrt()).abs() < 1e-9);
        assert_eq!(p.status, CheckStatus::Fail);
        assert_eq!(rep.get("ref_accel_bound").unwrap().status, CheckStatus::Warn);
    }

    #[test]
    fn enforce_gate_refuses_to_run() {
        let mut cfg = reference_sim();
        cfg.assumption_gate = AssumptionGate::Enforce;
        cfg.t_end = 0.01;
        assert!(matches!(run(&cfg, ControllerKind::Proposed), Err(Error::AssumptionGate(_))));
    }

    #[test]
    fn row_count_contract() {
        let mut cfg = reference_sim();
        cfg.t_end = 0.01;
        cfg.decimation = 1;
        let out = run(&cfg, ControllerKind::Proposed).unwrap();
        assert_eq!(out.log.rows.len(), 11);
        cfg.decimation = 10;
        let out = run(&cfg, ControllerKind::Proposed).unwrap();
        assert_eq!(out.log.rows.len(), 2);
        assert_eq!(out.log.rows.len(), cfg.expected_rows());
        assert!(out.log.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    fn row(t: f64, q: Vec2, tau: Vec2) -> SimRow {
        let z = Vec2::zeros();
        SimRow {
            t,
            q,
            dq: z,
            q_d: z,
            dq_d: z,
            e: Vec2::new(0.1, 0.0),
            de: z,
            r: z,
            theta_hat: ParamVector::zeros(),
            u: tau,
            tau,
            delta_tau: z,
            d: z,
            v1: 0.0,
            v: 0.0,
        }
    }

    #[test]
    fn metrics_cases() {
        let cfg = reference_sim();
        let (cs, rb) = (&cfg.constraints, &cfg.reference_bounds);
        let log = SimLog { rows: (0..5).map(|k| row(k as f64, Vec2::new(0.6, 0.8), Vec2::zeros())).collect() };
        let m = metrics(&log, cs, rb, 0.5).unwrap();
        assert!(m.violations.position.is_none());
        assert!((m.rms_e - 0.1).abs() < 1e-15);

        let mut log = log;
        log.rows[3].tau = Vec2::new(30.0, 1.0);
        let m = metrics(&log, cs, rb, 0.5).unwrap();
        assert_eq!(m.violations.input, Some(3.0));

        assert!(matches!(metrics(&SimLog::default(), cs, rb, 0.5), Err(Error::EmptyLog)));
    }
}
