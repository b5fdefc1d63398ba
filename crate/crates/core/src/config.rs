//! JSON run configuration.
//!
//! A config file is parsed strictly (unknown keys are rejected, schema errors
//! carry the offending key path), then resolved: derived quantities such as
//! `kappa` and `m_bar` are computed and the result validated. [`RunConfig::snapshot`]
//! writes the resolved values back in the same schema with nothing left to
//! defaults, so a snapshot reproduces a run exactly.

use std::path::Path;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, DEFAULT_PROJ_EPS};
use crate::dynamics::{JointState, TwoLinkParams};
use crate::feasibility::{alpha_max, error_margins, AxisRange, ConstraintSpec, ReferenceBounds, SweepCase};
use crate::simulation::{AssumptionGate, ControlMode, DisturbanceProfile, ReferenceSignal, SimConfig};
use crate::{Error, ParamVector, Result, Vec2, N_PARAMS};

/// Configs shipped with the crate, addressable as `builtin:<name>`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("arm_defaults", include_str!("../configs/arm_defaults.json")),
    ("arm_tracking", include_str!("../configs/arm_tracking.json")),
    ("arm_compare", include_str!("../configs/arm_compare.json")),
    ("arm_region", include_str!("../configs/arm_region.json")),
];

pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// A gain given either as a scalar multiple of the identity or as a full
/// square matrix (row-major nested arrays).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl GainSpec {
    fn to_matrix<const N: usize>(&self, key: &str) -> Result<SMatrix<f64, N, N>> {
        match self {
            GainSpec::Scalar(s) => Ok(SMatrix::<f64, N, N>::identity() * *s),
            GainSpec::Matrix(rows) => {
                if rows.len() != N || rows.iter().any(|r| r.len() != N) {
                    return Err(Error::Validation(format!("{key} must be a scalar or a {N}x{N} matrix")));
                }
                Ok(SMatrix::<f64, N, N>::from_fn(|i, j| rows[i][j]))
            }
        }
    }

    fn from_matrix<const N: usize>(m: &SMatrix<f64, N, N>) -> Self {
        GainSpec::Matrix((0..N).map(|i| (0..N).map(|j| m[(i, j)]).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k1: GainSpec,
    pub alpha: f64,
    pub gamma: GainSpec,
    pub theta_bar: f64,
    /// Defaults to `E_V - alpha E_Q`; a smaller value may be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Defaults to the certified inertia bound of the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_bar: Option<f64>,
    #[serde(default = "default_proj_eps")]
    pub proj_eps: f64,
}

fn default_proj_eps() -> f64 {
    DEFAULT_PROJ_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub gamma: GainSpec,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { gamma: GainSpec::Scalar(20.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: [f64; 2],
    pub dq: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    /// Omitted: start on the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    #[serde(default)]
    pub theta_hat0: [f64; N_PARAMS],
    #[serde(default)]
    pub assumption_gate: AssumptionGate,
    #[serde(default)]
    pub control_mode: ControlMode,
}

fn default_t_end() -> f64 {
    300.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_decimation() -> usize {
    10
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            decimation: default_decimation(),
            initial_state: None,
            theta_hat0: [0.0; N_PARAMS],
            assumption_gate: AssumptionGate::default(),
            control_mode: ControlMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub case: SweepCase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis1: Option<AxisRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis2: Option<AxisRange>,
}

impl SweepSection {
    pub fn ranges(&self) -> (AxisRange, AxisRange) {
        let (d1, d2) = self.case.default_ranges();
        (self.axis1.unwrap_or(d1), self.axis2.unwrap_or(d2))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Omitted: `d_bar (sin t, cos t)` for all t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceProfile>,
}

/// On-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub plant: TwoLinkParams,
    pub controller: ControllerSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    pub constraints: ConstraintSpec,
    pub reference_bounds: ReferenceBounds,
    #[serde(default)]
    pub reference: ReferenceSignal,
    #[serde(default)]
    pub disturbance: DisturbanceProfile,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub compare: CompareSection,
}

/// Resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub sweep: Option<SweepSection>,
    pub compare_disturbance: DisturbanceProfile,
}

pub fn parse_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: FileConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    resolve(file)
}

/// Loads a config file, or a bundled config given as `builtin:<name>`.
pub fn load(path: &str) -> Result<RunConfig> {
    if let Some(name) = path.strip_prefix(BUILTIN_PREFIX) {
        let text = bundled(name).ok_or_else(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            Error::Validation(format!("no bundled config `{name}` (available: {})", names.join(", ")))
        })?;
        return parse_str(text);
    }
    parse_str(&std::fs::read_to_string(Path::new(path))?)
}

pub fn resolve(file: FileConfig) -> Result<RunConfig> {
    let FileConfig { plant, controller: c, baseline, constraints, reference_bounds, reference, disturbance, simulation, sweep, compare } =
        file;
    plant.validate()?;
    constraints.validate()?;
    for (name, v) in [
        ("reference_bounds.qd_bar", reference_bounds.qd_bar),
        ("reference_bounds.vd_bar", reference_bounds.vd_bar),
        ("reference_bounds.alpha3", reference_bounds.alpha3),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Validation(format!("{name} must be positive (got {v})")));
        }
    }
    let (e_q, e_v) = error_margins(&constraints, &reference_bounds)?;
    let amax = alpha_max(e_q, e_v);
    if !(c.alpha > 0.0) {
        return Err(Error::Validation(format!("controller.alpha must be positive (got {})", c.alpha)));
    }
    if c.alpha >= amax {
        return Err(Error::GainCondition(format!("alpha >= E_V/E_Q ({} >= {amax:.6})", c.alpha)));
    }
    let kappa_max = e_v - c.alpha * e_q;
    let kappa = match c.kappa {
        None => kappa_max,
        Some(k) if k > 0.0 && k <= kappa_max => k,
        Some(k) => {
            return Err(Error::Validation(format!(
                "controller.kappa must lie in (0, E_V - alpha E_Q = {kappa_max}] (got {k})"
            )))
        }
    };
    let bounds = plant.inertia_bounds()?;
    let m_bar = match c.m_bar {
        None => bounds.m_bar,
        Some(m) if m >= bounds.m2 => m,
        Some(m) => {
            return Err(Error::Validation(format!(
                "controller.m_bar = {m} is below the inertia bound m2 = {}",
                bounds.m2
            )))
        }
    };
    let controller = ControllerConfig {
        k1: c.k1.to_matrix::<2>("controller.k1")?,
        alpha: c.alpha,
        gamma: c.gamma.to_matrix::<N_PARAMS>("controller.gamma")?,
        theta_bar: c.theta_bar,
        tau_bar: constraints.tau_bar,
        kappa,
        m_bar,
        proj_eps: c.proj_eps,
    };
    let baseline_gamma = baseline.gamma.to_matrix::<N_PARAMS>("baseline.gamma")?;
    if baseline_gamma.symmetric_eigenvalues().min() <= 0.0 || baseline_gamma != baseline_gamma.transpose() {
        return Err(Error::Validation("baseline.gamma must be symmetric positive definite".into()));
    }
    let sim = SimConfig {
        plant,
        controller,
        baseline_gamma,
        constraints,
        reference_bounds,
        reference,
        disturbance,
        t_end: simulation.t_end,
        dt: simulation.dt,
        decimation: simulation.decimation,
        initial_state: simulation
            .initial_state
            .map(|s| JointState::new(Vec2::from(s.q), Vec2::from(s.dq))),
        theta_hat0: ParamVector::from(simulation.theta_hat0),
        assumption_gate: simulation.assumption_gate,
        control_mode: simulation.control_mode,
    };
    sim.validate()?;
    if let Some(s) = &sweep {
        let (a1, a2) = s.ranges();
        a1.validate()?;
        a2.validate()?;
    }
    let compare_disturbance = compare.disturbance.unwrap_or_else(|| DisturbanceProfile::persistent(constraints.d_bar));
    compare_disturbance.validate()?;
    Ok(RunConfig { sim, sweep, compare_disturbance })
}

impl RunConfig {
    /// Fully explicit file form of this configuration.
    pub fn snapshot(&self) -> FileConfig {
        let s = &self.sim;
        let c = &s.controller;
        let init = s.initial_joint_state();
        FileConfig {
            plant: s.plant,
            controller: ControllerSection {
                k1: GainSpec::from_matrix(&c.k1),
                alpha: c.alpha,
                gamma: GainSpec::from_matrix(&c.gamma),
                theta_bar: c.theta_bar,
                kappa: Some(c.kappa),
                m_bar: Some(c.m_bar),
                proj_eps: c.proj_eps,
            },
            baseline: BaselineSection { gamma: GainSpec::from_matrix(&s.baseline_gamma) },
            constraints: s.constraints,
            reference_bounds: s.reference_bounds,
            reference: s.reference.clone(),
            disturbance: s.disturbance.clone(),
            simulation: SimulationSection {
                t_end: s.t_end,
                dt: s.dt,
                decimation: s.decimation,
                initial_state: Some(InitialState { q: [init.q[0], init.q[1]], dq: [init.dq[0], init.dq[1]] }),
                theta_hat0: s.theta_hat0.into(),
                assumption_gate: s.assumption_gate,
                control_mode: s.control_mode,
            },
            sweep: self.sweep.map(|sw| {
                let (a1, a2) = sw.ranges();
                SweepSection { case: sw.case, axis1: Some(a1), axis2: Some(a2) }
            }),
            compare: CompareSection { disturbance: Some(self.compare_disturbance.clone()) },
        }
    }

    pub fn snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.snapshot())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Mat2, ParamMatrix};

    fn defaults() -> RunConfig {
        load("builtin:arm_defaults").unwrap()
    }

    #[test]
    fn bundled_defaults_match_reference_example() {
        let cfg = defaults();
        let c = &cfg.sim.controller;
        assert_eq!(c.gamma, ParamMatrix::identity() * 10.0);
        assert_eq!(c.k1, Mat2::new(1.5, 0.0, 0.0, 1.0));
        assert_eq!(c.theta_bar, 6.2);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.tau_bar, 30.0);
        assert_eq!(cfg.sim.constraints, ConstraintSpec { q_bar: 2.5, v_bar: 1.0, tau_bar: 30.0, d_bar: 5.0 });
        assert!((c.kappa - 0.043).abs() < 1e-12);
        assert!((c.m_bar - 1.01 * cfg.sim.plant.inertia_bounds().unwrap().m2).abs() < 1e-12);
        assert_eq!(cfg.sim.baseline_gamma, ParamMatrix::identity() * 20.0);
        assert_eq!(cfg.sim.dt, 1e-3);
        assert_eq!(cfg.sim.t_end, 300.0);
        assert_eq!(cfg.sim.decimation, 10);
    }

    #[test]
    fn every_bundled_config_parses() {
        for (name, _) in BUNDLED {
            load(&format!("builtin:{name}")).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> Result<RunConfig> {
        let mut v: serde_json::Value = serde_json::from_str(bundled("arm_defaults").unwrap()).unwrap();
        f(&mut v);
        parse_str(&v.to_string())
    }

    #[test]
    fn alpha_above_limit_is_rejected() {
        let err = edit(|v| v["controller"]["alpha"] = 0.6.into()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::GainCondition(_)), "{msg}");
        assert!(msg.contains("alpha >= E_V/E_Q"), "{msg}");
        assert!(msg.contains("0.586"), "{msg}");
    }

    #[test]
    fn empty_file_is_a_schema_error() {
        assert!(matches!(parse_str(""), Err(Error::Schema { .. })));
    }

    #[test]
    fn unknown_key_reports_its_path() {
        match edit(|v| v["controller"]["gain"] = 1.0.into()) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "controller.gain");
                assert!(message.contains("gain"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match edit(|v| v["simulation"]["dt"] = "fast".into()) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "simulation.dt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gain_matrix_shape_is_checked() {
        let err = edit(|v| v["controller"]["k1"] = serde_json::json!([[1.0, 0.0]])).unwrap_err();
        assert!(err.to_string().contains("controller.k1"));
    }

    #[test]
    fn kappa_override_must_not_exceed_margin() {
        assert!(edit(|v| v["controller"]["kappa"] = 0.04.into()).is_ok());
        assert!(edit(|v| v["controller"]["kappa"] = 0.05.into()).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        for (name, _) in BUNDLED {
            let cfg = load(&format!("builtin:{name}")).unwrap();
            let again = parse_str(&cfg.snapshot_json().unwrap()).unwrap();
            let mut expected = cfg.clone();
            expected.sim.initial_state = Some(cfg.sim.initial_joint_state());
            if let Some(s) = expected.sweep.as_mut() {
                let (a1, a2) = s.ranges();
                s.axis1 = Some(a1);
                s.axis2 = Some(a2);
            }
            assert_eq!(again, expected, "{name}");
            assert_eq!(again.snapshot_json().unwrap(), cfg.snapshot_json().unwrap());
        }
    }

    #[test]
    fn unknown_builtin_lists_available() {
        let msg = load("builtin:nope").unwrap_err().to_string();
        assert!(msg.contains("arm_defaults"));
    }
}
