//! CSV and manifest emission.
//!
//! Numbers are written in shortest round-trip form, so parsing a cell gives
//! back the exact `f64` that was logged. Missing values (no violation, an
//! infeasible boundary) are empty cells. Files use LF line endings.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::FileConfig;
use crate::feasibility::FeasibilityGrid;
use crate::simulation::{Metrics, SimLog, SimRow};
use crate::Result;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REGION_FILE: &str = "region.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_SUMMARY_FILE: &str = "compare_summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const TRAJECTORY_HEADER: &[&str] = &[
    "t", "q1", "q2", "dq1", "dq2", "qd1", "qd2", "dqd1", "dqd2", "e1", "e2", "de1", "de2", "r1", "r2",
    "theta_hat1", "theta_hat2", "theta_hat3", "theta_hat4", "theta_hat5", "u1", "u2", "tau1", "tau2",
    "delta_tau1", "delta_tau2", "d1", "d2", "v1", "v", "norm_q", "norm_dq", "norm_e", "norm_de", "norm_r",
    "norm_u", "norm_tau", "norm_d", "norm_theta_hat",
];

pub const REGION_HEADER: &[&str] = &["axis1", "axis2", "feasible", "boundary_value"];

pub const COMPARE_SUMMARY_HEADER: &[&str] = &["controller", "constraint", "violated", "first_violation_t"];

/// Per-controller columns of `compare.csv`, prefixed `proposed_` / `baseline_`.
pub const COMPARE_SIGNALS: &[&str] =
    &["e1", "e2", "de1", "de2", "tau1", "tau2", "u1", "u2", "norm_q", "norm_dq", "norm_e", "norm_de", "norm_r", "norm_tau", "norm_u"];

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn trajectory_record(row: &SimRow) -> Vec<String> {
    let mut v: Vec<f64> = vec![row.t];
    for x in [row.q, row.dq, row.q_d, row.dq_d, row.e, row.de, row.r] {
        v.extend_from_slice(x.as_slice());
    }
    v.extend_from_slice(row.theta_hat.as_slice());
    for x in [row.u, row.tau, row.delta_tau, row.d] {
        v.extend_from_slice(x.as_slice());
    }
    v.extend([
        row.v1,
        row.v,
        row.q.norm(),
        row.dq.norm(),
        row.e.norm(),
        row.de.norm(),
        row.r.norm(),
        row.u.norm(),
        row.tau.norm(),
        row.d.norm(),
        row.theta_hat.norm(),
    ]);
    v.into_iter().map(fmt_num).collect()
}

pub fn write_trajectory(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for row in &log.rows {
        w.write_record(trajectory_record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "controller", "samples", "max_q", "max_dq", "max_tau", "max_u", "max_e", "max_de", "max_r", "max_d",
        "max_theta_hat", "rms_e", "rms_de",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (name, _) in crate::simulation::Violations::default().entries() {
        h.push(format!("{name}_violated"));
        h.push(format!("{name}_first_t"));
    }
    h
}

fn metrics_record(label: &str, m: &Metrics) -> Vec<String> {
    let mut v = vec![label.to_string(), m.samples.to_string()];
    v.extend(
        [m.max_q, m.max_dq, m.max_tau, m.max_u, m.max_e, m.max_de, m.max_r, m.max_d, m.max_theta_hat, m.rms_e, m.rms_de]
            .into_iter()
            .map(fmt_num),
    );
    for (_, t) in m.violations.entries() {
        v.push(if t.is_some() { "1" } else { "0" }.to_string());
        v.push(fmt_opt(t));
    }
    v
}

/// One row per labelled run.
pub fn write_metrics(path: &Path, runs: &[(&str, &Metrics)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(metrics_header())?;
    for (label, m) in runs {
        w.write_record(metrics_record(label, m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_region(path: &Path, grid: &FeasibilityGrid) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REGION_HEADER)?;
    for (a1, a2, ok, b) in grid.rows() {
        w.write_record([fmt_num(a1), fmt_num(a2), if ok { "1" } else { "0" }.to_string(), fmt_num(b)])?;
    }
    w.flush()?;
    Ok(())
}

fn compare_cells(row: Option<&SimRow>) -> Vec<String> {
    match row {
        None => vec![String::new(); COMPARE_SIGNALS.len()],
        Some(r) => [
            r.e[0],
            r.e[1],
            r.de[0],
            r.de[1],
            r.tau[0],
            r.tau[1],
            r.u[0],
            r.u[1],
            r.q.norm(),
            r.dq.norm(),
            r.e.norm(),
            r.de.norm(),
            r.r.norm(),
            r.tau.norm(),
            r.u.norm(),
        ]
        .into_iter()
        .map(fmt_num)
        .collect(),
    }
}

/// Both runs on one timeline. A run that stopped early leaves its cells empty
/// for the remaining rows. Rows are aligned by index; both logs share `dt`
/// and decimation, so equal indices are equal times.
pub fn write_compare(path: &Path, proposed: &SimLog, baseline: &SimLog) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string(), "d1".to_string(), "d2".to_string()];
    for prefix in ["proposed", "baseline"] {
        header.extend(COMPARE_SIGNALS.iter().map(|s| format!("{prefix}_{s}")));
    }
    w.write_record(&header)?;
    let n = proposed.rows.len().max(baseline.rows.len());
    for k in 0..n {
        let (p, b) = (proposed.rows.get(k), baseline.rows.get(k));
        let lead = p.or(b).expect("row exists in at least one log");
        let mut rec = vec![fmt_num(lead.t), fmt_num(lead.d[0]), fmt_num(lead.d[1])];
        rec.extend(compare_cells(p));
        rec.extend(compare_cells(b));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Violation flags and first-violation times, one row per controller and
/// constraint.
pub fn write_compare_summary(path: &Path, runs: &[(&str, &Metrics)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(COMPARE_SUMMARY_HEADER)?;
    for (label, m) in runs {
        for (name, t) in m.violations.entries() {
            w.write_record([label.to_string(), name.to_string(), if t.is_some() { "1" } else { "0" }.to_string(), fmt_opt(t)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Command-line options that, together with the config snapshot, determine a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    pub output_dir: PathBuf,
    pub options: RunOptions,
    /// Resolved configuration; re-running from it reproduces the artifacts.
    pub config: FileConfig,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| crate::Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::SweepCase;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 27.056_3, 1e-20, -4.5e300, 0.0, 6.353_109_474_894_957] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_num(f64::NAN), "");
    }

    #[test]
    fn trajectory_row_width_matches_header() {
        let row = SimRow {
            t: 0.0,
            q: Default::default(),
            dq: Default::default(),
            q_d: Default::default(),
            dq_d: Default::default(),
            e: Default::default(),
            de: Default::default(),
            r: Default::default(),
            theta_hat: Default::default(),
            u: Default::default(),
            tau: Default::default(),
            delta_tau: Default::default(),
            d: Default::default(),
            v1: 0.0,
            v: 0.0,
        };
        assert_eq!(trajectory_record(&row).len(), TRAJECTORY_HEADER.len());
        assert_eq!(compare_cells(Some(&row)).len(), COMPARE_SIGNALS.len());
    }

    #[test]
    fn region_file_layout() {
        let grid = FeasibilityGrid {
            case: SweepCase::QVsV,
            axis1: vec![1.0, 2.0],
            axis2: vec![3.0, 4.0],
            feasible: vec![vec![false, true], vec![true, true]],
            boundary: vec![3.5, f64::NAN],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(REGION_FILE);
        write_region(&p, &grid).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "axis1,axis2,feasible,boundary_value\n1.0,3.0,0,3.5\n1.0,4.0,1,3.5\n2.0,3.0,1,\n2.0,4.0,1,\n"
        );
    }
}
