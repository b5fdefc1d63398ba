use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use elc_core::config::{self, RunConfig};
use elc_core::feasibility::{self, check_c1, AxisRange, SweepCase};
use elc_core::output::{self, RunManifest, RunOptions};
use elc_core::simulation::{self, check_assumptions, AssumptionGate, ControlMode, ControllerKind, Metrics, SimConfig, SimOutcome};
use elc_core::Error;

/// Outcome classes of the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: assumptions or feasibility condition not met.
    Infeasible(String),
    /// Exit 2: unreadable, malformed or invalid input.
    Config(String),
    /// Exit 3: a constraint was breached while running.
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Infeasible(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Infeasible(m) | Failure::Config(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BarrierViolation { .. } | Error::NumericOverflow { .. } => Failure::Runtime(e.to_string()),
            Error::AssumptionGate(_) => Failure::Infeasible(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

/// A fully resolved command: what to run, on which config, into which directory.
pub struct Invocation {
    pub command: String,
    pub config_path: String,
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub options: RunOptions,
}

impl Invocation {
    pub fn new(command: &str, config_path: &str, out: PathBuf, zoh: bool) -> Result<Self, Failure> {
        let mut cfg = config::load(config_path).map_err(|e| Failure::Config(format!("{config_path}: {e}")))?;
        if zoh {
            cfg.sim.control_mode = ControlMode::Zoh;
        }
        Ok(Self { command: command.into(), config_path: config_path.into(), cfg, out, options: RunOptions::default() })
    }

    pub fn controller(mut self, c: String) -> Self {
        self.options.controller = Some(c);
        self
    }

    pub fn force(mut self, force: bool) -> Self {
        self.options.force = force;
        self
    }

    pub fn from_manifest(path: &Path, out: impl FnOnce(PathBuf) -> PathBuf) -> Result<Self, Failure> {
        let m = RunManifest::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let cfg = config::resolve(m.config).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            command: m.command,
            config_path: path.display().to_string(),
            cfg,
            out: out(m.output_dir),
            options: m.options,
        })
    }

    fn manifest(&self, artifacts: &[&str], started: Instant) -> Result<(), Failure> {
        let m = RunManifest {
            tool: "elctl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_path: self.config_path.clone(),
            output_dir: self.out.clone(),
            options: self.options.clone(),
            config: self.cfg.snapshot(),
            artifacts: artifacts.iter().map(|s| s.to_string()).chain([output::MANIFEST_FILE.to_string()]).collect(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        m.write(&self.out).map_err(|e| io_failure(&self.out, e))
    }

    fn prepare_out(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_failure(&self.out, e))
    }
}

pub fn execute(inv: &Invocation) -> Result<(), Failure> {
    match inv.command.as_str() {
        "simulate" => simulate(inv),
        "sweep" => sweep(inv),
        "compare" => compare(inv),
        other => Err(Failure::Config(format!("manifest names unknown command `{other}`"))),
    }
}

pub fn check(config_path: &str, published_values: bool) -> Result<(), Failure> {
    let cfg = config::load(config_path).map_err(|e| Failure::Config(format!("{config_path}: {e}")))?;
    let sim = &cfg.sim;
    let assumptions = check_assumptions(sim);
    let c1 = check_c1(&sim.constraints, &sim.reference_bounds, &sim.gains());
    println!("Assumptions\n{}\n", assumptions.to_string().trim_end());
    println!("Feasibility\n{c1}");
    if published_values {
        let alpha3 = assumptions.get("ref_accel_bound").map(|c| c.value).unwrap_or(f64::NAN);
        println!("\nPublished vs computed");
        println!("  {:<10} {:>12} {:>12} {:>10}", "quantity", "published", "computed", "rel.diff");
        for (name, p, c, rel) in feasibility::published_comparison(&c1, alpha3) {
            println!("  {name:<10} {p:>12.6} {c:>12.6} {:>9.2}%", 100.0 * rel);
        }
    }
    let mut reasons: Vec<String> = assumptions
        .failures()
        .map(|c| format!("{} ({}: {} vs {})", c.id, c.description, c.value, c.limit))
        .collect();
    for r in &c1.reasons {
        if !reasons.iter().any(|x| x.contains(r.as_str())) {
            reasons.push(r.clone());
        }
    }
    if reasons.is_empty() {
        Ok(())
    } else {
        Err(Failure::Infeasible(reasons.join("; ")))
    }
}

/// Applies the assumption gate: failing checks stop the run unless `--force`
/// is given and the config allows it.
fn gate(sim: &SimConfig, force: bool) -> Result<(), Failure> {
    let report = check_assumptions(sim);
    if report.passed() {
        return Ok(());
    }
    let failed: Vec<String> = report.failures().map(|c| format!("{} ({} vs {})", c.id, c.value, c.limit)).collect();
    if force && sim.assumption_gate == AssumptionGate::Warn {
        log::warn!("failed assumption checks ignored (--force): {}", failed.join(", "));
        return Ok(());
    }
    let hint = if sim.assumption_gate == AssumptionGate::Warn {
        "pass --force to run anyway"
    } else {
        "set simulation.assumption_gate = \"warn\" and pass --force to run anyway"
    };
    Err(Failure::Infeasible(format!("assumption checks failed: {}; {hint}", failed.join(", "))))
}

fn summary(label: &str, m: &Metrics) -> String {
    let v = m.violations;
    let flags: Vec<String> = v
        .entries()
        .iter()
        .filter_map(|(n, t)| t.map(|t| format!("{n}@{t}")))
        .collect();
    format!(
        "{label}: max|q| = {:.6}  max|dq| = {:.6}  max|tau| = {:.6}  max|u| = {:.6}  max|r| = {:.6}  violations: {}",
        m.max_q,
        m.max_dq,
        m.max_tau,
        m.max_u,
        m.max_r,
        if flags.is_empty() { "none".to_string() } else { flags.join(", ") }
    )
}

fn barrier_failure(label: &str, o: &SimOutcome) -> Option<Failure> {
    (o.kind == ControllerKind::Proposed)
        .then_some(o.barrier_violation)
        .flatten()
        .map(|t| Failure::Runtime(format!("{label}: barrier violation at t = {t}")))
}

fn simulate(inv: &Invocation) -> Result<(), Failure> {
    let started = Instant::now();
    let kind: ControllerKind = inv.options.controller.as_deref().unwrap_or("proposed").parse()?;
    let sim = &inv.cfg.sim;
    gate(sim, inv.options.force)?;
    inv.prepare_out()?;
    let outcome = simulation::run(sim, kind)?;
    let traj = inv.out.join(output::TRAJECTORY_FILE);
    output::write_trajectory(&traj, &outcome.log).map_err(|e| io_failure(&traj, e))?;
    let met = inv.out.join(output::METRICS_FILE);
    let label = inv.options.controller.as_deref().unwrap_or("proposed");
    output::write_metrics(&met, &[(label, &outcome.metrics)]).map_err(|e| io_failure(&met, e))?;
    inv.manifest(&[output::TRAJECTORY_FILE, output::METRICS_FILE], started)?;
    println!("{}", summary(label, &outcome.metrics));
    println!("wrote {} rows to {}", outcome.log.rows.len(), traj.display());
    match barrier_failure(label, &outcome) {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn parse_grid(s: &str) -> Result<(AxisRange, AxisRange), Failure> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Failure::Config(format!("malformed grid `{s}` (expected a0:a1:n,b0:b1:n)")));
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}

fn sweep(inv: &Invocation) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg_sweep = inv.cfg.sweep;
    let case: SweepCase = match (&inv.options.case, cfg_sweep) {
        (Some(c), _) => c.parse()?,
        (None, Some(s)) => s.case,
        (None, None) => SweepCase::QVsV,
    };
    let (r1, r2) = match (&inv.options.grid, cfg_sweep) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(s)) if s.case == case => s.ranges(),
        _ => case.default_ranges(),
    };
    let sim = &inv.cfg.sim;
    let grid = feasibility::sweep(case, &r1, &r2, &sim.constraints, &sim.reference_bounds, &sim.gains())?;
    inv.prepare_out()?;
    let path = inv.out.join(output::REGION_FILE);
    output::write_region(&path, &grid).map_err(|e| io_failure(&path, e))?;
    inv.manifest(&[output::REGION_FILE], started)?;
    let (n1, n2) = case.axis_names();
    let feasible = grid.feasible.iter().flatten().filter(|b| **b).count();
    println!(
        "{case}: {n1} x {n2} = {} x {} points, {feasible} feasible; wrote {}",
        grid.axis1.len(),
        grid.axis2.len(),
        path.display()
    );
    Ok(())
}

fn compare(inv: &Invocation) -> Result<(), Failure> {
    let started = Instant::now();
    let mut sim = inv.cfg.sim.clone();
    sim.disturbance = inv.cfg.compare_disturbance.clone();
    gate(&sim, inv.options.force)?;
    inv.prepare_out()?;
    let (proposed, baseline) = std::thread::scope(|s| {
        let p = s.spawn(|| simulation::run(&sim, ControllerKind::Proposed));
        let b = simulation::run(&sim, ControllerKind::Baseline);
        (p.join().expect("proposed run panicked"), b)
    });
    let (proposed, baseline) = (proposed?, baseline?);
    let runs = [("proposed", &proposed.metrics), ("baseline", &baseline.metrics)];
    let cmp = inv.out.join(output::COMPARE_FILE);
    output::write_compare(&cmp, &proposed.log, &baseline.log).map_err(|e| io_failure(&cmp, e))?;
    let sum = inv.out.join(output::COMPARE_SUMMARY_FILE);
    output::write_compare_summary(&sum, &runs).map_err(|e| io_failure(&sum, e))?;
    let met = inv.out.join(output::METRICS_FILE);
    output::write_metrics(&met, &runs).map_err(|e| io_failure(&met, e))?;
    inv.manifest(&[output::COMPARE_FILE, output::COMPARE_SUMMARY_FILE, output::METRICS_FILE], started)?;
    for (label, m) in runs {
        println!("{}", summary(label, m));
    }
    match barrier_failure("proposed", &proposed) {
        Some(f) => Err(f),
        None => Ok(()),
    }
}
