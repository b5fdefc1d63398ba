use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::{Failure, Invocation};

/// Constrained adaptive tracking control: feasibility checks, closed-loop
/// simulation, region sweeps and controller comparison.
#[derive(Debug, Parser)]
#[command(name = "elctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the standing assumptions and the input feasibility condition.
    Check {
        #[command(flatten)]
        common: Common,
        /// Also print the published reference values next to the computed ones.
        #[arg(long)]
        published_values: bool,
    },
    /// Run one closed-loop simulation and write trajectory.csv and metrics.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed", value_parser = ["proposed", "baseline"])]
        controller: String,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Sweep two constraint bounds and write the feasibility region to region.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Which pair of bounds to vary. Defaults to the config's sweep section, else q-v.
        #[arg(long, value_parser = ["tau-q", "tau-v", "q-v"])]
        case: Option<String>,
        /// Axis ranges as `a0:a1:n,b0:b1:n`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run the proposed and baseline controllers side by side and write compare.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Re-run the command recorded in a manifest.json.
    Replay {
        manifest: PathBuf,
        /// Output directory (overridden by ELCTL_OUT; defaults to the recorded one)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Config file, or `builtin:<name>` for a bundled one.
    #[arg(long)]
    config: String,
    /// Output directory (overridden by ELCTL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Run even if assumption checks fail (requires assumption_gate = warn).
    #[arg(long)]
    force: bool,
    /// Hold the applied input constant over each integration step.
    #[arg(long)]
    zoh: bool,
}

fn output_dir(flag: Option<PathBuf>, fallback: PathBuf) -> PathBuf {
    match std::env::var_os("ELCTL_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.unwrap_or(fallback),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let default_out = PathBuf::from("out");
    match cli.command {
        Command::Check { common, published_values } => commands::check(&common.config, published_values),
        Command::Simulate { common, controller, run } => {
            let inv = Invocation::new("simulate", &common.config, output_dir(common.out, default_out), run.zoh)?
                .controller(controller)
                .force(run.force);
            commands::execute(&inv)
        }
        Command::Sweep { common, case, grid } => {
            let mut inv = Invocation::new("sweep", &common.config, output_dir(common.out, default_out), false)?;
            inv.options.case = case;
            inv.options.grid = grid;
            commands::execute(&inv)
        }
        Command::Compare { common, run } => {
            let inv = Invocation::new("compare", &common.config, output_dir(common.out, default_out), run.zoh)?
                .force(run.force);
            commands::execute(&inv)
        }
        Command::Replay { manifest, out } => {
            let inv = Invocation::from_manifest(&manifest, |recorded| output_dir(out, recorded))?;
            commands::execute(&inv)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
