use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ksflow::cli::{check_invariants, run_solve, validate_linear, ExitStatus, SolveOptions};
use ksflow::config::{config_reference, Preset, RunConfig};
use ksflow::flow::{DtSchedule, Monitors};

#[derive(Parser)]
#[command(name = "ksflow", version, about = "Kohn-Sham ground states by an energy-stable gradient flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow and write traces, density and a summary.
    Solve(SolveArgs),
    /// Compare the flow with the dense eigensolver, Hartree term off.
    ValidateLinear {
        #[arg(long)]
        preset: String,
        /// Interior dof budget (dense solve, at most 5000).
        #[arg(long)]
        mesh_budget: Option<usize>,
        /// Start from random orthonormal orbitals with this seed instead of
        /// the preset's initial orbitals.
        #[arg(long)]
        random_start: Option<u64>,
    },
    /// Run the property batteries and print one line per check.
    CheckInvariants,
    /// Print every configuration key with its default.
    ConfigReference,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Fixed time step, overriding the configured schedule.
    #[arg(long)]
    dt: Option<f64>,
    /// Interior dof budget of the mesh.
    #[arg(long)]
    mesh_budget: Option<usize>,
    #[arg(long)]
    disable_hartree: bool,
    /// With --disable-hartree, add the dense oracle energy to the summary.
    #[arg(long)]
    validate: bool,
    /// Record the per-component descent and scheme residual monitors.
    #[arg(long)]
    monitors: bool,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn load_config(args: &SolveArgs) -> ksflow::Result<RunConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(name)) => RunConfig::preset(Preset::parse(name)?),
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    if let Some(dt) = args.dt {
        config.dt = DtSchedule::Fixed(dt);
    }
    if let Some(b) = args.mesh_budget {
        config.mesh_budget = b;
    }
    if args.disable_hartree {
        config.hartree = None;
    }
    if let Some(m) = args.max_steps {
        config.max_steps = m;
    }
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn solve(args: &SolveArgs) -> ksflow::Result<ExitStatus> {
    let config = load_config(args)?;
    let options = SolveOptions {
        validate: args.validate,
        monitors: Monitors {
            descent: args.monitors,
            scheme_residual: args.monitors,
        },
    };
    let outcome = run_solve(&config, options)?;
    let mut text = Vec::new();
    outcome.summary.write(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    for p in &outcome.artifacts {
        eprintln!("wrote {}", p.display());
    }
    Ok(outcome.status)
}

fn dispatch(cli: Cli) -> ksflow::Result<ExitStatus> {
    match cli.command {
        Command::Solve(args) => solve(&args),
        Command::ValidateLinear {
            preset,
            mesh_budget,
            random_start,
        } => {
            let report = validate_linear(Preset::parse(&preset)?, mesh_budget, random_start)?;
            println!("{report}");
            Ok(if report.passed() {
                ExitStatus::Success
            } else {
                ExitStatus::InvariantViolation
            })
        }
        Command::CheckInvariants => {
            let lines = check_invariants()?;
            for l in &lines {
                println!("{l}");
            }
            Ok(if lines.iter().all(|l| l.passed) {
                ExitStatus::Success
            } else {
                ExitStatus::InvariantViolation
            })
        }
        Command::ConfigReference => {
            print!("{}", config_reference());
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::Failure.code() as u8)
        }
    }
}
