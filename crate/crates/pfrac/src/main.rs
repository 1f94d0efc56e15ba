use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfrac::commands::{cmd_calibrate, cmd_convergence, cmd_mesh_info, cmd_run, CliError};
use pfrac::core::materials::{DEFAULT_BETA, DEFAULT_E0, DEFAULT_GC0};

/// Quasi-static phase-field brittle fracture on tetrahedral meshes.
#[derive(Parser)]
#[command(name = "pfrac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a load program from a TOML configuration.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run a scenario at several refinements and report relative errors.
    Convergence {
        #[arg(short, long)]
        config: PathBuf,
        /// Refinement levels, coarse to fine; the last is the reference.
        #[arg(short, long, value_delimiter = ',', required = true)]
        refinements: Vec<usize>,
    },
    /// Fracture toughness and length scale for a bone modulus.
    Calibrate {
        /// Young's modulus (MPa).
        #[arg(long = "E")]
        e: f64,
        /// Failure stress (MPa).
        #[arg(long)]
        sigma_max: f64,
        #[arg(long = "E0", default_value_t = DEFAULT_E0)]
        e0: f64,
        #[arg(long = "Gc0", default_value_t = DEFAULT_GC0)]
        gc0: f64,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
    },
    /// Print counts, volume and tags of an MSH file.
    MeshInfo { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = std::io::stdout().lock();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config } => cmd_run(&config, &mut out).map(|_| ()),
        Command::Convergence { config, refinements } => cmd_convergence(&config, &refinements, &mut out).map(|_| ()),
        Command::Calibrate {
            e,
            sigma_max,
            e0,
            gc0,
            beta,
        } => cmd_calibrate(e, sigma_max, e0, gc0, beta, &mut out).map(|_| ()),
        Command::MeshInfo { path } => cmd_mesh_info(&path, &mut out).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
