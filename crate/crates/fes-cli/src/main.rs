//! `fes`: verification reports for finite element systems of differential
//! forms on bundled or user-supplied meshes.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fes", version, about = "Finite element systems: compatibility, cohomology, mirrors, eigenvalues and smoothing")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OrderArgs {
    /// Constant polynomial order.
    #[arg(long, conflicts_with = "orders")]
    pub order: Option<usize>,
    /// JSON file `{"default": p, "per_cell": {"id": p}}`.
    #[arg(long)]
    pub orders: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorKind {
    Canonical,
    L2,
    Harmonic,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extension and exactness verdicts of the trimmed system.
    Check {
        mesh: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
    },
    /// Cochain and discrete Betti numbers.
    Betti {
        mesh: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
    },
    /// Global basis and DOF table.
    Basis {
        mesh: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
        /// Form degree (default: all).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "canonical")]
        mirrors: MirrorKind,
    },
    /// Dual complex and its canonical harmonic basis.
    Dual {
        mesh: PathBuf,
        /// Also write the dual mesh file here.
        #[arg(long)]
        mesh_out: Option<PathBuf>,
    },
    /// Eigenvalues of d*d as CSV.
    Eig {
        mesh: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, default_value_t = 6)]
        count: usize,
    },
    /// Mirror faithfulness, commutation and the commuting diagram.
    InterpTest {
        mesh: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
        #[arg(long, value_enum, default_value = "canonical")]
        mirrors: MirrorKind,
        /// Degree of the random polynomial samples (default: order + 1).
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, default_value_t = 3)]
        samples: usize,
        /// Upwind covector, e.g. "2,-1".
        #[arg(long, value_parser = parse_alpha, allow_hyphen_values = true)]
        weight_alpha: Option<Alpha>,
    },
    /// Transfer theorems for the tensor product of two systems.
    TensorCheck {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        orders: OrderArgs,
    },
    /// Kernel moments, polynomial reproduction, commutation and locality.
    SmoothTest {
        /// Mesh for the scale field (default: unit box with a smooth field).
        mesh: Option<PathBuf>,
        /// Preserved polynomial degree.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Space dimension when no mesh is given.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Interior sample points for the reproduction check.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

/// Comma-separated covector.
#[derive(Debug, Clone)]
pub struct Alpha(pub Vec<f64>);

fn parse_alpha(s: &str) -> Result<Alpha, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad component {x:?}: {e}"))).collect::<Result<_, _>>().map(Alpha)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli.command) {
        Ok(outcome) => {
            if let Some(path) = &cli.out {
                if let Err(e) = std::fs::write(path, &outcome.body) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            } else {
                print!("{}", outcome.body);
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            match outcome.verdict {
                Ok(()) => ExitCode::SUCCESS,
                Err(msg) => {
                    eprintln!("failed: {msg}");
                    ExitCode::from(1)
                }
            }
        }
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Domain(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(1)
        }
    }
}
