use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

mod commands;

#[derive(Parser, Debug, Clone)]
#[command(name = "nsbvp", version, about = "Spectral analysis and boundary value problems for non-selfadjoint boundary operators")]
pub struct Cli {
    /// Operator JSON file (overrides --example).
    #[arg(long, global = true)]
    pub op: Option<PathBuf>,
    /// Built-in operator: nondiag, tilted-dirac, dirac, rarita-schwinger.
    #[arg(long, global = true, default_value = "tilted-dirac")]
    pub example: String,
    /// Tilt parameter of the tilted Dirac operator.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub alpha: f64,
    /// Fourier cutoff N.
    #[arg(long, global = true, default_value_t = 16)]
    pub modes: usize,
    /// Spectral cut r, or "auto" for the gap closest to 0.
    #[arg(long, global = true, default_value = "auto", allow_hyphen_values = true)]
    pub cut: String,
    /// Second cut r'.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub cut2: Option<f64>,
    /// Cylinder length.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Number of time steps.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Rank tolerance factor (multiple of machine epsilon times the norm).
    #[arg(long, global = true, default_value_t = 64.0)]
    pub tol_rank: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, serde::Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Eigenvalues with multiplicities and the bisector angle of the symbol.
    Spectrum,
    /// Spectral projectors: ranks, contour vs invariant-subspace deviation, adjoint consistency.
    Projector,
    /// Check-space norms at --cut and --cut2.
    Checkspace {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Fredholm-pair and elliptic decomposition of a boundary condition.
    BcCheck {
        #[arg(long)]
        bc: PathBuf,
    },
    /// Solve a problem on the finite cylinder.
    Solve {
        #[arg(long)]
        problem: PathBuf,
    },
    /// Index on the cylinder with conditions at --cut (left) and --cut2 (right).
    Index,
    /// Regenerate golden spectrum tables of a built-in example.
    Example { name: String },
}

fn exit_code(e: &nsbvp::Error) -> u8 {
    match e {
        e if e.is_ambiguity() => 3,
        nsbvp::Error::Io(_) => 4,
        nsbvp::Error::Invalid(_)
        | nsbvp::Error::DimensionMismatch { .. }
        | nsbvp::Error::CutHitsSpectrum { .. }
        | nsbvp::Error::BandwidthExceeded { .. }
        | nsbvp::Error::NoGapInWindow { .. }
        | nsbvp::Error::PreconditionViolated(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &nsbvp::Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    if cli.threads > 0 {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::run(&cli) {
        Ok(report) => {
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": error_kind(&e), "message": e.to_string()}));
            ExitCode::from(exit_code(&e))
        }
    }
}
