//! `retrialq`: command-line front end for the retrial-queue analyses.
//!
//! Exit codes: 0 success, 1 I/O or failed verification, 2 invalid
//! parameters or usage, 3 model not ergodic, 4 numerical convergence
//! failure.

mod check;
mod manifest;
mod moments;
mod params;
mod sim;
mod solve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Core(retrialq::Error),
    Invalid(String),
    Io(String),
    /// A verification or comparison ran and did not pass.
    Failed(String),
}

impl From<retrialq::Error> for CliError {
    fn from(e: retrialq::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use retrialq::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::InvalidParams(_) | E::UnsupportedK(_) | E::UndefinedRho => 2,
                E::NotErgodic(_) => 3,
                E::TruncationLimit { .. } | E::SingularBlock { .. } | E::NoNullVector | E::CapExceeded { .. } => 4,
                _ => 1,
            },
            CliError::Invalid(_) => 2,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Invalid(_) => "invalid-params",
            CliError::Io(_) => "io",
            CliError::Failed(_) => "failed",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Invalid(m) | CliError::Io(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "retrialq",
    version,
    about = "Stationary analysis of multiserver retrial queues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct SolveFlags {
    /// Largest truncation level the adaptive solver may reach.
    #[arg(long, default_value_t = 1 << 20)]
    pub jmax: usize,
    /// Sup-norm change between successive truncations.
    #[arg(long, default_value_t = 1e-12)]
    pub eps: f64,
    /// Mass allowed on the last retained level.
    #[arg(long, default_value_t = 1e-16)]
    pub tail_eps: f64,
}

impl SolveFlags {
    pub fn options(&self) -> retrialq::SolverOptions {
        retrialq::SolverOptions {
            j_max: self.jmax,
            eps: self.eps,
            tail_eps: self.tail_eps,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the stationary distribution; writes distribution.csv,
    /// summary.json and manifest.json.
    Solve {
        paramfile: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the determinant, differential-system, Okubo, resolvent and
    /// bivariate consistency checks and print a JSON report.
    Check {
        paramfile: PathBuf,
        /// Write check.json and a manifest here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Debug: perturb V(z) before the determinant check.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Simulate the CTMC; writes simulation.csv, summary.json and
    /// manifest.json.
    Simulate {
        paramfile: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10_000_000)]
        events: u64,
        /// Largest orbit size with its own occupancy cell.
        #[arg(long, default_value_t = 400)]
        j_cap: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare two CSV outputs (distribution or simulation) cell by cell.
    Compare { first: PathBuf, second: PathBuf },
    /// Fit the geometric tail and compare it with the analytic singularity.
    Tail {
        paramfile: PathBuf,
        /// Fit window `lo:hi` in levels; defaults to the last third of the
        /// computed levels without the final tenth.
        #[arg(long)]
        window: Option<String>,
        /// Mass allowed on the last retained level.
        #[arg(long, default_value_t = 1e-200)]
        tail_eps: f64,
    },
    /// Factorial moments of a Markov-modulated infinite-server queue from a
    /// JSON phase file with matrices `a`, `b`, `c`.
    Moments {
        phasefile: PathBuf,
        #[arg(long, default_value_t = 3)]
        kmax: usize,
    },
    /// Solve over a one-parameter grid; writes sweep.csv and manifest.json.
    Sweep {
        paramfile: PathBuf,
        /// `key=lo:hi:n`; `rho` rescales lambda to hit the load factor.
        #[arg(long)]
        vary: String,
        /// Concurrent solves.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        flags: SolveFlags,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { paramfile, flags, out } => solve::cmd_solve(&paramfile, &flags, &out),
        Command::Check {
            paramfile,
            out,
            corrupt,
        } => check::cmd_check(&paramfile, out.as_deref(), corrupt),
        Command::Simulate {
            paramfile,
            seed,
            events,
            j_cap,
            out,
        } => sim::cmd_simulate(&paramfile, seed, events, j_cap, &out),
        Command::Compare { first, second } => sim::cmd_compare(&first, &second),
        Command::Tail {
            paramfile,
            window,
            tail_eps,
        } => solve::cmd_tail(&paramfile, window.as_deref(), tail_eps),
        Command::Moments { phasefile, kmax } => moments::cmd_moments(&phasefile, kmax),
        Command::Sweep {
            paramfile,
            vary,
            jobs,
            flags,
            out,
        } => solve::cmd_sweep(&paramfile, &vary, jobs, &flags, &out),
    }
}

pub fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
