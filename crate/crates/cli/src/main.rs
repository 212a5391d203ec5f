use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;
mod svg;

use commands::Failure;

/// Spectra, invariant foliations, normal forms and C¹ linearizing conjugacies for
/// hyperbolic fixed points of random maps.
#[derive(Parser, Debug)]
#[command(name = "smoothlin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Lyapunov exponents, multiplicities and block indices (CSV).
    Spectrum,
    /// Resonance and bunching report (JSON); exits 2 when resonant.
    Check,
    /// Stable and unstable leaves through sampled base points (CSV, SVG for d ≤ 3).
    Foliate,
    /// Second-order normal-form coefficients and mixed derivatives (CSV, JSON).
    Normalform,
    /// Stable frame recursion on sampled orbit starts (CSV).
    Frame,
    /// Conjugacy residual table and largest passing radius (CSV, JSON).
    Linearize,
    /// Full invariant suite; exits non-zero on any failure.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Check => "check",
            Command::Foliate => "foliate",
            Command::Normalform => "normalform",
            Command::Frame => "frame",
            Command::Linearize => "linearize",
            Command::Verify => "verify",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Options {
    /// System description file, or the name of a bundled catalog system.
    #[arg(long, global = true, default_value = "bump_3d")]
    pub system: String,
    /// Seed for sampled points.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Sampling radius (foliate 0.1, frame 0.05, linearize and verify ρ/4).
    #[arg(long, global = true, value_parser = positive_f64)]
    pub radius: Option<f64>,
    /// Lyapunov-Perron truncation horizon; checked against the tail bound.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(10..=100_000))]
    pub horizon: Option<u64>,
    /// Residual tolerance for pass/fail decisions.
    #[arg(long, global = true, default_value_t = 1e-6, value_parser = positive_f64)]
    pub tol: f64,
    /// Number of sampled points (default depends on the subcommand).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=1_000_000))]
    pub points: Option<u64>,
    /// Steps for the exponent estimate.
    #[arg(long, global = true, default_value_t = 3000, value_parser = clap::value_parser!(u64).range(1000..=10_000_000))]
    pub steps: u64,
    /// Fail at the requested radius instead of shrinking it.
    #[arg(long, global = true)]
    pub strict_radius: bool,
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=1024))]
    pub workers: Option<u64>,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a positive finite number".into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.opts.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("smoothlin [cli]: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command, &cli.opts) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            for p in &f.written {
                println!("wrote {}", p.display());
            }
            eprintln!("smoothlin [{}]: {}", f.module, f.message);
            ExitCode::from(f.code())
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        if self.precondition {
            2
        } else {
            1
        }
    }
}
