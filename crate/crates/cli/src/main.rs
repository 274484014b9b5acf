use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use relucert_core::{Error, NormOrder};

mod commands;

/// Certified lower bounds on the minimum adversarial distortion of ReLU networks.
#[derive(Debug, Parser)]
#[command(name = "relucert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify one input with one or more methods.
    Verify(VerifyArgs),
    /// Run every method plus the reference oracles and tabulate the gaps.
    Compare(VerifyArgs),
    /// Time certification on random networks of the given shapes.
    Bench(BenchArgs),
    /// Write a seeded random network (and optionally an input) to disk.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    FastLin,
    FastLip,
    OpNorm,
    AppendixE,
    All,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Norm of the perturbation: 1, 2 or inf.
    #[arg(long = "p", default_value = "inf")]
    p: NormOrder,
    /// Starting radius of the bracket search.
    #[arg(long, default_value_t = 0.05)]
    eps0: f64,
    /// Maximum bisection steps.
    #[arg(long, default_value_t = 15)]
    max_iter: usize,
    /// Relative bracket width at which bisection stops early.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Worker threads for per-target parallelism.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed for random target selection and the oracles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodArg,
    /// runner-up, random, least, or a class index.
    #[arg(long, default_value = "runner-up")]
    target: String,
    /// Certify against every other class and report the minimum.
    #[arg(long)]
    untargeted: bool,
    /// Clamp the ball to a per-coordinate box LO,HI (p = inf only).
    #[arg(long, value_name = "LO,HI", value_parser = parse_domain)]
    domain: Option<(f64, f64)>,
    #[command(flatten)]
    search: SearchArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Semicolon-separated layer widths, e.g. "784,1024,10;784,1024,1024,10".
    #[arg(long, default_value = "784,1024,1024,10")]
    shapes: String,
    #[arg(long, value_enum, default_value = "fast-lin")]
    method: MethodArg,
    /// Timed runs per shape and thread count.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Certify against every other class (needed for a thread speedup).
    #[arg(long)]
    untargeted: bool,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Comma-separated layer widths, input first.
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write a random input vector (entries in [0, 1]) here.
    #[arg(long)]
    input_out: Option<PathBuf>,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|e| format!("bad lower end: {e}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|e| format!("bad upper end: {e}"))?;
    Ok((lo, hi))
}

fn parse_dims(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|d| {
            d.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad layer width '{d}'")))
        })
        .collect()
}

/// Exit statuses: 0 success, 1 usage, 2 input, 3 numeric failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) => 1,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Schema { .. }
        | Error::DimensionMismatch { .. }
        | Error::Shape { .. } => 2,
        Error::Numeric { .. } | Error::InvalidState(_) | Error::Capacity { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Verify(a) => commands::verify(&a, false),
        Command::Compare(a) => commands::verify(&a, true),
        Command::Bench(a) => commands::bench(&a),
        Command::Gen(a) => commands::gen(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
